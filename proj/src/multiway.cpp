#include "tensopt/multiway.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tensopt/errors.hpp"

namespace tensopt {

namespace {

struct ModeSplit {
  std::size_t left = 1;
  std::size_t mid = 1;
  std::size_t right = 1;
};

ModeSplit split_at(const Shape& shape, std::size_t mode) {
  ModeSplit s;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k < mode) s.left *= shape[k];
    if (k > mode) s.right *= shape[k];
  }
  s.mid = shape[mode];
  return s;
}

void check_mode(const Shape& shape, std::size_t mode) {
  if (mode >= shape.size()) {
    throw ArgumentError("mode " + std::to_string(mode) + " out of range for order-" +
                        std::to_string(shape.size()) + " tensor");
  }
}

}  // namespace

std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(num_elements(shape_), 0.0) {
  if (shape_.empty()) throw ArgumentError("tensor needs at least one mode");
  for (auto d : shape_) {
    if (d == 0) throw ArgumentError("tensor mode sizes must be positive");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : Tensor(std::move(shape)) {
  if (data.size() != data_.size()) {
    throw ArgumentError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape size " + std::to_string(data_.size()));
  }
  data_ = std::move(data);
}

Tensor Tensor::from_vector(Shape shape, const Vector& v) {
  return Tensor(std::move(shape), std::vector<double>(v.data(), v.data() + v.size()));
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ArgumentError("index order mismatch");
  std::size_t off = 0;
  std::size_t stride = 1;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    if (index[k] >= shape_[k]) throw ArgumentError("tensor index out of range");
    off += index[k] * stride;
    stride *= shape_[k];
  }
  return off;
}

double Tensor::operator()(std::initializer_list<std::size_t> index) const {
  return data_[offset({index.begin(), index.size()})];
}

double& Tensor::operator()(std::initializer_list<std::size_t> index) {
  return data_[offset({index.begin(), index.size()})];
}

Vector vec(const Tensor& x) { return x.flat(); }

Tensor reshape(const Vector& v, Shape shape) { return Tensor::from_vector(std::move(shape), v); }

Matrix mode_unfold(const Tensor& x, std::size_t mode) {
  check_mode(x.shape(), mode);
  const auto s = split_at(x.shape(), mode);
  Matrix out(s.mid, s.left * s.right);
  const auto data = x.data();
  for (std::size_t rt = 0; rt < s.right; ++rt) {
    for (std::size_t i = 0; i < s.mid; ++i) {
      for (std::size_t l = 0; l < s.left; ++l) {
        out(i, l + s.left * rt) = data[l + s.left * (i + s.mid * rt)];
      }
    }
  }
  return out;
}

Tensor mode_fold(const Matrix& unfolded, std::size_t mode, Shape shape) {
  check_mode(shape, mode);
  const auto s = split_at(shape, mode);
  if (static_cast<std::size_t>(unfolded.rows()) != s.mid ||
      static_cast<std::size_t>(unfolded.cols()) != s.left * s.right) {
    throw ArgumentError("unfolded matrix does not match target shape");
  }
  Tensor out(std::move(shape));
  auto data = out.data();
  for (std::size_t rt = 0; rt < s.right; ++rt) {
    for (std::size_t i = 0; i < s.mid; ++i) {
      for (std::size_t l = 0; l < s.left; ++l) {
        data[l + s.left * (i + s.mid * rt)] = unfolded(i, l + s.left * rt);
      }
    }
  }
  return out;
}

Tensor mode_product(const Tensor& x, const Matrix& a, std::size_t mode) {
  check_mode(x.shape(), mode);
  const auto s = split_at(x.shape(), mode);
  if (static_cast<std::size_t>(a.cols()) != s.mid) {
    throw ArgumentError("mode_product: matrix columns do not match mode size");
  }
  Shape out_shape = x.shape();
  out_shape[mode] = static_cast<std::size_t>(a.rows());
  Tensor out(out_shape);
  const auto j = static_cast<Eigen::Index>(a.rows());
  const auto left = static_cast<Eigen::Index>(s.left);
  const auto mid = static_cast<Eigen::Index>(s.mid);
  for (std::size_t rt = 0; rt < s.right; ++rt) {
    Eigen::Map<const Matrix> in_slice(x.data().data() + s.left * s.mid * rt, left, mid);
    Eigen::Map<Matrix> out_slice(out.data().data() + s.left * a.rows() * rt, left, j);
    out_slice.noalias() = in_slice * a.transpose();
  }
  return out;
}

double inner(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw ArgumentError("inner: shape mismatch");
  // Plain index order, so the result matches a sequential dot of vec(x), vec(y).
  const auto a = x.data();
  const auto b = y.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Tensor outer(std::span<const Vector> vs) {
  if (vs.empty()) throw ArgumentError("outer: need at least one vector");
  Shape shape;
  for (const auto& v : vs) {
    if (v.size() == 0) throw ArgumentError("outer: empty vector");
    shape.push_back(static_cast<std::size_t>(v.size()));
  }
  // vec(v_1 o ... o v_M) = (...(v_M (x) v_{M-1}) (x) ...) (x) v_1, built in
  // that association so the identity holds bit for bit.
  Vector acc = vs.back();
  for (std::size_t k = vs.size() - 1; k-- > 0;) {
    const Vector& v = vs[k];
    Vector next(acc.size() * v.size());
    for (Eigen::Index a = 0; a < acc.size(); ++a) {
      for (Eigen::Index i = 0; i < v.size(); ++i) next[a * v.size() + i] = acc[a] * v[i];
    }
    acc = std::move(next);
  }
  return Tensor::from_vector(std::move(shape), acc);
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ArgumentError("khatri_rao: column counts differ (" + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.cols()) + ")");
  }
  Matrix out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out.col(r).segment(i * b.rows(), b.rows()) = a(i, r) * b.col(r);
    }
  }
  return out;
}

Matrix khatri_rao(std::span<const Matrix> mats) {
  if (mats.empty()) throw ArgumentError("khatri_rao: empty operand list");
  Matrix acc = mats[0];
  for (std::size_t k = 1; k < mats.size(); ++k) acc = khatri_rao(acc, mats[k]);
  return acc;
}

Matrix kronecker(std::span<const Matrix> mats) {
  if (mats.empty()) throw ArgumentError("kronecker: empty operand list");
  Matrix acc = mats[0];
  for (std::size_t k = 1; k < mats.size(); ++k) acc = kronecker(acc, mats[k]);
  return acc;
}

EigenPair sym_eig(const Matrix& s, double tol) {
  if (s.rows() != s.cols()) throw ArgumentError("sym_eig: matrix is not square");
  const Eigen::Index n = s.rows();
  const double scale = std::max(1.0, s.norm());
  if (n > 0 && (s - s.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw ArgumentError("sym_eig: matrix is not symmetric within tolerance");
  }

  Matrix a = 0.5 * (s + s.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double threshold = 1e-12 * s.norm();
  constexpr int kMaxSweeps = 100;

  auto off_norm = [&]() {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i != j) acc += a(i, j) * a(i, j);
      }
    }
    return std::sqrt(acc);
  };

  int sweep = 0;
  for (; sweep < kMaxSweeps && off_norm() > threshold; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::hypot(t, 1.0);
        const double sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  if (off_norm() > threshold) {
    throw NumericalError("sym_eig: Jacobi iteration did not converge in 100 sweeps");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });

  EigenPair out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
    if (out.values[k] < -tol * scale) ++out.negative_count;
  }
  return out;
}

Vector ridge_solve(const Matrix& a, const Vector& y, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda)) {
    throw ArgumentError("ridge_solve: lambda must be finite and nonnegative");
  }
  if (a.rows() != y.size()) throw ArgumentError("ridge_solve: row count mismatch");
  Matrix gram = a.transpose() * a;
  gram.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw NumericalError(
        "ridge_solve: normal equations are singular; use a positive ridge parameter");
  }
  return llt.solve(a.transpose() * y);
}

Matrix thin_qr(const Matrix& a, Matrix* r) {
  if (a.rows() < a.cols()) throw ArgumentError("thin_qr: more columns than rows");
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  Matrix rr = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (rr(j, j) < 0.0) {
      q.col(j) = -q.col(j);
      rr.row(j) = -rr.row(j);
    }
  }
  if (r != nullptr) *r = std::move(rr);
  return q;
}

std::size_t numerical_rank(const Matrix& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > rel_tol * sv[0]) ++rank;
  }
  return rank;
}

}  // namespace tensopt
