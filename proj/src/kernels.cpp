#include "tensopt/kernels.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

#include "tensopt/errors.hpp"

namespace tensopt {

void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int thread_count() { return omp_get_max_threads(); }

int threads_from_env(int fallback) {
  const char* raw = std::getenv("TENSOPT_THREADS");
  if (raw == nullptr || *raw == '\0') return fallback;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v <= 0) return fallback;
  return static_cast<int>(v);
}

}  // namespace tensopt

namespace tensopt::kernels {

namespace {

using Index = Eigen::Index;

struct Split {
  Index left = 1;
  Index mid = 1;
  Index right = 1;
};

Split split_at(const Shape& shape, std::size_t mode) {
  Split s;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const auto d = static_cast<Index>(shape[k]);
    if (k < mode) s.left *= d;
    if (k > mode) s.right *= d;
  }
  s.mid = static_cast<Index>(shape[mode]);
  return s;
}

void check_design(const Matrix& design, const Shape& shape) {
  if (static_cast<std::size_t>(design.rows()) != num_elements(shape)) {
    throw ArgumentError("design rows (" + std::to_string(design.rows()) +
                        ") do not match covariate size " +
                        std::to_string(num_elements(shape)));
  }
}

std::size_t check_factors(const Shape& shape, std::span<const Matrix> factors) {
  if (factors.size() != shape.size()) throw ArgumentError("factor count does not match order");
  const auto rank = factors.front().cols();
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (static_cast<std::size_t>(factors[k].rows()) != shape[k] || factors[k].cols() != rank) {
      throw ArgumentError("factor " + std::to_string(k) + " does not conform to the shape");
    }
  }
  return static_cast<std::size_t>(rank);
}

// B_hi ⊙ ... ⊙ B_lo so that the lowest mode index runs fastest.
Matrix reversed_khatri_rao(std::span<const Matrix> factors, std::size_t lo, std::size_t hi,
                           Index rank) {
  if (lo >= hi) return Matrix::Ones(1, rank);
  Matrix acc = factors[hi - 1];
  for (std::size_t k = hi - 1; k-- > lo;) acc = khatri_rao(acc, factors[k]);
  return acc;
}

// out = in ×_mode a for one tensor held in raw column-major storage.
void apply_mode(const double* in, const Shape& shape, const Matrix& a, std::size_t mode,
                double* out) {
  const auto s = split_at(shape, mode);
  const Index j = a.rows();
  if (s.left == 1) {
    Eigen::Map<const Matrix> x(in, s.mid, s.right);
    Eigen::Map<Matrix> y(out, j, s.right);
    y.noalias() = a * x;
    return;
  }
  for (Index rt = 0; rt < s.right; ++rt) {
    Eigen::Map<const Matrix> x(in + s.left * s.mid * rt, s.left, s.mid);
    Eigen::Map<Matrix> y(out + s.left * j * rt, s.left, j);
    y.noalias() = x * a.transpose();
  }
}

}  // namespace

Matrix cp_features(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
                   Exec exec) {
  check_design(design, shape);
  const auto rank = static_cast<Index>(check_factors(shape, factors));
  const Matrix g = reversed_khatri_rao(factors, 0, factors.size(), rank);
  const Index n = design.cols();
  Matrix out(n, rank);
  constexpr Index kBlock = 64;
  const Index blocks = (n + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index b = 0; b < blocks; ++b) {
    const Index start = b * kBlock;
    const Index len = std::min(kBlock, n - start);
    out.middleRows(start, len).noalias() = design.middleCols(start, len).transpose() * g;
  }
  return out;
}

Matrix mttkrp(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
              std::size_t mode, Exec exec) {
  check_design(design, shape);
  if (mode >= shape.size()) throw ArgumentError("mttkrp: mode out of range");
  const auto rank = static_cast<Index>(check_factors(shape, factors));
  const auto s = split_at(shape, mode);
  const Matrix kl = reversed_khatri_rao(factors, 0, mode, rank);
  const Matrix kr = reversed_khatri_rao(factors, mode + 1, factors.size(), rank);
  const Index n = design.cols();
  Matrix out(n, s.mid * rank);

#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index i = 0; i < n; ++i) {
    const double* x = design.col(i).data();
    Matrix z(s.mid, rank);
    if (s.left == 1) {
      z.noalias() = Eigen::Map<const Matrix>(x, s.mid, s.right) * kr;
    } else if (s.right == 1) {
      z.noalias() = Eigen::Map<const Matrix>(x, s.left, s.mid).transpose() * kl;
    } else {
      z.setZero();
      Matrix partial(s.mid, rank);
      for (Index rt = 0; rt < s.right; ++rt) {
        Eigen::Map<const Matrix> slice(x + s.left * s.mid * rt, s.left, s.mid);
        partial.noalias() = slice.transpose() * kl;
        z += partial * kr.row(rt).asDiagonal();
      }
    }
    out.row(i) = Eigen::Map<const Vector>(z.data(), z.size()).transpose();
  }
  return out;
}

Matrix unfold_design(const Matrix& design, const Shape& shape, std::size_t mode) {
  check_design(design, shape);
  if (mode >= shape.size()) throw ArgumentError("unfold_design: mode out of range");
  const auto s = split_at(shape, mode);
  const Index n = design.cols();
  Matrix out(s.left * s.right, s.mid * n);
  for (Index i = 0; i < n; ++i) {
    const double* x = design.col(i).data();
    for (Index im = 0; im < s.mid; ++im) {
      double* dst = out.col(i + n * im).data();
      for (Index rt = 0; rt < s.right; ++rt) {
        const double* src = x + s.left * (im + s.mid * rt);
        std::copy(src, src + s.left, dst + s.left * rt);
      }
    }
  }
  return out;
}

Matrix mttkrp_unfolded(const Matrix& unfolded, const Shape& shape, std::span<const Matrix> factors,
                       std::size_t mode, Exec exec) {
  if (mode >= shape.size()) throw ArgumentError("mttkrp: mode out of range");
  const auto rank = static_cast<Index>(check_factors(shape, factors));
  const auto s = split_at(shape, mode);
  if (unfolded.rows() != s.left * s.right || unfolded.cols() % s.mid != 0) {
    throw ArgumentError("mttkrp_unfolded: layout does not match the shape");
  }
  const Index n = unfolded.cols() / s.mid;
  const Matrix kl = reversed_khatri_rao(factors, 0, mode, rank);
  const Matrix kr = reversed_khatri_rao(factors, mode + 1, factors.size(), rank);
  const Matrix k = khatri_rao(kr, kl);
  // Row i + n*i_m, column r of the product is Z_i(i_m, r).
  Matrix out(n, s.mid * rank);
  Eigen::Map<Matrix> p(out.data(), s.mid * n, rank);
  const Index rows = s.mid * n;
  constexpr Index kBlock = 256;
  const Index blocks = (rows + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index b = 0; b < blocks; ++b) {
    const Index start = b * kBlock;
    const Index len = std::min(kBlock, rows - start);
    p.middleRows(start, len).noalias() = unfolded.middleCols(start, len).transpose() * k;
  }
  return out;
}

Matrix multi_mode_product(const Matrix& design, const Shape& shape, std::span<const Matrix> mats,
                          std::size_t skip_mode, Exec exec) {
  check_design(design, shape);
  if (mats.size() != shape.size()) throw ArgumentError("multi_mode_product: matrix count");
  Shape out_shape = shape;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k == skip_mode) continue;
    if (static_cast<std::size_t>(mats[k].cols()) != shape[k]) {
      throw ArgumentError("multi_mode_product: matrix " + std::to_string(k) +
                          " does not conform to the shape");
    }
    out_shape[k] = static_cast<std::size_t>(mats[k].rows());
  }
  const Index n = design.cols();
  Matrix out(static_cast<Index>(num_elements(out_shape)), n);

  // Largest intermediate size, for the per-sample scratch buffers.
  std::size_t scratch = num_elements(shape);
  {
    Shape cur = shape;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      if (k == skip_mode) continue;
      cur[k] = out_shape[k];
      scratch = std::max(scratch, num_elements(cur));
    }
  }

  auto body = [&](Index i, std::vector<double>& buf_a, std::vector<double>& buf_b) {
    Shape cur = shape;
    const double* src = design.col(i).data();
    double* dst = buf_a.data();
    bool wrote = false;
    for (std::size_t k = 0; k < shape.size(); ++k) {
      if (k == skip_mode) continue;
      apply_mode(src, cur, mats[k], k, dst);
      cur[k] = out_shape[k];
      src = dst;
      dst = (dst == buf_a.data()) ? buf_b.data() : buf_a.data();
      wrote = true;
    }
    const auto len = static_cast<Index>(num_elements(out_shape));
    if (wrote) {
      out.col(i) = Eigen::Map<const Vector>(src, len);
    } else {
      out.col(i) = design.col(i);
    }
  };

  if (exec == Exec::parallel) {
#pragma omp parallel
    {
      std::vector<double> buf_a(scratch);
      std::vector<double> buf_b(scratch);
#pragma omp for schedule(static)
      for (Index i = 0; i < n; ++i) body(i, buf_a, buf_b);
    }
  } else {
    std::vector<double> buf_a(scratch);
    std::vector<double> buf_b(scratch);
    for (Index i = 0; i < n; ++i) body(i, buf_a, buf_b);
  }
  return out;
}

Matrix unfold_times(const Matrix& projected, const Shape& projected_shape, const Tensor& core,
                    std::size_t mode, Exec exec) {
  if (static_cast<std::size_t>(projected.rows()) != num_elements(projected_shape)) {
    throw ArgumentError("unfold_times: projected rows do not match shape");
  }
  if (core.order() != projected_shape.size()) throw ArgumentError("unfold_times: core order");
  for (std::size_t k = 0; k < core.order(); ++k) {
    if (k != mode && core.dim(k) != projected_shape[k]) {
      throw ArgumentError("unfold_times: core does not conform");
    }
  }
  const auto s = split_at(projected_shape, mode);
  const auto rank = static_cast<Index>(core.dim(mode));
  const Index n = projected.cols();
  Matrix out(n, s.mid * rank);
  const double* g = core.data().data();

#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Index i = 0; i < n; ++i) {
    const double* w = projected.col(i).data();
    Matrix z(s.mid, rank);
    if (s.left == 1) {
      z.noalias() = Eigen::Map<const Matrix>(w, s.mid, s.right) *
                    Eigen::Map<const Matrix>(g, rank, s.right).transpose();
    } else {
      z.setZero();
      for (Index rt = 0; rt < s.right; ++rt) {
        Eigen::Map<const Matrix> ws(w + s.left * s.mid * rt, s.left, s.mid);
        Eigen::Map<const Matrix> gs(g + s.left * rank * rt, s.left, rank);
        z.noalias() += ws.transpose() * gs;
      }
    }
    out.row(i) = Eigen::Map<const Vector>(z.data(), z.size()).transpose();
  }
  return out;
}

}  // namespace tensopt::kernels

namespace tensopt::reference {

namespace {

// Advances a column-major multi-index; returns false after the last entry.
bool next_index(std::vector<std::size_t>& idx, const Shape& shape) {
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (++idx[k] < shape[k]) return true;
    idx[k] = 0;
  }
  return false;
}

}  // namespace

Matrix cp_features(const Matrix& design, const Shape& shape, std::span<const Matrix> factors) {
  const auto rank = factors.front().cols();
  const auto n = design.cols();
  Matrix out(n, rank);
  for (Eigen::Index r = 0; r < rank; ++r) {
    std::vector<Vector> cols;
    for (const auto& f : factors) cols.emplace_back(f.col(r));
    const Tensor component = outer(cols);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t d = 0; d < component.size(); ++d) acc += component.data()[d] * design(d, i);
      out(i, r) = acc;
    }
  }
  (void)shape;
  return out;
}

Matrix mttkrp(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
              std::size_t mode) {
  const auto rank = factors.front().cols();
  const auto im = static_cast<Eigen::Index>(shape[mode]);
  Matrix out = Matrix::Zero(design.cols(), im * rank);
  for (Eigen::Index i = 0; i < design.cols(); ++i) {
    std::vector<std::size_t> idx(shape.size(), 0);
    std::size_t lin = 0;
    do {
      const double x = design(static_cast<Eigen::Index>(lin), i);
      for (Eigen::Index r = 0; r < rank; ++r) {
        double w = x;
        for (std::size_t k = 0; k < shape.size(); ++k) {
          if (k != mode) w *= factors[k](static_cast<Eigen::Index>(idx[k]), r);
        }
        out(i, static_cast<Eigen::Index>(idx[mode]) + im * r) += w;
      }
      ++lin;
    } while (next_index(idx, shape));
  }
  return out;
}

Matrix multi_mode_product(const Matrix& design, const Shape& shape,
                          std::span<const Matrix> mats, std::size_t skip_mode) {
  // vec(X ×_1 A_1 ... ×_M A_M) = (A_M ⊗ ... ⊗ A_1) vec(X)
  Matrix op;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    const Matrix a = (k == skip_mode)
                         ? Matrix(Matrix::Identity(static_cast<Eigen::Index>(shape[k]),
                                                   static_cast<Eigen::Index>(shape[k])))
                         : mats[k];
    op = (k == 0) ? a : kronecker(a, op);
  }
  return op * design;
}

}  // namespace tensopt::reference
