#include "tensopt/decomp.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tensopt/errors.hpp"
#include "tensopt/kernels.hpp"
#include "tensopt/random.hpp"

namespace tensopt {

namespace {

Matrix as_column(const Tensor& b) { return Matrix(b.flat()); }

bool all_finite(const CpFactors& f) {
  for (const auto& m : f.factors) {
    if (!m.allFinite()) return false;
  }
  return true;
}

// Pseudo-inverse of a symmetric PSD matrix; eigenvalues below
// 1e-12 * v_max are treated as zero.
Matrix psd_pinv(const Matrix& h) {
  const auto eig = sym_eig(h, 1e-8);
  const double vmax = eig.values.size() > 0 ? std::max(eig.values[0], 0.0) : 0.0;
  Vector inv = Vector::Zero(eig.values.size());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values[i] > 1e-12 * vmax) inv[i] = 1.0 / eig.values[i];
  }
  return eig.vectors * inv.asDiagonal() * eig.vectors.transpose();
}

// Leading `r` eigenvectors of a Gram matrix.
Matrix leading_vectors(const Matrix& gram, std::size_t r) {
  const auto eig = sym_eig(gram, 1e-8);
  return eig.vectors.leftCols(static_cast<Eigen::Index>(r));
}

bool has_converged(double prev, double cur, double tol, double floor) {
  return cur <= floor || (std::isfinite(prev) && (prev - cur) <= tol * prev);
}

struct CpRun {
  CpFactors factors;
  double objective = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

CpRun run_cp_als(const Tensor& b, std::size_t rank, const CpAlsOptions& opts,
                 std::size_t restart) {
  const auto& shape = b.shape();
  const auto r = static_cast<Eigen::Index>(rank);
  RandomStream stream(opts.seed, restart, "cp_als_init");
  CpRun run;
  for (auto d : shape) run.factors.factors.push_back(stream.normal_matrix(static_cast<Eigen::Index>(d), r));

  const Matrix bcol = as_column(b);
  const Vector bvec = b.flat();
  const double floor = 1e-28 * bvec.squaredNorm();
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 1; sweep <= opts.max_iter; ++sweep) {
    for (std::size_t m = 0; m < shape.size(); ++m) {
      Matrix h = Matrix::Ones(r, r);
      for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k != m) h.array() *= (run.factors.factors[k].transpose() * run.factors.factors[k]).array();
      }
      const Matrix z = kernels::mttkrp(bcol, shape, run.factors.factors, m, Exec::serial);
      const Matrix mk = Eigen::Map<const Matrix>(z.data(), static_cast<Eigen::Index>(shape[m]), r);
      run.factors.factors[m] = mk * psd_pinv(h);
    }
    if (!all_finite(run.factors)) {
      throw NumericalError("cp_als: non-finite factor entries in sweep " + std::to_string(sweep));
    }
    balance_columns(run.factors);
    const double obj = (bvec - cp_components(run.factors).rowwise().sum()).squaredNorm();
    if (!std::isfinite(obj)) {
      throw NumericalError("cp_als: non-finite objective in sweep " + std::to_string(sweep));
    }
    run.trace.push_back(obj);
    run.objective = obj;
    run.iterations = sweep;
    if (has_converged(prev, obj, opts.tol, floor)) {
      run.converged = true;
      break;
    }
    prev = obj;
  }
  return run;
}

}  // namespace

Shape CpFactors::shape() const {
  Shape s;
  for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.rows()));
  return s;
}

Shape TuckerFactors::shape() const {
  Shape s;
  for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.rows()));
  return s;
}

void validate(const CpFactors& f) {
  if (f.factors.empty()) throw ArgumentError("CP factors: need at least one mode");
  const auto r = f.factors.front().cols();
  if (r < 1) throw ArgumentError("CP factors: rank must be at least 1");
  for (std::size_t m = 0; m < f.factors.size(); ++m) {
    if (f.factors[m].cols() != r) {
      throw ArgumentError("CP factors: factor " + std::to_string(m) + " has " +
                          std::to_string(f.factors[m].cols()) + " columns, expected " +
                          std::to_string(r));
    }
    if (f.factors[m].rows() < 1) throw ArgumentError("CP factors: empty factor");
  }
}

void validate(const TuckerFactors& f) {
  if (f.factors.size() != f.core.order()) {
    throw ArgumentError("Tucker factors: factor count does not match core order");
  }
  for (std::size_t m = 0; m < f.factors.size(); ++m) {
    if (static_cast<std::size_t>(f.factors[m].cols()) != f.core.dim(m)) {
      throw ArgumentError("Tucker factors: factor " + std::to_string(m) +
                          " columns do not match core mode size");
    }
  }
}

Matrix cp_components(const CpFactors& f) {
  validate(f);
  Matrix acc = f.factors.back();
  for (std::size_t k = f.factors.size() - 1; k-- > 0;) acc = khatri_rao(acc, f.factors[k]);
  return acc;
}

Matrix tucker_basis(const TuckerFactors& f) {
  validate(f);
  Matrix acc = f.factors.back();
  for (std::size_t k = f.factors.size() - 1; k-- > 0;) acc = kronecker(acc, f.factors[k]);
  return acc;
}

Tensor cp_reconstruct(const CpFactors& f) {
  return Tensor::from_vector(f.shape(), cp_components(f).rowwise().sum());
}

Tensor tucker_reconstruct(const TuckerFactors& f) {
  validate(f);
  const Matrix out = kernels::multi_mode_product(as_column(f.core), f.core.shape(), f.factors,
                                                 f.factors.size(), Exec::serial);
  return Tensor::from_vector(f.shape(), out.col(0));
}

Vector coefficient_vec(const Coefficient& b) {
  return std::visit(
      [](const auto& f) -> Vector {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, CpFactors>) {
          return cp_reconstruct(f).flat();
        } else {
          return tucker_reconstruct(f).flat();
        }
      },
      b);
}

void balance_columns(CpFactors& f) {
  const auto order = static_cast<double>(f.factors.size());
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(f.rank()); ++r) {
    double log_mean = 0.0;
    bool zero = false;
    for (const auto& b : f.factors) {
      const double c = b.col(r).norm();
      if (c == 0.0) zero = true;
      else log_mean += std::log(c);
    }
    if (zero) {
      for (auto& b : f.factors) b.col(r).setZero();
      continue;
    }
    const double target = std::exp(log_mean / order);
    for (auto& b : f.factors) b.col(r) *= target / b.col(r).norm();
  }
}

ApproxResult<CpFactors> cp_als(const Tensor& b, std::size_t rank, const CpAlsOptions& opts) {
  if (rank < 1) throw ArgumentError("cp_als: rank must be at least 1");
  if (opts.max_iter < 1) throw ArgumentError("cp_als: max_iter must be at least 1");
  const std::size_t restarts = std::max<std::size_t>(opts.restarts, 1);

  CpRun best;
  for (std::size_t s = 0; s < restarts; ++s) {
    CpRun run = run_cp_als(b, rank, opts, s);
    if (run.objective < best.objective) best = std::move(run);
  }

  ApproxResult<CpFactors> out;
  out.delta = b.flat() - cp_components(best.factors).rowwise().sum();
  out.delta_norm_sq = out.delta.squaredNorm();
  out.approx = std::move(best.factors);
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.objective_trace = std::move(best.trace);
  return out;
}

ApproxResult<TuckerFactors> tucker_hooi(const Tensor& b, const Shape& ranks,
                                        const HooiOptions& opts) {
  const auto& shape = b.shape();
  if (ranks.size() != shape.size()) throw ArgumentError("tucker_hooi: rank count mismatch");
  for (std::size_t m = 0; m < shape.size(); ++m) {
    if (ranks[m] < 1 || ranks[m] > shape[m]) {
      throw ArgumentError("tucker_hooi: rank " + std::to_string(ranks[m]) + " for mode " +
                          std::to_string(m) + " outside [1, " + std::to_string(shape[m]) + "]");
    }
  }
  if (opts.max_iter < 1) throw ArgumentError("tucker_hooi: max_iter must be at least 1");

  const Matrix bcol = as_column(b);
  const Vector bvec = b.flat();
  const double floor = 1e-28 * bvec.squaredNorm();

  std::vector<Matrix> u(shape.size());
  for (std::size_t m = 0; m < shape.size(); ++m) {
    const Matrix x = mode_unfold(b, m);
    u[m] = leading_vectors(x * x.transpose(), ranks[m]);
  }

  auto transposed = [&]() {
    std::vector<Matrix> t;
    for (const auto& um : u) t.push_back(um.transpose());
    return t;
  };

  ApproxResult<TuckerFactors> out;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 1; sweep <= opts.max_iter; ++sweep) {
    for (std::size_t m = 0; m < shape.size(); ++m) {
      const auto ut = transposed();
      const Matrix y = kernels::multi_mode_product(bcol, shape, ut, m, Exec::serial);
      Shape yshape = ranks;
      yshape[m] = shape[m];
      const Matrix ym = mode_unfold(Tensor::from_vector(yshape, y.col(0)), m);
      u[m] = leading_vectors(ym * ym.transpose(), ranks[m]);
    }
    const Matrix core =
        kernels::multi_mode_product(bcol, shape, transposed(), shape.size(), Exec::serial);
    out.approx = TuckerFactors{Tensor::from_vector(ranks, core.col(0)), u};
    const double obj = (bvec - tucker_reconstruct(out.approx).flat()).squaredNorm();
    if (!std::isfinite(obj)) {
      throw NumericalError("tucker_hooi: non-finite objective in sweep " + std::to_string(sweep));
    }
    out.objective_trace.push_back(obj);
    out.iterations = sweep;
    if (has_converged(prev, obj, opts.tol, floor)) {
      out.converged = true;
      break;
    }
    prev = obj;
  }
  out.delta = bvec - tucker_reconstruct(out.approx).flat();
  out.delta_norm_sq = out.delta.squaredNorm();
  return out;
}

double residual_orthogonality_check(const Tensor& b, const CpFactors& f) {
  const Matrix g = cp_components(f);
  const Vector delta = b.flat() - g.rowwise().sum();
  return (g.transpose() * delta).cwiseAbs().maxCoeff();
}

double residual_orthogonality_check(const Tensor& b, const TuckerFactors& f) {
  const Vector delta = b.flat() - tucker_reconstruct(f).flat();
  std::vector<Matrix> ut;
  for (const auto& um : f.factors) ut.push_back(um.transpose());
  const Matrix proj = kernels::multi_mode_product(Matrix(delta), b.shape(), ut, b.order(),
                                                  Exec::serial);
  return proj.cwiseAbs().maxCoeff();
}

}  // namespace tensopt
