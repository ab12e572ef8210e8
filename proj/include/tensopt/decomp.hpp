#pragma once

// CP and Tucker approximation of a known coefficient tensor.  The residual
// Δ = vec(B) - vec(approx) is what the under-specified optimism formulas
// consume.

#include <cstdint>
#include <variant>
#include <vector>

#include "tensopt/multiway.hpp"

namespace tensopt {

struct CpFactors {
  /// Factor m is I_m x R; all share the column count R.
  std::vector<Matrix> factors;

  std::size_t rank() const { return factors.empty() ? 0 : factors.front().cols(); }
  Shape shape() const;
};

struct TuckerFactors {
  Tensor core;
  /// Factor m is I_m x R_m with R_m = core.dim(m).
  std::vector<Matrix> factors;

  Shape shape() const;
  Shape ranks() const { return core.shape(); }
};

enum class ModelKind { cp, tucker };

using Coefficient = std::variant<CpFactors, TuckerFactors>;

template <class F>
struct ApproxResult {
  F approx;
  Vector delta;
  double delta_norm_sq = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  /// ||b - approx||^2 after each full sweep of the returned run.
  std::vector<double> objective_trace;
};

struct CpAlsOptions {
  std::size_t max_iter = 500;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  std::size_t restarts = 3;
};

struct HooiOptions {
  std::size_t max_iter = 500;
  double tol = 1e-8;
};

/// Checks factor count, row sizes and the shared column count.
void validate(const CpFactors& f);
void validate(const TuckerFactors& f);

/// G = [v_1 ... v_R] with v_r = β_M^{(r)} ⊗ ... ⊗ β_1^{(r)}; D x R.
Matrix cp_components(const CpFactors& f);
/// P = U_M ⊗ ... ⊗ U_1; D x prod R_m.
Matrix tucker_basis(const TuckerFactors& f);

Tensor cp_reconstruct(const CpFactors& f);
Tensor tucker_reconstruct(const TuckerFactors& f);
/// vec of the represented coefficient tensor.
Vector coefficient_vec(const Coefficient& b);

/// Rescales each component so its M factor columns have equal norms.  The
/// reconstruction is unchanged and sum_m ||B_m||^2 does not increase.
void balance_columns(CpFactors& f);

/// Best rank-R CP approximation by alternating least squares.  Returns the
/// lowest-objective run over `restarts` seeded random initializations
/// (ties go to the earlier restart).  Reports converged=false instead of
/// throwing when max_iter is reached.
ApproxResult<CpFactors> cp_als(const Tensor& b, std::size_t rank, const CpAlsOptions& opts = {});

/// Truncated Tucker via HOSVD initialization and HOOI sweeps.  Factors are
/// orthonormal and the core is b ×_1 U_1^T ... ×_M U_M^T.
ApproxResult<TuckerFactors> tucker_hooi(const Tensor& b, const Shape& ranks,
                                        const HooiOptions& opts = {});

/// max_r |<v_r, Δ>| for Δ = vec(b) - vec(cp_reconstruct(f)).
double residual_orthogonality_check(const Tensor& b, const CpFactors& f);
/// ||P^T Δ||_inf for Δ = vec(b) - vec(tucker_reconstruct(f)).
double residual_orthogonality_check(const Tensor& b, const TuckerFactors& f);

}  // namespace tensopt
