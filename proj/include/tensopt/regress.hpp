#pragma once

// Scalar-on-tensor regression: y_i = <X_i, B> + eps_i with B constrained to
// low CP rank or low Tucker rank, plus the equivalent kernel ridge form on
// fixed multilinear features and ensemble averaging of CP fits.

#include <cstdint>
#include <span>
#include <vector>

#include "tensopt/decomp.hpp"
#include "tensopt/parallel.hpp"

namespace tensopt {

/// n covariate tensors of one shape, stored as the D x n design matrix whose
/// column i is vec(X_i), and their responses.
struct Dataset {
  Shape shape;
  Matrix design;
  Vector responses;

  Dataset() = default;
  Dataset(Shape shape, Matrix design, Vector responses);
  static Dataset from_tensors(const std::vector<Tensor>& xs, const Vector& y);

  std::size_t size() const { return static_cast<std::size_t>(responses.size()); }
  Tensor covariate(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

enum class CpInit {
  /// i.i.d. standard-normal factors.
  random,
  /// Rank-R CP approximation of the moment estimate (1/n) sum_i y_i X_i.
  moment,
};

enum class TuckerInit {
  /// HOSVD of the moment estimate (1/n) sum_i y_i X_i.
  moment,
  /// Orthonormalized standard-normal factors.
  random,
};

struct FitOptions {
  std::size_t max_iter = 500;
  /// Stop when the penalized objective falls by less than tol * previous.
  double tol = 1e-8;
  std::uint64_t seed = 0;
  std::size_t restarts = 1;
  /// With several restarts, run each for this many sweeps and continue only
  /// the best to convergence; 0 runs every restart to convergence.
  std::size_t screen_sweeps = 0;
  CpInit cp_init = CpInit::random;
  TuckerInit tucker_init = TuckerInit::moment;
  Exec exec = Exec::serial;
};

struct FitMeta {
  std::size_t iterations = 0;
  bool converged = false;
  /// Penalized objective after each sweep.
  std::vector<double> objective_trace;
};

struct FittedModel {
  ModelKind kind = ModelKind::cp;
  Coefficient coefficient;
  double lambda = 0.0;
  double train_mse = 0.0;
  FitMeta meta;

  Vector coefficient_vec() const { return tensopt::coefficient_vec(coefficient); }
  Tensor reconstruct() const;
  const CpFactors& cp() const { return std::get<CpFactors>(coefficient); }
  const TuckerFactors& tucker() const { return std::get<TuckerFactors>(coefficient); }
};

struct EnsembleModel {
  std::vector<FittedModel> members;
  std::vector<std::size_t> subset_sizes;
  /// Members' components concatenated, first-mode factor scaled by 1/K.
  CpFactors averaged;
  std::size_t ens_rank = 0;
  /// Vectorized components of all members (unit-norm columns if requested).
  Matrix components;
};

struct EnsembleOptions {
  bool standardize_features = false;
};

/// Ridge parameter used by the tensor fitters when none is supplied.
double default_tensor_lambda(std::size_t n);

Vector cp_feature_map(const CpFactors& f, const Tensor& x);
Vector tucker_feature_map(const TuckerFactors& f, const Tensor& x);
/// Row i holds the feature vector of sample i.
Matrix cp_feature_matrix(const CpFactors& f, const Matrix& design, Exec exec = Exec::serial);
Matrix tucker_feature_matrix(const TuckerFactors& f, const Matrix& design,
                             Exec exec = Exec::serial);

/// Block-coordinate ridge over the factor matrices minimizing
/// ||y - <X, B>||^2 + lambda sum_m ||B_m||^2, with column norms balanced
/// after each sweep.
FittedModel fit_cp_regression(const Dataset& d, std::size_t rank, double lambda,
                              const FitOptions& opts = {});

/// Alternating ridge over orthonormal factors and the core minimizing
/// ||y - <X, B>||^2 + lambda ||B||^2.
FittedModel fit_tucker_regression(const Dataset& d, const Shape& ranks, double lambda,
                                  const FitOptions& opts = {});

/// w = (F^T F + lambda I)^{-1} F^T y.
Vector krr_fit(const Matrix& features, const Vector& y, double lambda);

double predict(const FittedModel& model, const Tensor& x);
/// One prediction per design column.
Vector predict(const FittedModel& model, const Matrix& design);
double predict(const Vector& features, const Vector& weights);

EnsembleModel ensemble_average(std::vector<FittedModel> members,
                               std::vector<std::size_t> subset_sizes,
                               const EnsembleOptions& opts = {});

}  // namespace tensopt
