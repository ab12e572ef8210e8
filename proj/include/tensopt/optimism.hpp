#pragma once

// Closed-form expected Random-X optimism for kernel ridge regression on
// multilinear features, and the information-criterion and cross-validation
// baselines it is compared against.
//
// Every closed form here is one function of a feature spectrum v_1 >= ... >= v_q:
//
//   Opt = 2 (sigma^2 + lambda^2 v_1 / (v_1 + lambda)^2) / n * S
//       + 2 (||Δ||^2 + ||e||^2) / n * S,      S = sum_r v_r^2 / (v_r + lambda)^2
//
// with Δ the under-rank approximation residual and e the plug-in estimation
// error (both zero in the oracle true/over-rank cases).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "tensopt/decomp.hpp"
#include "tensopt/regress.hpp"

namespace tensopt {

enum class SpectrumSource { cp, tucker_kron, empirical };

struct SpectrumSummary {
  /// Descending, nonnegative.
  Vector eigenvalues;
  SpectrumSource source = SpectrumSource::empirical;

  /// Sorts descending and clips entries below 1e-10 * v_1 (or negative) to 0.
  static SpectrumSummary from_values(const Vector& values, SpectrumSource source);
};

struct OptimismInputs {
  double sigma_sq = 0.0;
  double lambda = 0.0;
  std::size_t n = 1;
  double delta_norm_sq = 0.0;
  double err_norm_sq = 0.0;
};

struct CriterionReport {
  std::string rank_label;
  std::optional<double> optimism_closed;
  std::optional<double> optimism_mc_mean;
  std::optional<double> mc_stderr;
  std::optional<double> aic;
  std::optional<double> bic;
  std::optional<double> cv_risk;
  std::optional<double> train_mse;
  std::optional<double> test_mse;
  /// Standard errors of the replicate-averaged baselines, when averaged.
  std::optional<double> aic_stderr;
  std::optional<double> bic_stderr;
  std::optional<double> cv_stderr;
  std::optional<double> train_mse_stderr;
  std::optional<double> test_mse_stderr;
  std::optional<double> optimism_closed_stderr;
};

/// G^T G for G the matrix of vectorized components.
Matrix cp_population_covariance(const CpFactors& f);
SpectrumSummary cp_spectrum(const CpFactors& f);
/// Spectrum of an explicit component matrix C (D x q): eigenvalues of C^T C.
SpectrumSummary component_spectrum(const Matrix& components,
                                   SpectrumSource source = SpectrumSource::empirical);
/// All products of the mode-wise spectra of U_m^T U_m, descending.
SpectrumSummary tucker_kron_spectrum(const TuckerFactors& f);

/// v^2 / (v + lambda)^2, with the lambda = 0 value 1 for v > 0 and 0 for v = 0.
double shrinkage_ratio(double v, double lambda);

double optimism_closed_form(const SpectrumSummary& spec, const OptimismInputs& in);

enum class GapCase { over, under };

struct GapResult {
  /// Opt(alt) - Opt(true).
  double gap = 0.0;
  /// False when lambda is not small next to the smallest positive eigenvalue.
  bool lambda_small = true;
};

/// Optimism gap between an alternative rank and the true rank.  In the
/// under case `in.delta_norm_sq` is applied to the alternative only; in the
/// over case neither side carries a residual.
GapResult proposition_gap(const SpectrumSummary& true_spec, const SpectrumSummary& alt_spec,
                          const OptimismInputs& in, GapCase which);

/// sum_k (n_k / n) Opt_k.
double ensemble_optimism_bound(std::span<const double> member_optimisms,
                               std::span<const std::size_t> subset_sizes, std::size_t n);

/// Optimism of a feature map split into mutually orthogonal groups.
double additive_disjoint_optimism(std::span<const double> part_optimisms);

struct RffResult {
  double optimism = 0.0;
  /// Spectrum of the 2D x 2D empirical second moment of z.
  SpectrumSummary spectrum;
};

/// Random Fourier features of the Gaussian kernel with the given lengthscale:
/// omega_j ~ N(0, I / l^2) and z(x) = (cos w_j^T x, sin w_j^T x)_j / sqrt(D).
/// The second moment of z is estimated from `samples` (rows are inputs of
/// length `dim`) and the closed form is evaluated on its spectrum.
RffResult rff_stationary_optimism(double lengthscale, std::size_t dim, std::size_t pairs,
                                  std::uint64_t seed, const OptimismInputs& in,
                                  const Matrix& samples);

struct InfoCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

/// Gaussian-likelihood forms: n ln(rss/n) + 2p and n ln(rss/n) + p ln n.
InfoCriteria aic_bic(double train_rss, std::size_t n, double p_eff);
std::size_t cp_parameter_count(const Shape& shape, std::size_t rank);
std::size_t tucker_parameter_count(const Shape& shape, const Shape& ranks);

/// A fitter maps a training set to a predictor over design columns.
using Predictor = std::function<Vector(const Matrix& design)>;
using Fitter = std::function<Predictor(const Dataset& train)>;

/// Start offsets of K contiguous folds over n items: sizes floor(n/K), the
/// first n mod K of them one larger.  Has K + 1 entries.
std::vector<std::size_t> fold_offsets(std::size_t n, std::size_t k);

/// K-fold cross-validated MSE over a seeded shuffle; the mean of per-fold
/// held-out MSEs.
double cv_risk(const Dataset& d, const Fitter& fitter, std::size_t k, std::uint64_t seed);

}  // namespace tensopt
