#pragma once

// Monte-Carlo estimation of expected Random-X optimism: per replicate a fresh
// training and test draw, a fit, and test MSE minus train MSE.  Rank sweeps
// reuse each replicate's data across ranks (common random numbers), so rank
// differences are estimated from paired per-replicate values.

#include <optional>
#include <string>
#include <vector>

#include "tensopt/optimism.hpp"
#include "tensopt/regress.hpp"
#include "tensopt/simgen.hpp"

namespace tensopt {

enum class FitterKind {
  /// Kernel ridge on features built from the true coefficient's components.
  oracle_krr,
  cp_regression,
  tucker_regression,
};

struct FitterSpec {
  FitterKind kind = FitterKind::oracle_krr;
  /// Used by the tensor fitters; the seed is replaced per replicate.
  FitOptions fit;
  /// Restarts of the CP-ALS approximation behind under-rank oracle features.
  std::size_t oracle_als_restarts = 5;

  /// Settings used by the experiments: moment initialization, a single start,
  /// relative tolerance 1e-5 and at most 200 sweeps.
  static FitterSpec experiment(FitterKind kind);
};

std::string fitter_name(FitterKind kind);
FitterKind parse_fitter(const std::string& name);

enum class DesignSampling {
  /// Draw full covariate tensors.
  full,
  /// Oracle only: draw the oracle features and signal directly from their
  /// exact joint Gaussian law, via an orthonormal basis of their span.
  projected,
};

enum class Criterion { optimism, optimism_closed, aic, bic, cv, train_mse, test_mse };

std::string criterion_name(Criterion c);
/// Throws ArgumentError on an unknown name.
Criterion parse_criterion(const std::string& name);

struct McOptions {
  Exec exec = Exec::parallel;
  DesignSampling sampling = DesignSampling::full;
  bool keep_per_replicate = true;
  std::size_t cv_folds = 5;
};

struct OptimismEstimate {
  double mean = 0.0;
  /// Sample standard deviation / sqrt(replicates).
  double stderr = 0.0;
  std::size_t replicates = 0;
  std::size_t failed = 0;
  std::optional<std::vector<double>> per_replicate;

  /// Mean and standard error with a fixed-order pairwise summation.
  static OptimismEstimate from_values(std::vector<double> values, bool keep);
};

struct SweepReport {
  std::vector<CriterionReport> rows;
  std::vector<RankSpec> ranks;
  std::vector<Criterion> criteria;
  SimConfig config;
  /// Ridge parameter actually used.
  double lambda = 0.0;
  double elapsed = 0.0;
  std::size_t failed = 0;
  /// per_replicate[rank][criterion index][successful replicate], kept when
  /// requested; replicate order matches across ranks and criteria.
  std::vector<std::vector<std::vector<double>>> per_replicate;

  const std::vector<double>& values(std::size_t rank_index, Criterion c) const;
};

/// Ridge parameter a fitter uses for cfg when cfg.lambda is unset: 1 for the
/// oracle, default_tensor_lambda(n_train) for the tensor fitters.
double resolve_lambda(const SimConfig& cfg, FitterKind kind);

SweepReport sweep_ranks(const SimConfig& cfg, const FitterSpec& fitter,
                        const std::vector<RankSpec>& ranks, const std::vector<Criterion>& criteria,
                        const McOptions& opts = {});

OptimismEstimate mc_optimism(const SimConfig& cfg, const FitterSpec& fitter, const RankSpec& rank,
                             const McOptions& opts = {});

/// Standard error of the per-replicate differences a - b.
double paired_stderr(const std::vector<double>& a, const std::vector<double>& b);

struct SelectOptions {
  /// Drop rows whose train MSE exceeds `stability_multiple` times the median.
  bool stability_filter = false;
  double stability_multiple = 10.0;
};

struct Selection {
  std::string rank_label;
  double value = 0.0;
};

/// Value of a criterion in a report row; nullopt when absent.
std::optional<double> criterion_value(const CriterionReport& row, Criterion c);

/// Argmin over rows; exact ties go to the smaller rank.
Selection select_rank(const std::vector<CriterionReport>& rows, Criterion c,
                      const SelectOptions& opts = {});
Selection select_rank(const SweepReport& report, Criterion c, const SelectOptions& opts = {});

struct EnsembleEstimate {
  OptimismEstimate ensemble;
  /// sum_k (n_k / n) times the member hold-out optimisms.
  OptimismEstimate bound;
  /// bound - ensemble, per replicate.
  OptimismEstimate gap;
  std::size_t max_ens_rank = 0;
  std::size_t failed = 0;
};

/// K members of the given CP rank, each fitted on a subsample of size
/// subset_size (disjoint when K * subset_size <= n_train, otherwise
/// independent subsamples without replacement).
EnsembleEstimate ensemble_experiment(const SimConfig& cfg, std::size_t k, std::size_t subset_size,
                                     const RankSpec& rank, const FitterSpec& fitter,
                                     const McOptions& opts = {});

}  // namespace tensopt
