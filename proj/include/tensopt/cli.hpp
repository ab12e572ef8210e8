#pragma once

// Command implementations behind the `tensopt` executable.  Each command
// returns a process exit status: 0 success, 1 runtime failure, 2 usage or
// configuration error.  Messages go to the supplied streams.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensopt/mc.hpp"

namespace tensopt::cli {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// A SimConfig plus the experiment settings that go with it.
struct ExperimentConfig {
  SimConfig sim;
  FitterSpec fitter = FitterSpec::experiment(FitterKind::oracle_krr);
  std::vector<RankSpec> ranks;
  std::vector<Criterion> criteria{Criterion::optimism, Criterion::optimism_closed, Criterion::aic,
                                  Criterion::bic, Criterion::train_mse, Criterion::test_mse};
  DesignSampling sampling = DesignSampling::full;
  std::size_t cv_folds = 5;
};

/// Throws ConfigError naming the offending field; unknown keys are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Round-trips through parse_config.
nlohmann::json config_to_json(const ExperimentConfig& c);

/// Scalar overrides from command-line flags, applied after the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_test;
  std::optional<double> noise_frac;
  std::optional<double> lambda;
  std::optional<std::string> fitter;
  std::optional<std::string> ranks;
  std::optional<std::string> criteria;

  void apply(ExperimentConfig& c) const;
};

/// Worker threads: TENSOPT_THREADS if set, else `flag` (0 = runtime default).
int resolve_threads(int flag);

/// Round-trip decimal form: 17 significant digits, '.' separator.
std::string format_double(double x);

/// Writes `contents` to a temporary file beside `path` and renames it over.
void write_atomic(const std::string& path, const std::string& contents);

int cmd_sweep(const std::string& config_path, const std::string& out_dir, const Overrides& ov,
              int threads, std::ostream& out, std::ostream& err);

int cmd_select(const std::string& sweep_csv, const std::string& criterion,
               const SelectOptions& opts, std::ostream& out, std::ostream& err);

int cmd_ensemble(const std::string& config_path, const std::vector<std::size_t>& ks,
                 std::size_t nk, const std::string& out_dir, const Overrides& ov, int threads,
                 std::ostream& out, std::ostream& err);

struct FitCommandOptions {
  std::optional<double> lambda;
  std::size_t folds = 5;
  /// Random train/hold-out splits behind the hold-out optimism estimate.
  std::size_t splits = 20;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  std::size_t max_iter = 500;
  double tol = 1e-8;
  std::size_t restarts = 3;
  std::string out_path = "fit.json";
};

/// Fit options cmd_fit uses for the given command options.
FitOptions fit_command_fit_options(const FitCommandOptions& o);

/// Parses rows of vec(X_i) entries followed by y_i.
Dataset read_data_csv(const std::string& path, const Shape& shape);

int cmd_fit(const std::string& data_csv, const std::string& shape, const std::string& model,
            const std::string& rank, const FitCommandOptions& opts, std::ostream& out,
            std::ostream& err);

/// Writes the training set of one replicate of the configured experiment in
/// the cmd_fit CSV layout.
int cmd_generate(const std::string& config_path, std::size_t replicate, const std::string& out_csv,
                 const Overrides& ov, std::ostream& out, std::ostream& err);

}  // namespace tensopt::cli
