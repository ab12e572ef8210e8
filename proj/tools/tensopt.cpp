#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tensopt/cli.hpp"

namespace {

void add_overrides(CLI::App* cmd, tensopt::cli::Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "Override the master seed");
  cmd->add_option("--replicates", ov.replicates, "Override the replicate count");
  cmd->add_option("--n-train", ov.n_train, "Override the training size");
  cmd->add_option("--n-test", ov.n_test, "Override the test size");
  cmd->add_option("--noise-frac", ov.noise_frac, "Override the noise fraction s");
  cmd->add_option("--lambda", ov.lambda, "Override the ridge parameter");
  cmd->add_option("--fitter", ov.fitter, "oracle_krr, cp_regression or tucker_regression");
  cmd->add_option("--ranks", ov.ranks, "Comma-separated rank labels, e.g. 1,2,3 or 2x2x2,3x3x3");
  cmd->add_option("--criteria", ov.criteria, "Comma-separated criteria");
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = tensopt::cli;
  CLI::App app{"Low-rank tensor regression optimism experiments"};
  app.set_version_flag("--version", std::string(TENSOPT_VERSION));
  app.require_subcommand(1);
  // Global options such as --threads may follow the subcommand.
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (TENSOPT_THREADS takes precedence)");

  cli::Overrides ov;
  std::string config, out_dir = ".";

  auto* sweep = app.add_subcommand("sweep", "Monte-Carlo rank sweep; writes sweep.csv");
  sweep->add_option("--config", config, "JSON experiment config")->required();
  sweep->add_option("--out", out_dir, "Output directory");
  add_overrides(sweep, ov);

  std::string csv, criterion;
  tensopt::SelectOptions sel;
  auto* select = app.add_subcommand("select", "Pick a rank from sweep.csv");
  select->add_option("--csv", csv, "sweep.csv from the sweep command")->required();
  select->add_option("--criterion", criterion, "optimism, aic, bic, cv, ...")->required();
  select->add_flag("--stability-filter", sel.stability_filter,
                   "Exclude ranks whose train MSE exceeds a multiple of the median");
  select->add_option("--stability-multiple", sel.stability_multiple, "Multiple for the filter");

  std::vector<std::size_t> ks;
  std::size_t nk = 0;
  auto* ens = app.add_subcommand("ensemble", "Ensemble optimism vs its bound; writes ensemble.csv");
  ens->add_option("--config", config, "JSON experiment config")->required();
  ens->add_option("--K", ks, "Ensemble sizes")->required()->delimiter(',');
  ens->add_option("--nk", nk, "Subsample size per member")->required();
  ens->add_option("--out", out_dir, "Output directory");
  add_overrides(ens, ov);

  std::string data, shape, model = "cp", rank;
  cli::FitCommandOptions fo;
  auto* fit = app.add_subcommand("fit", "Fit a model to CSV data; writes fit.json");
  fit->add_option("--data", data, "CSV rows: vec(X) entries then y")->required();
  fit->add_option("--shape", shape, "Mode sizes, e.g. 10,8,12")->required();
  fit->add_option("--model", model, "cp or tucker");
  fit->add_option("--rank", rank, "CP rank or Tucker ranks, e.g. 3 or 3x3x3")->required();
  fit->add_option("--lambda", fo.lambda, "Ridge parameter (default 1e-6 n)");
  fit->add_option("--folds", fo.folds, "Cross-validation folds");
  fit->add_option("--splits", fo.splits, "Hold-out splits for the optimism estimate");
  fit->add_option("--holdout", fo.holdout_fraction, "Hold-out fraction per split");
  fit->add_option("--seed", fo.seed, "Seed for folds, splits and initialization");
  fit->add_option("--max-iter", fo.max_iter, "Maximum sweeps");
  fit->add_option("--tol", fo.tol, "Relative objective tolerance");
  fit->add_option("--restarts", fo.restarts, "Initializations (best objective kept)");
  fit->add_option("--out", fo.out_path, "Output JSON path");

  std::size_t replicate = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write one replicate's training set as CSV");
  gen->add_option("--config", config, "JSON experiment config")->required();
  gen->add_option("--replicate", replicate, "Replicate index");
  gen->add_option("--out", gen_out, "Output CSV path")->required();
  add_overrides(gen, ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitUsage;
  }

  if (*sweep) return cli::cmd_sweep(config, out_dir, ov, threads, std::cout, std::cerr);
  if (*select) return cli::cmd_select(csv, criterion, sel, std::cout, std::cerr);
  if (*ens) return cli::cmd_ensemble(config, ks, nk, out_dir, ov, threads, std::cout, std::cerr);
  if (*fit) return cli::cmd_fit(data, shape, model, rank, fo, std::cout, std::cerr);
  if (*gen) return cli::cmd_generate(config, replicate, gen_out, ov, std::cout, std::cerr);
  return cli::kExitUsage;
}
