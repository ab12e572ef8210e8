#include "tensopt/mc.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <set>

#include "tensopt/errors.hpp"
#include "tensopt/random.hpp"

namespace tensopt {

namespace {

constexpr std::size_t kCriterionCount = 7;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::size_t index_of(Criterion c) { return static_cast<std::size_t>(c); }

double pairwise_sum(const double* p, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(p, h) + pairwise_sum(p + h, n - h);
}

double mse(const Vector& y, const Vector& pred) {
  return (y - pred).squaredNorm() / static_cast<double>(y.size());
}

// Features and closed-form inputs of the oracle at one target rank.
struct OracleRank {
  Matrix components;
  CpFactors cp;
  bool has_cp = false;
  SpectrumSummary spectrum;
  double delta_norm_sq = 0.0;
  Eigen::Index offset = 0;
};

// Each extra component has its own stream so a rank's features do not depend
// on which other ranks are requested.
Vector extra_factor_column(const SimConfig& cfg, std::size_t j, std::size_t mode) {
  RandomStream stream(cfg.seed, j, "oracle_extra");
  Vector col;
  for (std::size_t m = 0; m <= mode; ++m) {
    col = stream.normal_vector(static_cast<Eigen::Index>(cfg.shape[m]));
  }
  return col;
}

OracleRank oracle_cp_rank(const SimConfig& cfg, const FitterSpec& spec,
                          const TrueCoefficient& truth, const Tensor& b, std::size_t rank) {
  OracleRank out;
  out.has_cp = true;
  const auto* true_cp = std::get_if<CpFactors>(&truth);
  if (true_cp != nullptr && rank >= true_cp->rank()) {
    const std::size_t extra = rank - true_cp->rank();
    out.cp = *true_cp;
    for (std::size_t m = 0; m < cfg.shape.size(); ++m) {
      Matrix f(static_cast<Eigen::Index>(cfg.shape[m]), static_cast<Eigen::Index>(rank));
      f.leftCols(static_cast<Eigen::Index>(true_cp->rank())) = true_cp->factors[m];
      for (std::size_t j = 0; j < extra; ++j) {
        f.col(static_cast<Eigen::Index>(true_cp->rank() + j)) = extra_factor_column(cfg, j, m);
      }
      out.cp.factors[m] = std::move(f);
    }
  } else {
    CpAlsOptions als;
    als.max_iter = 2000;
    als.tol = 1e-12;
    als.seed = cfg.seed;
    als.restarts = spec.oracle_als_restarts;
    auto res = cp_als(b, rank, als);
    out.cp = std::move(res.approx);
    out.delta_norm_sq = res.delta_norm_sq;
  }
  out.components = cp_components(out.cp);
  out.spectrum = component_spectrum(out.components, SpectrumSource::cp);
  return out;
}

OracleRank oracle_tucker_rank(const SimConfig& cfg, const TrueCoefficient& truth, const Tensor& b,
                              const Shape& ranks) {
  const std::size_t order = cfg.shape.size();
  Shape mins(order);
  for (std::size_t m = 0; m < order; ++m) {
    if (ranks[m] < 1 || ranks[m] > cfg.shape[m]) {
      throw ArgumentError("oracle Tucker rank for mode " + std::to_string(m) + " outside [1, " +
                          std::to_string(cfg.shape[m]) + "]");
    }
    mins[m] = std::min(ranks[m], numerical_rank(mode_unfold(b, m)));
  }
  std::vector<Matrix> base;
  const auto* true_tk = std::get_if<TuckerFactors>(&truth);
  if (true_tk != nullptr && mins == true_tk->ranks()) {
    base = true_tk->factors;
  } else {
    HooiOptions hooi;
    hooi.max_iter = 2000;
    hooi.tol = 1e-12;
    base = tucker_hooi(b, mins, hooi).approx.factors;
  }
  // Extra directions complete each factor to an orthonormal basis whose
  // leading columns span the base factor.
  for (std::size_t m = 0; m < order; ++m) {
    if (ranks[m] == mins[m]) continue;
    RandomStream stream(cfg.seed, m, "oracle_extra_tucker");
    Matrix wide(static_cast<Eigen::Index>(cfg.shape[m]), static_cast<Eigen::Index>(ranks[m]));
    wide.leftCols(base[m].cols()) = base[m];
    wide.rightCols(static_cast<Eigen::Index>(ranks[m] - mins[m])) =
        stream.normal_matrix(static_cast<Eigen::Index>(cfg.shape[m]),
                             static_cast<Eigen::Index>(ranks[m] - mins[m]));
    base[m] = thin_qr(wide);
  }
  TuckerFactors tf{Tensor(ranks), std::move(base)};
  OracleRank out;
  out.components = tucker_basis(tf);
  out.spectrum = tucker_kron_spectrum(tf);
  const Vector vb = b.flat();
  out.delta_norm_sq = (vb - out.components * (out.components.transpose() * vb)).squaredNorm();
  return out;
}

OracleRank oracle_rank(const SimConfig& cfg, const FitterSpec& spec, const TrueCoefficient& truth,
                       const Tensor& b, const RankSpec& rank) {
  if (rank.is_cp()) return oracle_cp_rank(cfg, spec, truth, b, rank.cp_rank());
  return oracle_tucker_rank(cfg, truth, b, rank.tucker_ranks());
}

void check_rank(const SimConfig& cfg, FitterKind kind, const RankSpec& rank) {
  if (rank.values.empty()) throw ArgumentError("empty rank label");
  for (auto v : rank.values) {
    if (v < 1) throw ArgumentError("rank " + rank.label() + " must be positive");
  }
  if (kind == FitterKind::cp_regression && !rank.is_cp()) {
    throw ArgumentError("CP regression needs a single CP rank, got " + rank.label());
  }
  if (!rank.is_cp() && rank.values.size() != cfg.shape.size()) {
    throw ArgumentError("Tucker rank " + rank.label() + " needs one entry per mode");
  }
  if (kind == FitterKind::tucker_regression && rank.is_cp() && cfg.shape.size() != 1) {
    throw ArgumentError("Tucker regression needs one rank per mode, got " + rank.label());
  }
}

double parameter_count(const Shape& shape, const RankSpec& rank) {
  if (rank.is_cp() && shape.size() != 1) {
    return static_cast<double>(cp_parameter_count(shape, rank.cp_rank()));
  }
  return static_cast<double>(tucker_parameter_count(shape, rank.tucker_ranks()));
}

// Per-replicate training and test data.  `features` are the oracle features
// of every requested rank side by side (empty for the tensor fitters).
struct ReplicateData {
  Matrix design;
  Matrix test_design;
  Matrix features;
  Matrix test_features;
  Responses train;
  Vector test_y;
};

struct SweepPlan {
  const SimConfig* cfg = nullptr;
  const FitterSpec* fitter = nullptr;
  McOptions opts;
  double lambda = 0.0;
  TrueCoefficient truth;
  Vector true_vec;
  std::vector<RankSpec> ranks;
  std::vector<OracleRank> oracle;
  Matrix oracle_union;
  /// Projected sampling: [union, vec B] = Q * mix; rows of X^T Q are N(0, I).
  Matrix projected_mix;
  std::vector<bool> wanted = std::vector<bool>(kCriterionCount, false);
};

ReplicateData draw_replicate(const SweepPlan& plan, std::size_t j) {
  const SimConfig& cfg = *plan.cfg;
  ReplicateData r;
  RandomStream train_x(cfg.seed, j, "train_x");
  RandomStream train_noise(cfg.seed, j, "train_noise");
  RandomStream test_x(cfg.seed, j, "test_x");
  RandomStream test_noise(cfg.seed, j, "test_noise");
  const auto n = static_cast<Eigen::Index>(cfg.n_train);
  const auto nt = static_cast<Eigen::Index>(cfg.n_test);
  if (plan.opts.sampling == DesignSampling::projected) {
    const Eigen::Index k = plan.projected_mix.rows();
    const Eigen::Index q = plan.oracle_union.cols();
    const Matrix tr = train_x.normal_matrix(n, k) * plan.projected_mix;
    const Matrix te = test_x.normal_matrix(nt, k) * plan.projected_mix;
    r.features = tr.leftCols(q);
    r.test_features = te.leftCols(q);
    r.train = responses_from_signal(tr.col(q), cfg.noise_frac, train_noise);
    r.test_y = te.col(q) + r.train.sigma * test_noise.normal_vector(nt);
    return r;
  }
  r.design = gen_design(cfg.n_train, cfg.shape, train_x);
  r.train = gen_responses(plan.true_vec, r.design, cfg.noise_frac, train_noise);
  r.test_design = gen_design(cfg.n_test, cfg.shape, test_x);
  r.test_y = gen_responses_sigma(plan.true_vec, r.test_design, r.train.sigma, test_noise).y;
  if (plan.oracle_union.cols() > 0) {
    r.features = r.design.transpose() * plan.oracle_union;
    r.test_features = r.test_design.transpose() * plan.oracle_union;
  }
  return r;
}

using CriterionValues = std::array<double, kCriterionCount>;

CriterionValues evaluate_oracle(const SweepPlan& plan, const ReplicateData& r, std::size_t ri,
                                std::uint64_t cv_seed) {
  const SimConfig& cfg = *plan.cfg;
  const OracleRank& o = plan.oracle[ri];
  const Eigen::Index q = o.components.cols();
  const Matrix f = r.features.middleCols(o.offset, q);
  const Matrix ft = r.test_features.middleCols(o.offset, q);
  const Vector w = krr_fit(f, r.train.y, plan.lambda);
  CriterionValues v;
  v.fill(kNan);
  v[index_of(Criterion::train_mse)] = mse(r.train.y, f * w);
  v[index_of(Criterion::test_mse)] = mse(r.test_y, ft * w);
  v[index_of(Criterion::optimism)] =
      v[index_of(Criterion::test_mse)] - v[index_of(Criterion::train_mse)];
  OptimismInputs in;
  in.sigma_sq = r.train.sigma * r.train.sigma;
  in.lambda = plan.lambda;
  in.n = cfg.n_train;
  in.delta_norm_sq = o.delta_norm_sq;
  v[index_of(Criterion::optimism_closed)] = optimism_closed_form(o.spectrum, in);
  if (plan.wanted[index_of(Criterion::aic)] || plan.wanted[index_of(Criterion::bic)]) {
    const auto ic = aic_bic(v[index_of(Criterion::train_mse)] * static_cast<double>(cfg.n_train),
                            cfg.n_train, parameter_count(cfg.shape, plan.ranks[ri]));
    v[index_of(Criterion::aic)] = ic.aic;
    v[index_of(Criterion::bic)] = ic.bic;
  }
  if (plan.wanted[index_of(Criterion::cv)]) {
    const Dataset d(Shape{static_cast<std::size_t>(q)}, f.transpose(), r.train.y);
    const double lambda = plan.lambda;
    const Fitter fitter = [lambda](const Dataset& train) -> Predictor {
      const Vector wk = krr_fit(train.design.transpose(), train.responses, lambda);
      return [wk](const Matrix& design) -> Vector { return design.transpose() * wk; };
    };
    v[index_of(Criterion::cv)] = cv_risk(d, fitter, plan.opts.cv_folds, cv_seed);
  }
  return v;
}

FitOptions replicate_fit_options(const SweepPlan& plan, std::uint64_t seed) {
  FitOptions fo = plan.fitter->fit;
  fo.seed = seed;
  if (plan.opts.exec == Exec::parallel) fo.exec = Exec::serial;
  return fo;
}

FittedModel fit_tensor(FitterKind kind, const Dataset& d, const RankSpec& rank, double lambda,
                       const FitOptions& fo) {
  if (kind == FitterKind::cp_regression) return fit_cp_regression(d, rank.cp_rank(), lambda, fo);
  return fit_tucker_regression(d, rank.tucker_ranks(), lambda, fo);
}

CriterionValues evaluate_tensor(const SweepPlan& plan, const ReplicateData& r, std::size_t ri,
                                std::uint64_t fit_seed, std::uint64_t cv_seed) {
  const SimConfig& cfg = *plan.cfg;
  const RankSpec& rank = plan.ranks[ri];
  const FitterKind kind = plan.fitter->kind;
  const FitOptions fo = replicate_fit_options(plan, fit_seed);
  const Dataset d(cfg.shape, r.design, r.train.y);
  const FittedModel model = fit_tensor(kind, d, rank, plan.lambda, fo);
  const Vector bhat = model.coefficient_vec();
  CriterionValues v;
  v.fill(kNan);
  v[index_of(Criterion::train_mse)] = mse(r.train.y, r.design.transpose() * bhat);
  v[index_of(Criterion::test_mse)] = mse(r.test_y, r.test_design.transpose() * bhat);
  v[index_of(Criterion::optimism)] =
      v[index_of(Criterion::test_mse)] - v[index_of(Criterion::train_mse)];
  // Plug-in form: spectrum of the fitted components, with the estimation
  // error carrying any misspecification.
  OptimismInputs in;
  in.sigma_sq = r.train.sigma * r.train.sigma;
  in.lambda = plan.lambda;
  in.n = cfg.n_train;
  in.err_norm_sq = (bhat - plan.true_vec).squaredNorm();
  const SpectrumSummary spec = model.kind == ModelKind::cp ? cp_spectrum(model.cp())
                                                           : tucker_kron_spectrum(model.tucker());
  v[index_of(Criterion::optimism_closed)] = optimism_closed_form(spec, in);
  if (plan.wanted[index_of(Criterion::aic)] || plan.wanted[index_of(Criterion::bic)]) {
    const double rss = v[index_of(Criterion::train_mse)] * static_cast<double>(cfg.n_train);
    if (rss > 0.0) {
      const auto ic = aic_bic(rss, cfg.n_train, parameter_count(cfg.shape, rank));
      v[index_of(Criterion::aic)] = ic.aic;
      v[index_of(Criterion::bic)] = ic.bic;
    } else {
      v[index_of(Criterion::aic)] = -std::numeric_limits<double>::infinity();
      v[index_of(Criterion::bic)] = -std::numeric_limits<double>::infinity();
    }
  }
  if (plan.wanted[index_of(Criterion::cv)]) {
    const double lambda = plan.lambda;
    const Fitter fitter = [kind, rank, lambda, fo](const Dataset& train) -> Predictor {
      const Vector b = fit_tensor(kind, train, rank, lambda, fo).coefficient_vec();
      return [b](const Matrix& design) -> Vector { return design.transpose() * b; };
    };
    v[index_of(Criterion::cv)] = cv_risk(d, fitter, plan.opts.cv_folds, cv_seed);
  }
  return v;
}

void fill_row(CriterionReport& row, Criterion c, const OptimismEstimate& e) {
  switch (c) {
    case Criterion::optimism:
      row.optimism_mc_mean = e.mean;
      row.mc_stderr = e.stderr;
      break;
    case Criterion::optimism_closed:
      row.optimism_closed = e.mean;
      row.optimism_closed_stderr = e.stderr;
      break;
    case Criterion::aic:
      row.aic = e.mean;
      row.aic_stderr = e.stderr;
      break;
    case Criterion::bic:
      row.bic = e.mean;
      row.bic_stderr = e.stderr;
      break;
    case Criterion::cv:
      row.cv_risk = e.mean;
      row.cv_stderr = e.stderr;
      break;
    case Criterion::train_mse:
      row.train_mse = e.mean;
      row.train_mse_stderr = e.stderr;
      break;
    case Criterion::test_mse:
      row.test_mse = e.mean;
      row.test_mse_stderr = e.stderr;
      break;
  }
}

void check_failures(std::size_t failed, std::size_t replicates) {
  if (static_cast<double>(failed) > 0.05 * static_cast<double>(replicates)) {
    throw NumericalError(std::to_string(failed) + " of " + std::to_string(replicates) +
                         " replicates failed (more than 5%)");
  }
}

// Runs body(j) for every replicate, recording NumericalError as a failure
// and rethrowing any other exception after the loop.
template <class Body>
std::vector<char> for_each_replicate(std::size_t replicates, Exec exec, Body&& body) {
  std::vector<char> failed(replicates, 0);
  std::vector<std::exception_ptr> errors(replicates);
  const auto count = static_cast<long long>(replicates);
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (long long j = 0; j < count; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    try {
      if (!body(ju)) failed[ju] = 1;
    } catch (const NumericalError&) {
      failed[ju] = 1;
    } catch (...) {
      errors[ju] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return failed;
}

}  // namespace

FitterSpec FitterSpec::experiment(FitterKind kind) {
  FitterSpec s;
  s.kind = kind;
  s.fit.cp_init = CpInit::moment;
  s.fit.tucker_init = TuckerInit::moment;
  s.fit.restarts = 1;
  s.fit.tol = 1e-5;
  s.fit.max_iter = 200;
  return s;
}

std::string fitter_name(FitterKind kind) {
  switch (kind) {
    case FitterKind::oracle_krr:
      return "oracle_krr";
    case FitterKind::cp_regression:
      return "cp_regression";
    case FitterKind::tucker_regression:
      return "tucker_regression";
  }
  return "";
}

FitterKind parse_fitter(const std::string& name) {
  for (auto k : {FitterKind::oracle_krr, FitterKind::cp_regression, FitterKind::tucker_regression}) {
    if (fitter_name(k) == name) return k;
  }
  throw ArgumentError("unknown fitter '" + name +
                      "' (expected oracle_krr, cp_regression or tucker_regression)");
}

std::string criterion_name(Criterion c) {
  switch (c) {
    case Criterion::optimism:
      return "optimism";
    case Criterion::optimism_closed:
      return "optimism_closed";
    case Criterion::aic:
      return "aic";
    case Criterion::bic:
      return "bic";
    case Criterion::cv:
      return "cv";
    case Criterion::train_mse:
      return "train_mse";
    case Criterion::test_mse:
      return "test_mse";
  }
  return "";
}

Criterion parse_criterion(const std::string& name) {
  for (std::size_t i = 0; i < kCriterionCount; ++i) {
    const auto c = static_cast<Criterion>(i);
    if (criterion_name(c) == name) return c;
  }
  throw ArgumentError("unknown criterion '" + name + "'");
}

OptimismEstimate OptimismEstimate::from_values(std::vector<double> values, bool keep) {
  OptimismEstimate e;
  e.replicates = values.size();
  if (values.empty()) return e;
  const double m = static_cast<double>(values.size());
  e.mean = pairwise_sum(values.data(), values.size()) / m;
  if (values.size() >= 2) {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      sq[i] = (values[i] - e.mean) * (values[i] - e.mean);
    }
    e.stderr = std::sqrt(pairwise_sum(sq.data(), sq.size()) / (m - 1.0)) / std::sqrt(m);
  }
  if (keep) e.per_replicate = std::move(values);
  return e;
}

const std::vector<double>& SweepReport::values(std::size_t rank_index, Criterion c) const {
  const auto it = std::find(criteria.begin(), criteria.end(), c);
  if (it == criteria.end()) {
    throw ArgumentError("criterion " + criterion_name(c) + " was not requested");
  }
  if (rank_index >= per_replicate.size()) {
    throw ArgumentError("per-replicate values were not kept for this rank");
  }
  return per_replicate[rank_index][static_cast<std::size_t>(it - criteria.begin())];
}

double resolve_lambda(const SimConfig& cfg, FitterKind kind) {
  if (cfg.lambda) return *cfg.lambda;
  return kind == FitterKind::oracle_krr ? 1.0 : default_tensor_lambda(cfg.n_train);
}

SweepReport sweep_ranks(const SimConfig& cfg, const FitterSpec& fitter,
                        const std::vector<RankSpec>& ranks, const std::vector<Criterion>& criteria,
                        const McOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (ranks.empty()) throw ArgumentError("sweep needs at least one rank");
  if (cfg.replicates < 2) throw ArgumentError("Monte-Carlo estimation needs at least 2 replicates");
  std::set<std::string> labels;
  for (const auto& r : ranks) {
    check_rank(cfg, fitter.kind, r);
    if (!labels.insert(r.label()).second) throw ArgumentError("duplicate rank " + r.label());
  }
  if (opts.sampling == DesignSampling::projected && fitter.kind != FitterKind::oracle_krr) {
    throw ArgumentError("projected design sampling applies to the oracle fitter only");
  }

  SweepPlan plan;
  plan.cfg = &cfg;
  plan.fitter = &fitter;
  plan.opts = opts;
  plan.lambda = resolve_lambda(cfg, fitter.kind);
  if (fitter.kind == FitterKind::oracle_krr && !(plan.lambda > 0.0)) {
    throw ArgumentError("the oracle fitter needs a positive lambda");
  }
  plan.ranks = ranks;
  for (auto c : criteria) plan.wanted[index_of(c)] = true;
  {
    RandomStream truth_stream(cfg.seed, 0, "truth");
    plan.truth = gen_true_coefficient(cfg.true_kind, cfg.shape, cfg.true_rank, truth_stream);
  }
  plan.true_vec = coefficient_vec(plan.truth);

  if (fitter.kind == FitterKind::oracle_krr) {
    const Tensor b = Tensor::from_vector(cfg.shape, plan.true_vec);
    Eigen::Index total = 0;
    for (const auto& r : ranks) {
      plan.oracle.push_back(oracle_rank(cfg, fitter, plan.truth, b, r));
      plan.oracle.back().offset = total;
      total += plan.oracle.back().components.cols();
    }
    plan.oracle_union.resize(plan.true_vec.size(), total);
    for (const auto& o : plan.oracle) {
      plan.oracle_union.middleCols(o.offset, o.components.cols()) = o.components;
    }
    if (opts.sampling == DesignSampling::projected) {
      Matrix joint(plan.true_vec.size(), total + 1);
      joint.leftCols(total) = plan.oracle_union;
      joint.col(total) = plan.true_vec;
      if (joint.cols() > joint.rows()) {
        throw ArgumentError("projected sampling needs fewer oracle features than tensor entries");
      }
      thin_qr(joint, &plan.projected_mix);
    }
  }

  const std::size_t reps = cfg.replicates;
  const std::size_t nr = ranks.size();
  // values[j][rank] for replicate j.
  std::vector<std::vector<CriterionValues>> values(reps);
  const auto failed = for_each_replicate(reps, opts.exec, [&](std::size_t j) {
    const ReplicateData data = draw_replicate(plan, j);
    const std::uint64_t cv_seed = RandomStream(cfg.seed, j, "cv_seed").next_u64();
    const std::uint64_t fit_seed = RandomStream(cfg.seed, j, "fit_seed").next_u64();
    std::vector<CriterionValues> row(nr);
    for (std::size_t ri = 0; ri < nr; ++ri) {
      row[ri] = fitter.kind == FitterKind::oracle_krr
                    ? evaluate_oracle(plan, data, ri, cv_seed)
                    : evaluate_tensor(plan, data, ri, fit_seed, cv_seed);
      for (auto c : criteria) {
        const double x = row[ri][index_of(c)];
        if (std::isnan(x) || (std::isinf(x) && c != Criterion::aic && c != Criterion::bic)) {
          return false;
        }
      }
    }
    values[j] = std::move(row);
    return true;
  });
  const auto n_failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  check_failures(n_failed, reps);

  SweepReport report;
  report.config = cfg;
  report.ranks = ranks;
  report.criteria = criteria;
  report.lambda = plan.lambda;
  report.failed = n_failed;
  for (std::size_t ri = 0; ri < nr; ++ri) {
    CriterionReport row;
    row.rank_label = ranks[ri].label();
    std::vector<std::vector<double>> kept;
    for (auto c : criteria) {
      std::vector<double> xs;
      xs.reserve(reps - n_failed);
      for (std::size_t j = 0; j < reps; ++j) {
        if (!failed[j]) xs.push_back(values[j][ri][index_of(c)]);
      }
      auto e = OptimismEstimate::from_values(xs, false);
      e.failed = n_failed;
      fill_row(row, c, e);
      if (opts.keep_per_replicate) kept.push_back(std::move(xs));
    }
    report.rows.push_back(std::move(row));
    if (opts.keep_per_replicate) report.per_replicate.push_back(std::move(kept));
  }
  report.elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

OptimismEstimate mc_optimism(const SimConfig& cfg, const FitterSpec& fitter, const RankSpec& rank,
                             const McOptions& opts) {
  McOptions o = opts;
  o.keep_per_replicate = true;
  const SweepReport rep = sweep_ranks(cfg, fitter, {rank}, {Criterion::optimism}, o);
  auto e = OptimismEstimate::from_values(rep.values(0, Criterion::optimism), opts.keep_per_replicate);
  e.failed = rep.failed;
  return e;
}

double paired_stderr(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ArgumentError("paired_stderr: sequences differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return OptimismEstimate::from_values(std::move(d), false).stderr;
}

std::optional<double> criterion_value(const CriterionReport& row, Criterion c) {
  switch (c) {
    case Criterion::optimism:
      return row.optimism_mc_mean;
    case Criterion::optimism_closed:
      return row.optimism_closed;
    case Criterion::aic:
      return row.aic;
    case Criterion::bic:
      return row.bic;
    case Criterion::cv:
      return row.cv_risk;
    case Criterion::train_mse:
      return row.train_mse;
    case Criterion::test_mse:
      return row.test_mse;
  }
  return std::nullopt;
}

Selection select_rank(const std::vector<CriterionReport>& rows, Criterion c,
                      const SelectOptions& opts) {
  if (rows.empty()) throw ArgumentError("select_rank: empty report");
  std::vector<bool> eligible(rows.size(), true);
  for (const auto& row : rows) {
    if (!criterion_value(row, c)) {
      throw ArgumentError("select_rank: criterion " + criterion_name(c) + " missing for rank " +
                          row.rank_label);
    }
  }
  if (opts.stability_filter) {
    std::vector<double> mses;
    for (const auto& row : rows) {
      if (!row.train_mse) {
        throw ArgumentError("select_rank: the stability filter needs train_mse for rank " +
                            row.rank_label);
      }
      mses.push_back(*row.train_mse);
    }
    std::vector<double> sorted = mses;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size() / 2;
    const double median = sorted.size() % 2 == 1 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      eligible[i] = mses[i] <= opts.stability_multiple * median;
    }
  }
  std::optional<std::size_t> best;
  RankSpec best_rank;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!eligible[i]) continue;
    const double v = *criterion_value(rows[i], c);
    const RankSpec r = RankSpec::parse(rows[i].rank_label);
    if (!best) {
      best = i;
      best_rank = r;
      continue;
    }
    const double bv = *criterion_value(rows[*best], c);
    if (v < bv || (v == bv && r < best_rank)) {
      best = i;
      best_rank = r;
    }
  }
  if (!best) throw ArgumentError("select_rank: the stability filter excluded every rank");
  return Selection{rows[*best].rank_label, *criterion_value(rows[*best], c)};
}

Selection select_rank(const SweepReport& report, Criterion c, const SelectOptions& opts) {
  return select_rank(report.rows, c, opts);
}

EnsembleEstimate ensemble_experiment(const SimConfig& cfg, std::size_t k, std::size_t subset_size,
                                     const RankSpec& rank, const FitterSpec& fitter,
                                     const McOptions& opts) {
  cfg.validate();
  if (k < 1) throw ArgumentError("ensemble needs at least one member");
  if (subset_size < 1 || subset_size > cfg.n_train) {
    throw ConfigError("subset_size", "must lie in [1, n_train]");
  }
  if (!rank.is_cp()) throw ArgumentError("ensemble members need a CP rank");
  if (fitter.kind == FitterKind::tucker_regression) {
    throw ArgumentError("ensemble members must be CP models");
  }
  if (opts.sampling != DesignSampling::full) {
    throw ArgumentError("ensembles use full design sampling");
  }
  if (cfg.replicates < 2) throw ArgumentError("Monte-Carlo estimation needs at least 2 replicates");

  SweepPlan plan;
  plan.cfg = &cfg;
  plan.fitter = &fitter;
  plan.opts = opts;
  plan.ranks = {rank};
  // Members see subset_size samples, so the tensor default scales with it.
  plan.lambda = cfg.lambda ? *cfg.lambda
                           : (fitter.kind == FitterKind::oracle_krr
                                  ? 1.0
                                  : default_tensor_lambda(subset_size));
  {
    RandomStream truth_stream(cfg.seed, 0, "truth");
    plan.truth = gen_true_coefficient(cfg.true_kind, cfg.shape, cfg.true_rank, truth_stream);
  }
  plan.true_vec = coefficient_vec(plan.truth);
  OracleRank oracle;
  if (fitter.kind == FitterKind::oracle_krr) {
    oracle = oracle_cp_rank(cfg, fitter, plan.truth, Tensor::from_vector(cfg.shape, plan.true_vec),
                            rank.cp_rank());
  }

  const std::size_t n = cfg.n_train;
  const bool disjoint = k * subset_size <= n;
  const std::size_t reps = cfg.replicates;
  std::vector<std::array<double, 3>> values(reps);
  std::vector<std::size_t> ens_ranks(reps, 0);

  const auto failed = for_each_replicate(reps, opts.exec, [&](std::size_t j) {
    const ReplicateData data = draw_replicate(plan, j);
    const Dataset full(cfg.shape, data.design, data.train.y);
    std::vector<std::vector<std::size_t>> subsets(k);
    if (disjoint) {
      RandomStream s(cfg.seed, j, "ensemble_subsets");
      const auto perm = shuffled_indices(n, s);
      for (std::size_t m = 0; m < k; ++m) {
        subsets[m].assign(perm.begin() + static_cast<std::ptrdiff_t>(m * subset_size),
                          perm.begin() + static_cast<std::ptrdiff_t>((m + 1) * subset_size));
      }
    } else {
      for (std::size_t m = 0; m < k; ++m) {
        RandomStream s(cfg.seed, j * k + m, "ensemble_subsample");
        auto perm = shuffled_indices(n, s);
        subsets[m].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(subset_size));
      }
    }
    const std::uint64_t fit_seed = RandomStream(cfg.seed, j, "fit_seed").next_u64();
    std::vector<FittedModel> members;
    std::vector<double> member_opt;
    for (std::size_t m = 0; m < k; ++m) {
      std::sort(subsets[m].begin(), subsets[m].end());
      const Dataset sub = full.subset(subsets[m]);
      FittedModel model;
      if (fitter.kind == FitterKind::oracle_krr) {
        const Vector w =
            krr_fit(sub.design.transpose() * oracle.components, sub.responses, plan.lambda);
        CpFactors f = oracle.cp;
        f.factors[0] = f.factors[0] * w.asDiagonal();
        model.kind = ModelKind::cp;
        model.coefficient = std::move(f);
        model.lambda = plan.lambda;
      } else {
        model = fit_cp_regression(sub, rank.cp_rank(), plan.lambda,
                                  replicate_fit_options(plan, mix64(fit_seed + m)));
      }
      const Vector b = model.coefficient_vec();
      member_opt.push_back(mse(data.test_y, data.test_design.transpose() * b) -
                           mse(sub.responses, sub.design.transpose() * b));
      members.push_back(std::move(model));
    }
    const std::vector<std::size_t> sizes(k, subset_size);
    const double bound = ensemble_optimism_bound(member_opt, sizes, n);
    const EnsembleModel ens = ensemble_average(std::move(members), sizes);
    const Vector bbar = cp_reconstruct(ens.averaged).flat();
    const double ens_opt = mse(data.test_y, data.test_design.transpose() * bbar) -
                           mse(data.train.y, data.design.transpose() * bbar);
    if (!std::isfinite(ens_opt) || !std::isfinite(bound)) return false;
    values[j] = {ens_opt, bound, bound - ens_opt};
    ens_ranks[j] = ens.ens_rank;
    return true;
  });
  const auto n_failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  check_failures(n_failed, reps);

  EnsembleEstimate out;
  std::array<std::vector<double>, 3> cols;
  for (std::size_t j = 0; j < reps; ++j) {
    if (failed[j]) continue;
    for (std::size_t c = 0; c < 3; ++c) cols[c].push_back(values[j][c]);
    out.max_ens_rank = std::max(out.max_ens_rank, ens_ranks[j]);
  }
  out.ensemble = OptimismEstimate::from_values(cols[0], opts.keep_per_replicate);
  out.bound = OptimismEstimate::from_values(cols[1], opts.keep_per_replicate);
  out.gap = OptimismEstimate::from_values(cols[2], opts.keep_per_replicate);
  out.failed = out.ensemble.failed = out.bound.failed = out.gap.failed = n_failed;
  return out;
}

}  // namespace tensopt
