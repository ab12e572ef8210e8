#include "tensopt/cli.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "tensopt/errors.hpp"
#include "tensopt/parallel.hpp"
#include "tensopt/random.hpp"

namespace tensopt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSweepHeader = "rank,criterion,value,stderr,n_train,noise_frac,lambda,seed";
const char* const kEnsembleHeader = "K,rank,ens_mean,ens_stderr,bound_mean,bound_stderr,seed";

std::size_t get_count(const json& j, const std::string& field) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
    throw ConfigError(field, "must be a nonnegative integer");
  }
  return j.get<std::size_t>();
}

double get_real(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "must be a number");
  return j.get<double>();
}

std::string get_string(const json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "must be a string");
  return j.get<std::string>();
}

RankSpec parse_rank_json(const json& j, const std::string& field) {
  if (j.is_number()) return RankSpec::cp(get_count(j, field));
  if (j.is_string()) {
    try {
      return RankSpec::parse(j.get<std::string>());
    } catch (const ArgumentError& e) {
      throw ConfigError(field, e.what());
    }
  }
  if (j.is_array() && !j.empty()) {
    RankSpec r;
    for (const auto& v : j) r.values.push_back(get_count(v, field));
    return r;
  }
  throw ConfigError(field, "must be an integer, a rank label or a list of mode ranks");
}

json rank_to_json(const RankSpec& r) {
  if (r.is_cp()) return r.cp_rank();
  return r.values;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::vector<RankSpec> parse_rank_list(const std::string& s, const std::string& field) {
  std::vector<RankSpec> out;
  for (const auto& part : split(s, ',')) {
    try {
      out.push_back(RankSpec::parse(part));
    } catch (const ArgumentError& e) {
      throw ConfigError(field, e.what());
    }
  }
  return out;
}

std::vector<Criterion> parse_criterion_list(const std::vector<std::string>& names,
                                            const std::string& field) {
  std::vector<Criterion> out;
  for (const auto& n : names) {
    try {
      const Criterion c = parse_criterion(n);
      if (std::find(out.begin(), out.end(), c) != out.end()) {
        throw ConfigError(field, "criterion '" + n + "' listed twice");
      }
      out.push_back(c);
    } catch (const ArgumentError& e) {
      throw ConfigError(field, e.what());
    }
  }
  return out;
}

std::string iso_time_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    double wall_clock, int threads, const std::vector<std::string>& outputs,
                    json extra) {
  json m;
  m["command"] = command;
  m["artifact_version"] = TENSOPT_VERSION;
  m["config"] = config_to_json(cfg);
  m["seed"] = cfg.sim.seed;
  m["started_at"] = iso_time_now();
  m["wall_clock_seconds"] = wall_clock;
  m["threads"] = threads;
  json paths = json::array();
  for (const auto& o : outputs) paths.push_back((dir / o).string());
  m["outputs"] = paths;
  if (!extra.is_null()) m["results"] = std::move(extra);
  write_atomic((dir / "manifest.json").string(), m.dump(2) + "\n");
}

// Runs `body`, mapping exceptions to exit statuses.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: field '" << e.field() << "': " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

Shape parse_shape_flag(const std::string& s) {
  Shape shape;
  std::string norm = s;
  std::replace(norm.begin(), norm.end(), 'x', ',');
  for (const auto& part : split(norm, ',')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("shape", "malformed shape '" + s + "'");
    }
    const auto d = std::stoull(part);
    if (d == 0) throw ConfigError("shape", "mode sizes must be positive");
    shape.push_back(d);
  }
  if (shape.empty()) throw ConfigError("shape", "must list at least one mode size");
  return shape;
}

void set_report_value(CriterionReport& row, Criterion c, double v) {
  switch (c) {
    case Criterion::optimism:
      row.optimism_mc_mean = v;
      break;
    case Criterion::optimism_closed:
      row.optimism_closed = v;
      break;
    case Criterion::aic:
      row.aic = v;
      break;
    case Criterion::bic:
      row.bic = v;
      break;
    case Criterion::cv:
      row.cv_risk = v;
      break;
    case Criterion::train_mse:
      row.train_mse = v;
      break;
    case Criterion::test_mse:
      row.test_mse = v;
      break;
  }
}

std::pair<double, double> report_mean_stderr(const CriterionReport& row, Criterion c) {
  const auto v = criterion_value(row, c);
  std::optional<double> se;
  switch (c) {
    case Criterion::optimism:
      se = row.mc_stderr;
      break;
    case Criterion::optimism_closed:
      se = row.optimism_closed_stderr;
      break;
    case Criterion::aic:
      se = row.aic_stderr;
      break;
    case Criterion::bic:
      se = row.bic_stderr;
      break;
    case Criterion::cv:
      se = row.cv_stderr;
      break;
    case Criterion::train_mse:
      se = row.train_mse_stderr;
      break;
    case Criterion::test_mse:
      se = row.test_mse_stderr;
      break;
  }
  return {v.value_or(std::nan("")), se.value_or(0.0)};
}

McOptions mc_options(const ExperimentConfig& cfg) {
  McOptions o;
  o.exec = Exec::parallel;
  o.sampling = cfg.sampling;
  o.keep_per_replicate = false;
  o.cv_folds = cfg.cv_folds;
  return o;
}

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& ov) {
  ExperimentConfig cfg = load_config(path);
  ov.apply(cfg);
  cfg.sim.validate();
  return cfg;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  static const std::set<std::string> known{
      "shape",    "true_kind", "true_rank", "n_train",  "n_test",   "noise_frac", "lambda",
      "seed",     "replicates", "fitter",   "ranks",    "criteria", "sampling",   "cv_folds",
      "max_iter", "tol",       "restarts",  "screen_sweeps", "init"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key, "unknown field");
  }
  ExperimentConfig c;
  SimConfig& s = c.sim;
  if (!j.contains("shape")) throw ConfigError("shape", "required field missing");
  if (!j.at("shape").is_array()) throw ConfigError("shape", "must be a list of mode sizes");
  for (const auto& d : j.at("shape")) s.shape.push_back(get_count(d, "shape"));
  if (j.contains("true_kind")) {
    const auto k = get_string(j.at("true_kind"), "true_kind");
    if (k == "cp") {
      s.true_kind = ModelKind::cp;
    } else if (k == "tucker") {
      s.true_kind = ModelKind::tucker;
    } else {
      throw ConfigError("true_kind", "must be \"cp\" or \"tucker\"");
    }
  }
  if (j.contains("true_rank")) s.true_rank = parse_rank_json(j.at("true_rank"), "true_rank");
  if (j.contains("n_train")) s.n_train = get_count(j.at("n_train"), "n_train");
  if (j.contains("n_test")) s.n_test = get_count(j.at("n_test"), "n_test");
  if (j.contains("noise_frac")) s.noise_frac = get_real(j.at("noise_frac"), "noise_frac");
  if (j.contains("lambda") && !j.at("lambda").is_null()) {
    s.lambda = get_real(j.at("lambda"), "lambda");
  }
  if (j.contains("seed")) s.seed = static_cast<std::uint64_t>(get_count(j.at("seed"), "seed"));
  if (j.contains("replicates")) s.replicates = get_count(j.at("replicates"), "replicates");
  if (j.contains("fitter")) {
    try {
      c.fitter = FitterSpec::experiment(parse_fitter(get_string(j.at("fitter"), "fitter")));
    } catch (const ArgumentError& e) {
      throw ConfigError("fitter", e.what());
    }
  }
  if (j.contains("max_iter")) {
    c.fitter.fit.max_iter = get_count(j.at("max_iter"), "max_iter");
    if (c.fitter.fit.max_iter == 0) throw ConfigError("max_iter", "must be positive");
  }
  if (j.contains("tol")) {
    c.fitter.fit.tol = get_real(j.at("tol"), "tol");
    if (!(c.fitter.fit.tol >= 0.0)) throw ConfigError("tol", "must be nonnegative");
  }
  if (j.contains("restarts")) {
    c.fitter.fit.restarts = get_count(j.at("restarts"), "restarts");
    if (c.fitter.fit.restarts == 0) throw ConfigError("restarts", "must be positive");
  }
  if (j.contains("screen_sweeps")) {
    c.fitter.fit.screen_sweeps = get_count(j.at("screen_sweeps"), "screen_sweeps");
  }
  if (j.contains("init")) {
    const auto v = get_string(j.at("init"), "init");
    if (v == "moment") {
      c.fitter.fit.cp_init = CpInit::moment;
      c.fitter.fit.tucker_init = TuckerInit::moment;
    } else if (v == "random") {
      c.fitter.fit.cp_init = CpInit::random;
      c.fitter.fit.tucker_init = TuckerInit::random;
    } else {
      throw ConfigError("init", "must be \"moment\" or \"random\"");
    }
  }
  if (j.contains("ranks")) {
    const auto& r = j.at("ranks");
    if (!r.is_array() || r.empty()) throw ConfigError("ranks", "must be a nonempty list");
    for (const auto& v : r) c.ranks.push_back(parse_rank_json(v, "ranks"));
  } else {
    c.ranks = {s.true_rank};
  }
  if (j.contains("criteria")) {
    const auto& cr = j.at("criteria");
    if (!cr.is_array() || cr.empty()) throw ConfigError("criteria", "must be a nonempty list");
    std::vector<std::string> names;
    for (const auto& v : cr) names.push_back(get_string(v, "criteria"));
    c.criteria = parse_criterion_list(names, "criteria");
  }
  if (j.contains("sampling")) {
    const auto v = get_string(j.at("sampling"), "sampling");
    if (v == "full") {
      c.sampling = DesignSampling::full;
    } else if (v == "projected") {
      c.sampling = DesignSampling::projected;
    } else {
      throw ConfigError("sampling", "must be \"full\" or \"projected\"");
    }
  }
  if (j.contains("cv_folds")) {
    c.cv_folds = get_count(j.at("cv_folds"), "cv_folds");
    if (c.cv_folds < 2) throw ConfigError("cv_folds", "must be at least 2");
  }
  s.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  // A manifest carries the full config of the run it describes.
  if (j.is_object() && j.contains("artifact_version") && j.contains("config")) {
    return parse_config(j.at("config"));
  }
  return parse_config(j);
}

json config_to_json(const ExperimentConfig& c) {
  const SimConfig& s = c.sim;
  json j;
  j["shape"] = s.shape;
  j["true_kind"] = s.true_kind == ModelKind::cp ? "cp" : "tucker";
  j["true_rank"] = rank_to_json(s.true_rank);
  j["n_train"] = s.n_train;
  j["n_test"] = s.n_test;
  j["noise_frac"] = s.noise_frac;
  j["lambda"] = s.lambda ? json(*s.lambda) : json(nullptr);
  j["seed"] = s.seed;
  j["replicates"] = s.replicates;
  j["fitter"] = fitter_name(c.fitter.kind);
  j["max_iter"] = c.fitter.fit.max_iter;
  j["tol"] = c.fitter.fit.tol;
  j["restarts"] = c.fitter.fit.restarts;
  j["screen_sweeps"] = c.fitter.fit.screen_sweeps;
  j["init"] = c.fitter.fit.cp_init == CpInit::moment ? "moment" : "random";
  json ranks = json::array();
  for (const auto& r : c.ranks) ranks.push_back(rank_to_json(r));
  j["ranks"] = ranks;
  json crit = json::array();
  for (auto cr : c.criteria) crit.push_back(criterion_name(cr));
  j["criteria"] = crit;
  j["sampling"] = c.sampling == DesignSampling::full ? "full" : "projected";
  j["cv_folds"] = c.cv_folds;
  return j;
}

void Overrides::apply(ExperimentConfig& c) const {
  if (seed) c.sim.seed = *seed;
  if (replicates) c.sim.replicates = *replicates;
  if (n_train) c.sim.n_train = *n_train;
  if (n_test) c.sim.n_test = *n_test;
  if (noise_frac) c.sim.noise_frac = *noise_frac;
  if (lambda) c.sim.lambda = *lambda;
  if (fitter) {
    try {
      const FitOptions keep = c.fitter.fit;
      c.fitter = FitterSpec::experiment(parse_fitter(*fitter));
      c.fitter.fit = keep;
    } catch (const ArgumentError& e) {
      throw ConfigError("fitter", e.what());
    }
  }
  if (ranks) c.ranks = parse_rank_list(*ranks, "ranks");
  if (criteria) c.criteria = parse_criterion_list(split(*criteria, ','), "criteria");
}

int resolve_threads(int flag) { return threads_from_env(flag); }

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_atomic(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, const Overrides& ov,
              int threads, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_with_overrides(config_path, ov);
    const int used = resolve_threads(threads);
    set_thread_count(used);
    const auto start = std::chrono::steady_clock::now();
    const SweepReport rep = sweep_ranks(cfg.sim, cfg.fitter, cfg.ranks, cfg.criteria, mc_options(cfg));

    std::string csv = std::string(kSweepHeader) + "\n";
    for (const auto& row : rep.rows) {
      for (auto c : cfg.criteria) {
        const auto [v, se] = report_mean_stderr(row, c);
        csv += row.rank_label + "," + criterion_name(c) + "," + format_double(v) + "," +
               format_double(se) + "," + std::to_string(cfg.sim.n_train) + "," +
               format_double(cfg.sim.noise_frac) + "," + format_double(rep.lambda) + "," +
               std::to_string(cfg.sim.seed) + "\n";
      }
    }
    const fs::path dir(out_dir);
    write_atomic((dir / "sweep.csv").string(), csv);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json extra;
    extra["failed_replicates"] = rep.failed;
    extra["lambda"] = rep.lambda;
    write_manifest(dir, "sweep", cfg, wall, used, {"sweep.csv"}, extra);
    out << "wrote " << (dir / "sweep.csv").string() << " (" << rep.rows.size() << " ranks, "
        << rep.failed << " failed replicates)\n";
    return kExitOk;
  });
}

int cmd_select(const std::string& sweep_csv, const std::string& criterion,
               const SelectOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Criterion crit = parse_criterion(criterion);
    std::ifstream in(sweep_csv);
    if (!in) throw ArgumentError("cannot read '" + sweep_csv + "'");
    std::string line;
    if (!std::getline(in, line)) throw ArgumentError("'" + sweep_csv + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kSweepHeader) {
      throw ArgumentError("'" + sweep_csv + "' does not start with the sweep header");
    }
    std::vector<CriterionReport> rows;
    std::map<std::string, std::size_t> index;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split(line, ',');
      double v = 0.0;
      if (f.size() != 8 || !parse_double(f[2], v)) {
        throw ArgumentError("malformed sweep row at line " + std::to_string(lineno));
      }
      const Criterion c = parse_criterion(f[1]);
      RankSpec::parse(f[0]);
      auto it = index.find(f[0]);
      if (it == index.end()) {
        it = index.emplace(f[0], rows.size()).first;
        rows.push_back(CriterionReport{});
        rows.back().rank_label = f[0];
      }
      set_report_value(rows[it->second], c, v);
    }
    if (rows.empty()) throw ArgumentError("'" + sweep_csv + "' has no data rows");
    const Selection sel = select_rank(rows, crit, opts);
    json j;
    j["criterion"] = criterion_name(crit);
    j["rank"] = sel.rank_label;
    j["value"] = sel.value;
    out << j.dump() << "\n";
    return kExitOk;
  });
}

int cmd_ensemble(const std::string& config_path, const std::vector<std::size_t>& ks,
                 std::size_t nk, const std::string& out_dir, const Overrides& ov, int threads,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_with_overrides(config_path, ov);
    if (ks.empty()) throw ConfigError("K", "at least one ensemble size is required");
    for (auto k : ks) {
      if (k < 1) throw ConfigError("K", "ensemble sizes must be positive");
    }
    if (nk < 1 || nk > cfg.sim.n_train) throw ConfigError("nk", "must lie in [1, n_train]");
    for (const auto& r : cfg.ranks) {
      if (!r.is_cp()) throw ConfigError("ranks", "ensembles need CP ranks, got " + r.label());
    }
    const int used = resolve_threads(threads);
    set_thread_count(used);
    const auto start = std::chrono::steady_clock::now();
    std::string csv = std::string(kEnsembleHeader) + "\n";
    json extra = json::array();
    for (const auto& r : cfg.ranks) {
      for (auto k : ks) {
        const EnsembleEstimate e = ensemble_experiment(cfg.sim, k, nk, r, cfg.fitter, mc_options(cfg));
        csv += std::to_string(k) + "," + r.label() + "," + format_double(e.ensemble.mean) + "," +
               format_double(e.ensemble.stderr) + "," + format_double(e.bound.mean) + "," +
               format_double(e.bound.stderr) + "," + std::to_string(cfg.sim.seed) + "\n";
        json row;
        row["K"] = k;
        row["rank"] = r.label();
        row["gap_mean"] = e.gap.mean;
        row["gap_stderr"] = e.gap.stderr;
        row["max_ens_rank"] = e.max_ens_rank;
        row["failed_replicates"] = e.failed;
        extra.push_back(row);
      }
    }
    const fs::path dir(out_dir);
    write_atomic((dir / "ensemble.csv").string(), csv);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json results;
    results["nk"] = nk;
    results["K"] = ks;
    results["rows"] = extra;
    write_manifest(dir, "ensemble", cfg, wall, used, {"ensemble.csv"}, results);
    out << "wrote " << (dir / "ensemble.csv").string() << "\n";
    return kExitOk;
  });
}

FitOptions fit_command_fit_options(const FitCommandOptions& o) {
  FitOptions f;
  f.max_iter = o.max_iter;
  f.tol = o.tol;
  f.seed = o.seed;
  f.restarts = o.restarts;
  f.cp_init = CpInit::moment;
  f.tucker_init = TuckerInit::moment;
  f.exec = Exec::parallel;
  return f;
}

Dataset read_data_csv(const std::string& path, const Shape& shape) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read '" + path + "'");
  const std::size_t d = num_elements(shape);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != d + 1) {
      throw ArgumentError("row " + std::to_string(lineno) + " has " +
                          std::to_string(fields.size()) + " fields, expected " +
                          std::to_string(d + 1) + " (prod of shape + 1)");
    }
    std::vector<double> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_double(fields[i], v[i])) {
        throw ArgumentError("row " + std::to_string(lineno) + ", field " + std::to_string(i + 1) +
                            ": not a number");
      }
    }
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw ArgumentError("'" + path + "' has no data rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix design(static_cast<Eigen::Index>(d), n);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < d; ++k) design(static_cast<Eigen::Index>(k), i) = r[k];
    y[i] = r[d];
  }
  return Dataset(shape, std::move(design), std::move(y));
}

int cmd_fit(const std::string& data_csv, const std::string& shape_flag, const std::string& model,
            const std::string& rank_flag, const FitCommandOptions& opts, std::ostream& out,
            std::ostream& err) {
  return guarded(err, [&] {
    const Shape shape = parse_shape_flag(shape_flag);
    if (model != "cp" && model != "tucker") {
      throw ConfigError("model", "must be \"cp\" or \"tucker\"");
    }
    std::string norm = rank_flag;
    std::replace(norm.begin(), norm.end(), ',', 'x');
    RankSpec rank;
    try {
      rank = RankSpec::parse(norm);
    } catch (const ArgumentError& e) {
      throw ConfigError("rank", e.what());
    }
    for (auto r : rank.values) {
      if (r == 0) throw ConfigError("rank", "ranks must be positive");
    }
    if (model == "cp" && !rank.is_cp()) throw ConfigError("rank", "CP needs a single rank");
    if (model == "tucker" && rank.values.size() != shape.size()) {
      throw ConfigError("rank", "Tucker needs one rank per mode");
    }
    if (opts.folds < 2) throw ConfigError("folds", "must be at least 2");
    if (!(opts.holdout_fraction > 0.0 && opts.holdout_fraction < 1.0)) {
      throw ConfigError("holdout", "fraction must lie in (0, 1)");
    }
    const Dataset d = read_data_csv(data_csv, shape);
    const double lambda = opts.lambda ? *opts.lambda : default_tensor_lambda(d.size());
    if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be nonnegative");
    const FitOptions fo = fit_command_fit_options(opts);
    auto fit = [&](const Dataset& data) {
      return model == "cp" ? fit_cp_regression(data, rank.cp_rank(), lambda, fo)
                           : fit_tucker_regression(data, rank.tucker_ranks(), lambda, fo);
    };
    const FittedModel m = fit(d);
    const Fitter fitter = [&](const Dataset& train) -> Predictor {
      const Vector b = fit(train).coefficient_vec();
      return [b](const Matrix& design) -> Vector { return design.transpose() * b; };
    };
    const double cv = cv_risk(d, fitter, opts.folds, opts.seed);

    const std::size_t n_hold =
        std::max<std::size_t>(1, static_cast<std::size_t>(opts.holdout_fraction * d.size()));
    if (n_hold >= d.size()) throw ConfigError("holdout", "leaves no training rows");
    std::vector<double> opt;
    for (std::size_t s = 0; s < opts.splits; ++s) {
      RandomStream stream(opts.seed, s, "holdout_split");
      const auto perm = shuffled_indices(d.size(), stream);
      std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
      std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_hold), perm.end());
      const Dataset tr = d.subset(train);
      const Dataset te = d.subset(test);
      const Vector b = fit(tr).coefficient_vec();
      opt.push_back((te.responses - te.design.transpose() * b).squaredNorm() /
                        static_cast<double>(te.size()) -
                    (tr.responses - tr.design.transpose() * b).squaredNorm() /
                        static_cast<double>(tr.size()));
    }
    const auto est = OptimismEstimate::from_values(opt, false);

    json j;
    j["model"] = model;
    j["rank"] = rank.label();
    j["shape"] = shape;
    j["n"] = d.size();
    j["lambda"] = lambda;
    j["train_mse"] = m.train_mse;
    j["cv_risk"] = cv;
    j["cv_folds"] = opts.folds;
    j["holdout_optimism"] = {{"mean", est.mean},
                             {"stderr", est.stderr},
                             {"splits", opts.splits},
                             {"holdout_fraction", opts.holdout_fraction}};
    j["iterations"] = m.meta.iterations;
    j["converged"] = m.meta.converged;
    j["seed"] = opts.seed;
    j["artifact_version"] = TENSOPT_VERSION;
    write_atomic(opts.out_path, j.dump(2) + "\n");
    out << j.dump() << "\n";
    return kExitOk;
  });
}

int cmd_generate(const std::string& config_path, std::size_t replicate, const std::string& out_csv,
                 const Overrides& ov, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_with_overrides(config_path, ov);
    const SimConfig& s = cfg.sim;
    RandomStream truth_stream(s.seed, 0, "truth");
    const Vector b = coefficient_vec(gen_true_coefficient(s.true_kind, s.shape, s.true_rank,
                                                          truth_stream));
    RandomStream train_x(s.seed, replicate, "train_x");
    RandomStream train_noise(s.seed, replicate, "train_noise");
    const Matrix x = gen_design(s.n_train, s.shape, train_x);
    const Responses r = gen_responses(b, x, s.noise_frac, train_noise);
    std::string csv;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      for (Eigen::Index k = 0; k < x.rows(); ++k) csv += format_double(x(k, i)) + ",";
      csv += format_double(r.y[i]) + "\n";
    }
    write_atomic(out_csv, csv);
    out << "wrote " << out_csv << " (" << x.cols() << " rows)\n";
    return kExitOk;
  });
}

}  // namespace tensopt::cli
