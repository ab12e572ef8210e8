#include "tensopt/optimism.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "tensopt/errors.hpp"
#include "tensopt/random.hpp"

namespace tensopt {

namespace {

double ratio_sum(const Vector& v, double lambda) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += shrinkage_ratio(v[i], lambda);
  return s;
}

double min_positive(const Vector& v) {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) m = std::min(m, v[i]);
  }
  return m;
}

}  // namespace

SpectrumSummary SpectrumSummary::from_values(const Vector& values, SpectrumSource source) {
  std::vector<double> v(values.data(), values.data() + values.size());
  std::stable_sort(v.begin(), v.end(), std::greater<>());
  SpectrumSummary out;
  out.source = source;
  out.eigenvalues = Vector::Zero(static_cast<Eigen::Index>(v.size()));
  const double top = v.empty() ? 0.0 : std::max(v.front(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.eigenvalues[static_cast<Eigen::Index>(i)] = v[i] > 1e-10 * top ? v[i] : 0.0;
  }
  return out;
}

Matrix cp_population_covariance(const CpFactors& f) {
  const Matrix g = cp_components(f);
  return g.transpose() * g;
}

SpectrumSummary cp_spectrum(const CpFactors& f) {
  return SpectrumSummary::from_values(sym_eig(cp_population_covariance(f)).values,
                                      SpectrumSource::cp);
}

SpectrumSummary component_spectrum(const Matrix& components, SpectrumSource source) {
  if (components.cols() == 0) return SpectrumSummary{Vector(), source};
  return SpectrumSummary::from_values(sym_eig(components.transpose() * components).values, source);
}

SpectrumSummary tucker_kron_spectrum(const TuckerFactors& f) {
  validate(f);
  std::vector<double> acc{1.0};
  for (const auto& u : f.factors) {
    const Vector v = sym_eig(u.transpose() * u).values;
    std::vector<double> next;
    next.reserve(acc.size() * static_cast<std::size_t>(v.size()));
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      for (double a : acc) next.push_back(a * v[j]);
    }
    acc = std::move(next);
  }
  return SpectrumSummary::from_values(
      Eigen::Map<const Vector>(acc.data(), static_cast<Eigen::Index>(acc.size())),
      SpectrumSource::tucker_kron);
}

double shrinkage_ratio(double v, double lambda) {
  if (v <= 0.0) return 0.0;
  if (lambda == 0.0) return 1.0;
  const double r = v / (v + lambda);
  return r * r;
}

double optimism_closed_form(const SpectrumSummary& spec, const OptimismInputs& in) {
  if (!(in.sigma_sq >= 0.0) || !(in.lambda >= 0.0) || !(in.delta_norm_sq >= 0.0) ||
      !(in.err_norm_sq >= 0.0)) {
    throw ArgumentError("optimism inputs must be nonnegative");
  }
  if (in.n == 0) throw ArgumentError("optimism inputs: n must be positive");
  for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i) {
    if (spec.eigenvalues[i] < 0.0) throw ArgumentError("spectrum has a negative eigenvalue");
  }
  if (spec.eigenvalues.size() == 0) return 0.0;
  const double n = static_cast<double>(in.n);
  const double v1 = spec.eigenvalues[0];
  const double lead = v1 > 0.0 ? in.lambda * in.lambda * v1 / ((v1 + in.lambda) * (v1 + in.lambda))
                               : 0.0;
  const double s = ratio_sum(spec.eigenvalues, in.lambda);
  return 2.0 * (in.sigma_sq + lead) / n * s + 2.0 * (in.delta_norm_sq + in.err_norm_sq) / n * s;
}

GapResult proposition_gap(const SpectrumSummary& true_spec, const SpectrumSummary& alt_spec,
                          const OptimismInputs& in, GapCase which) {
  OptimismInputs base = in;
  base.delta_norm_sq = 0.0;
  base.err_norm_sq = 0.0;
  OptimismInputs alt = base;
  if (which == GapCase::under) alt.delta_norm_sq = in.delta_norm_sq;
  GapResult out;
  out.gap = optimism_closed_form(alt_spec, alt) - optimism_closed_form(true_spec, base);
  const double vmin = std::min(min_positive(true_spec.eigenvalues), min_positive(alt_spec.eigenvalues));
  out.lambda_small = !std::isfinite(vmin) || in.lambda <= 1e-3 * vmin;
  return out;
}

double ensemble_optimism_bound(std::span<const double> member_optimisms,
                               std::span<const std::size_t> subset_sizes, std::size_t n) {
  if (member_optimisms.size() != subset_sizes.size()) {
    throw ArgumentError("ensemble bound: one subset size per member optimism required");
  }
  if (n == 0) throw ArgumentError("ensemble bound: n must be positive");
  double acc = 0.0;
  for (std::size_t k = 0; k < subset_sizes.size(); ++k) {
    if (subset_sizes[k] == 0 || subset_sizes[k] > n) {
      throw ArgumentError("ensemble bound: subset sizes must lie in [1, n]");
    }
    acc += static_cast<double>(subset_sizes[k]) / static_cast<double>(n) * member_optimisms[k];
  }
  return acc;
}

double additive_disjoint_optimism(std::span<const double> part_optimisms) {
  return std::accumulate(part_optimisms.begin(), part_optimisms.end(), 0.0);
}

RffResult rff_stationary_optimism(double lengthscale, std::size_t dim, std::size_t pairs,
                                  std::uint64_t seed, const OptimismInputs& in,
                                  const Matrix& samples) {
  if (pairs < 1) throw ArgumentError("rff: need at least one feature pair");
  if (!(lengthscale > 0.0)) throw ArgumentError("rff: lengthscale must be positive");
  if (static_cast<std::size_t>(samples.cols()) != dim) {
    throw ArgumentError("rff: sample rows must have length dim");
  }
  if (samples.rows() < 1) throw ArgumentError("rff: need at least one sample");
  RandomStream stream(seed, 0, "rff_omega");
  const Matrix omega = stream.normal_matrix(static_cast<Eigen::Index>(dim),
                                            static_cast<Eigen::Index>(pairs)) /
                       lengthscale;
  const Matrix proj = samples * omega;
  const double scale = 1.0 / std::sqrt(static_cast<double>(pairs));
  Matrix z(samples.rows(), static_cast<Eigen::Index>(2 * pairs));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(pairs); ++j) {
    z.col(2 * j) = proj.col(j).array().cos() * scale;
    z.col(2 * j + 1) = proj.col(j).array().sin() * scale;
  }
  // The pairs are not mutually orthogonal, so the spectrum is taken jointly.
  // z^T z and z z^T share their nonzero eigenvalues; use the smaller Gram.
  const double ns = static_cast<double>(samples.rows());
  const bool wide = z.cols() > z.rows();
  const Matrix gram = wide ? Matrix(z * z.transpose() / ns) : Matrix(z.transpose() * z / ns);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  Vector values = Vector::Zero(z.cols());
  values.head(eig.eigenvalues().size()) = eig.eigenvalues();
  RffResult out;
  out.spectrum = SpectrumSummary::from_values(values, SpectrumSource::empirical);
  out.optimism = optimism_closed_form(out.spectrum, in);
  return out;
}

InfoCriteria aic_bic(double train_rss, std::size_t n, double p_eff) {
  if (!(train_rss > 0.0)) throw ArgumentError("aic_bic: residual sum of squares must be positive");
  if (n < 2) throw ArgumentError("aic_bic: need at least 2 samples");
  const double nn = static_cast<double>(n);
  const double fit = nn * std::log(train_rss / nn);
  return {fit + 2.0 * p_eff, fit + p_eff * std::log(nn)};
}

std::size_t cp_parameter_count(const Shape& shape, std::size_t rank) {
  return rank * std::accumulate(shape.begin(), shape.end(), std::size_t{0});
}

std::size_t tucker_parameter_count(const Shape& shape, const Shape& ranks) {
  if (shape.size() != ranks.size()) throw ArgumentError("parameter count: rank count mismatch");
  std::size_t p = num_elements(ranks);
  for (std::size_t m = 0; m < shape.size(); ++m) p += shape[m] * ranks[m];
  return p;
}

std::vector<std::size_t> fold_offsets(std::size_t n, std::size_t k) {
  if (k < 2 || k > n) throw ArgumentError("cv: fold count must lie in [2, n]");
  std::vector<std::size_t> off{0};
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  for (std::size_t j = 0; j < k; ++j) off.push_back(off.back() + base + (j < extra ? 1 : 0));
  return off;
}

double cv_risk(const Dataset& d, const Fitter& fitter, std::size_t k, std::uint64_t seed) {
  const auto off = fold_offsets(d.size(), k);
  RandomStream stream(seed, 0, "cv");
  const auto perm = shuffled_indices(d.size(), stream);
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(off[j]),
                                  perm.begin() + static_cast<std::ptrdiff_t>(off[j + 1]));
    train.insert(train.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(off[j]));
    train.insert(train.end(), perm.begin() + static_cast<std::ptrdiff_t>(off[j + 1]), perm.end());
    const Dataset held = d.subset(test);
    const Predictor predictor = fitter(d.subset(train));
    acc += (held.responses - predictor(held.design)).squaredNorm() /
           static_cast<double>(held.size());
  }
  return acc / static_cast<double>(k);
}

}  // namespace tensopt
