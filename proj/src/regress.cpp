#include "tensopt/regress.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tensopt/errors.hpp"
#include "tensopt/kernels.hpp"
#include "tensopt/random.hpp"

namespace tensopt {

namespace {

void check_fit_inputs(const Dataset& d, double lambda) {
  if (d.size() == 0) throw ArgumentError("cannot fit an empty dataset");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("ridge parameter must be finite and nonnegative");
  }
}

// Solves the PSD system a x = b; when a is singular (e.g. a rank-deficient
// core leaves directions of U_m unidentified) returns the minimum-norm
// solution, which still minimizes the block objective.
Vector psd_solve(const Matrix& a, const Vector& b) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success && llt.rcond() >= 1e-14) return llt.solve(b);
  return a.completeOrthogonalDecomposition().solve(b);
}

Tensor moment_estimate(const Dataset& d) {
  return Tensor::from_vector(d.shape, d.design * d.responses / static_cast<double>(d.size()));
}

double factor_penalty(const CpFactors& f) {
  double acc = 0.0;
  for (const auto& b : f.factors) acc += b.squaredNorm();
  return acc;
}

std::vector<Matrix> transposed(const std::vector<Matrix>& mats) {
  std::vector<Matrix> out;
  out.reserve(mats.size());
  for (const auto& m : mats) out.push_back(m.transpose());
  return out;
}

bool has_converged(double prev, double cur, double tol) {
  return cur <= 0.0 || (std::isfinite(prev) && (prev - cur) <= tol * prev);
}

CpFactors initial_cp(const Dataset& d, std::size_t rank, const FitOptions& opts,
                     std::size_t restart) {
  if (opts.cp_init == CpInit::moment && restart == 0) {
    CpAlsOptions als;
    als.max_iter = 30;
    als.tol = 1e-4;
    als.seed = mix64(opts.seed);
    als.restarts = 1;
    CpFactors f = cp_als(moment_estimate(d), rank, als).approx;
    bool nonzero = true;
    for (const auto& b : f.factors) nonzero = nonzero && b.squaredNorm() > 0.0;
    if (nonzero) return f;
  }
  RandomStream stream(opts.seed, restart, "cp_fit_init");
  CpFactors f;
  for (auto dim : d.shape) {
    f.factors.push_back(stream.normal_matrix(static_cast<Eigen::Index>(dim),
                                             static_cast<Eigen::Index>(rank)));
  }
  return f;
}

struct CpFitRun {
  CpFactors factors;
  FitMeta meta;
  double objective = std::numeric_limits<double>::infinity();
  double prev = std::numeric_limits<double>::infinity();
};

// Continues `run` for up to `sweeps` more sweeps or until converged.
void advance_cp_fit(const Dataset& d, const std::vector<Matrix>& unfolded, double lambda,
                    const FitOptions& opts, std::size_t sweeps, CpFitRun& run) {
  const auto r = static_cast<Eigen::Index>(run.factors.rank());
  const Vector& y = d.responses;
  Vector pred;
  for (std::size_t step = 0; step < sweeps && !run.meta.converged; ++step) {
    const std::size_t sweep = run.meta.iterations + 1;
    for (std::size_t m = 0; m < d.shape.size(); ++m) {
      const Matrix z =
          kernels::mttkrp_unfolded(unfolded[m], d.shape, run.factors.factors, m, opts.exec);
      const Vector w = ridge_solve(z, y, lambda);
      run.factors.factors[m] = Eigen::Map<const Matrix>(w.data(),
                                                        static_cast<Eigen::Index>(d.shape[m]), r);
      if (m + 1 == d.shape.size()) pred = z * w;
    }
    balance_columns(run.factors);
    const double obj = (y - pred).squaredNorm() + lambda * factor_penalty(run.factors);
    if (!std::isfinite(obj)) {
      throw NumericalError("CP regression: non-finite objective in sweep " + std::to_string(sweep));
    }
    run.meta.objective_trace.push_back(obj);
    run.meta.iterations = sweep;
    run.objective = obj;
    run.meta.converged = has_converged(run.prev, obj, opts.tol);
    run.prev = obj;
  }
}

CpFitRun start_cp_fit(const Dataset& d, std::size_t rank, const FitOptions& opts,
                      std::size_t restart) {
  CpFitRun run;
  run.factors = initial_cp(d, rank, opts, restart);
  balance_columns(run.factors);
  return run;
}

}  // namespace

Dataset::Dataset(Shape shape_in, Matrix design_in, Vector responses_in)
    : shape(std::move(shape_in)), design(std::move(design_in)), responses(std::move(responses_in)) {
  if (shape.empty()) throw ArgumentError("dataset shape needs at least one mode");
  if (static_cast<std::size_t>(design.rows()) != num_elements(shape)) {
    throw ArgumentError("design rows do not match the covariate shape");
  }
  if (design.cols() != responses.size()) {
    throw ArgumentError("design has " + std::to_string(design.cols()) + " samples but " +
                        std::to_string(responses.size()) + " responses");
  }
}

Dataset Dataset::from_tensors(const std::vector<Tensor>& xs, const Vector& y) {
  if (xs.empty()) throw ArgumentError("dataset needs at least one covariate");
  const Shape& shape = xs.front().shape();
  Matrix design(static_cast<Eigen::Index>(num_elements(shape)),
                static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != shape) {
      throw ArgumentError("covariate " + std::to_string(i) + " has a different shape");
    }
    design.col(static_cast<Eigen::Index>(i)) = xs[i].flat();
  }
  return Dataset(shape, std::move(design), y);
}

Tensor Dataset::covariate(std::size_t i) const {
  return Tensor::from_vector(shape, design.col(static_cast<Eigen::Index>(i)));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Matrix x(design.rows(), static_cast<Eigen::Index>(rows.size()));
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j] >= size()) throw ArgumentError("subset index out of range");
    x.col(static_cast<Eigen::Index>(j)) = design.col(static_cast<Eigen::Index>(rows[j]));
    y[static_cast<Eigen::Index>(j)] = responses[static_cast<Eigen::Index>(rows[j])];
  }
  return Dataset(shape, std::move(x), std::move(y));
}

Tensor FittedModel::reconstruct() const {
  return Tensor::from_vector(std::visit([](const auto& f) { return f.shape(); }, coefficient),
                             coefficient_vec());
}

double default_tensor_lambda(std::size_t n) { return 1e-6 * static_cast<double>(n); }

Vector cp_feature_map(const CpFactors& f, const Tensor& x) {
  validate(f);
  if (f.shape() != x.shape()) throw ArgumentError("cp_feature_map: shape mismatch");
  return cp_components(f).transpose() * x.flat();
}

Vector tucker_feature_map(const TuckerFactors& f, const Tensor& x) {
  validate(f);
  if (f.shape() != x.shape()) throw ArgumentError("tucker_feature_map: shape mismatch");
  return kernels::multi_mode_product(Matrix(x.flat()), x.shape(), transposed(f.factors),
                                     x.order(), Exec::serial)
      .col(0);
}

Matrix cp_feature_matrix(const CpFactors& f, const Matrix& design, Exec exec) {
  validate(f);
  return kernels::cp_features(design, f.shape(), f.factors, exec);
}

Matrix tucker_feature_matrix(const TuckerFactors& f, const Matrix& design, Exec exec) {
  validate(f);
  return kernels::multi_mode_product(design, f.shape(), transposed(f.factors), f.factors.size(),
                                     exec)
      .transpose();
}

FittedModel fit_cp_regression(const Dataset& d, std::size_t rank, double lambda,
                              const FitOptions& opts) {
  check_fit_inputs(d, lambda);
  if (rank < 1) throw ArgumentError("CP regression rank must be at least 1");
  if (opts.max_iter < 1) throw ArgumentError("max_iter must be at least 1");

  const std::size_t restarts = std::max<std::size_t>(opts.restarts, 1);
  const bool screen = restarts > 1 && opts.screen_sweeps > 0;
  std::vector<Matrix> unfolded;
  for (std::size_t m = 0; m < d.shape.size(); ++m) {
    unfolded.push_back(kernels::unfold_design(d.design, d.shape, m));
  }
  CpFitRun best;
  for (std::size_t s = 0; s < restarts; ++s) {
    CpFitRun run = start_cp_fit(d, rank, opts, s);
    advance_cp_fit(d, unfolded, lambda, opts, screen ? opts.screen_sweeps : opts.max_iter, run);
    if (run.objective < best.objective) best = std::move(run);
  }
  if (screen) {
    advance_cp_fit(d, unfolded, lambda, opts, opts.max_iter - best.meta.iterations, best);
  }

  FittedModel model;
  model.kind = ModelKind::cp;
  model.lambda = lambda;
  model.meta = std::move(best.meta);
  model.coefficient = std::move(best.factors);
  model.train_mse = (d.responses - predict(model, d.design)).squaredNorm() /
                    static_cast<double>(d.size());
  return model;
}

FittedModel fit_tucker_regression(const Dataset& d, const Shape& ranks, double lambda,
                                  const FitOptions& opts) {
  check_fit_inputs(d, lambda);
  const Shape& shape = d.shape;
  if (ranks.size() != shape.size()) throw ArgumentError("Tucker regression: one rank per mode");
  for (std::size_t m = 0; m < shape.size(); ++m) {
    if (ranks[m] < 1 || ranks[m] > shape[m]) {
      throw ArgumentError("Tucker regression: rank for mode " + std::to_string(m) +
                          " outside [1, " + std::to_string(shape[m]) + "]");
    }
  }
  if (opts.max_iter < 1) throw ArgumentError("max_iter must be at least 1");

  std::vector<Matrix> u;
  if (opts.tucker_init == TuckerInit::moment) {
    HooiOptions hooi;
    hooi.max_iter = 10;
    hooi.tol = 1e-6;
    u = tucker_hooi(moment_estimate(d), ranks, hooi).approx.factors;
  } else {
    RandomStream stream(opts.seed, 0, "tucker_fit_init");
    for (std::size_t m = 0; m < shape.size(); ++m) {
      u.push_back(thin_qr(stream.normal_matrix(static_cast<Eigen::Index>(shape[m]),
                                               static_cast<Eigen::Index>(ranks[m]))));
    }
  }

  const Vector& y = d.responses;
  Vector pred;
  auto core_step = [&]() {
    const Matrix f = kernels::multi_mode_product(d.design, shape, transposed(u), shape.size(),
                                                 opts.exec)
                         .transpose();
    const Vector g = ridge_solve(f, y, lambda);
    pred = f * g;
    return Tensor::from_vector(ranks, g);
  };

  Tensor core = core_step();
  FitMeta meta;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t sweep = 1; sweep <= opts.max_iter; ++sweep) {
    for (std::size_t m = 0; m < shape.size(); ++m) {
      const Matrix w = kernels::multi_mode_product(d.design, shape, transposed(u), m, opts.exec);
      Shape pshape = ranks;
      pshape[m] = shape[m];
      const Matrix z = kernels::unfold_times(w, pshape, core, m, opts.exec);
      const Matrix gm = mode_unfold(core, m);
      Matrix a = z.transpose() * z;
      // ||B||^2 = vec(U_m)^T (G_(m) G_(m)^T ⊗ I) vec(U_m) while the other
      // factors are orthonormal.
      a += lambda * kronecker(gm * gm.transpose(),
                              Matrix::Identity(static_cast<Eigen::Index>(shape[m]),
                                               static_cast<Eigen::Index>(shape[m])));
      const Vector sol = psd_solve(a, z.transpose() * y);
      const Matrix um = Eigen::Map<const Matrix>(sol.data(), static_cast<Eigen::Index>(shape[m]),
                                                 static_cast<Eigen::Index>(ranks[m]));
      Matrix r;
      u[m] = thin_qr(um, &r);
      core = mode_product(core, r, m);
    }
    core = core_step();
    const double obj = (y - pred).squaredNorm() + lambda * core.flat().squaredNorm();
    if (!std::isfinite(obj)) {
      throw NumericalError("Tucker regression: non-finite objective in sweep " +
                           std::to_string(sweep));
    }
    meta.objective_trace.push_back(obj);
    meta.iterations = sweep;
    if (has_converged(prev, obj, opts.tol)) {
      meta.converged = true;
      break;
    }
    prev = obj;
  }

  FittedModel model;
  model.kind = ModelKind::tucker;
  model.lambda = lambda;
  model.meta = std::move(meta);
  model.coefficient = TuckerFactors{std::move(core), std::move(u)};
  model.train_mse = (y - predict(model, d.design)).squaredNorm() / static_cast<double>(d.size());
  return model;
}

Vector krr_fit(const Matrix& features, const Vector& y, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("krr_fit: lambda must be positive");
  return ridge_solve(features, y, lambda);
}

double predict(const FittedModel& model, const Tensor& x) {
  const Vector b = model.coefficient_vec();
  if (static_cast<std::size_t>(b.size()) != x.size()) {
    throw ArgumentError("predict: covariate shape does not match the model");
  }
  const Shape mshape = std::visit([](const auto& f) { return f.shape(); }, model.coefficient);
  if (mshape != x.shape()) throw ArgumentError("predict: covariate shape does not match the model");
  return b.dot(x.flat());
}

Vector predict(const FittedModel& model, const Matrix& design) {
  const Vector b = model.coefficient_vec();
  if (b.size() != design.rows()) throw ArgumentError("predict: design rows do not match the model");
  return design.transpose() * b;
}

double predict(const Vector& features, const Vector& weights) {
  if (features.size() != weights.size()) throw ArgumentError("predict: feature length mismatch");
  return features.dot(weights);
}

EnsembleModel ensemble_average(std::vector<FittedModel> members,
                               std::vector<std::size_t> subset_sizes,
                               const EnsembleOptions& opts) {
  if (members.empty()) throw ArgumentError("ensemble_average: no members");
  if (subset_sizes.size() != members.size()) {
    throw ArgumentError("ensemble_average: one subset size per member required");
  }
  for (const auto& m : members) {
    if (m.kind != ModelKind::cp || !std::holds_alternative<CpFactors>(m.coefficient)) {
      throw ArgumentError("ensemble_average: members must be CP models");
    }
  }
  const Shape shape = members.front().cp().shape();
  const std::size_t order = shape.size();
  Eigen::Index total = 0;
  for (const auto& m : members) {
    if (m.cp().shape() != shape) throw ArgumentError("ensemble_average: member shapes differ");
    total += static_cast<Eigen::Index>(m.cp().rank());
  }

  CpFactors concat;
  for (std::size_t k = 0; k < order; ++k) {
    Matrix f(static_cast<Eigen::Index>(shape[k]), total);
    Eigen::Index col = 0;
    for (const auto& m : members) {
      const auto& b = m.cp().factors[k];
      f.middleCols(col, b.cols()) = b;
      col += b.cols();
    }
    concat.factors.push_back(std::move(f));
  }

  EnsembleModel out;
  out.components = cp_components(concat);
  if (opts.standardize_features) {
    for (Eigen::Index j = 0; j < out.components.cols(); ++j) {
      const double nrm = out.components.col(j).norm();
      if (nrm > 0.0) out.components.col(j) /= nrm;
    }
  }
  out.ens_rank = numerical_rank(out.components);
  concat.factors[0] /= static_cast<double>(members.size());
  out.averaged = std::move(concat);
  out.members = std::move(members);
  out.subset_sizes = std::move(subset_sizes);
  return out;
}

}  // namespace tensopt
