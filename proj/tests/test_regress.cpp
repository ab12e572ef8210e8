#include <cmath>
#include <vector>

#include "doctest.h"
#include "tensopt/errors.hpp"
#include "tensopt/regress.hpp"
#include "tensopt/simgen.hpp"

using namespace tensopt;

namespace {

CpFactors random_cp(const Shape& shape, Eigen::Index rank, std::uint64_t seed) {
  RandomStream s(seed, 0, "regress");
  CpFactors f;
  for (auto d : shape) f.factors.push_back(s.normal_matrix(static_cast<Eigen::Index>(d), rank));
  return f;
}

Dataset planted(const Shape& shape, const Vector& b, std::size_t n, std::uint64_t seed) {
  RandomStream s(seed, 0, "regress_x");
  Matrix x = gen_design(n, shape, s);
  Vector y = x.transpose() * b;
  return Dataset(shape, std::move(x), std::move(y));
}

double variance(const Vector& y) {
  return (y.array() - y.mean()).square().sum() / static_cast<double>(y.size());
}

double rel_rms(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("Dataset validation and subsets") {
  CHECK_THROWS_AS(Dataset({2, 2}, Matrix::Zero(3, 5), Vector::Zero(5)), ArgumentError);
  CHECK_THROWS_AS(Dataset({2, 2}, Matrix::Zero(4, 5), Vector::Zero(4)), ArgumentError);
  const Dataset d = planted({2, 3}, Vector::Ones(6), 5, 1);
  const std::vector<std::size_t> rows{4, 1};
  const Dataset s = d.subset(rows);
  CHECK(s.size() == 2);
  CHECK(Vector(s.design.col(0)) == Vector(d.design.col(4)));
  CHECK(s.responses[1] == d.responses[1]);
  CHECK(vec(d.covariate(3)) == Vector(d.design.col(3)));
  const Dataset round = Dataset::from_tensors({d.covariate(0), d.covariate(1)}, d.responses.head(2));
  CHECK(round.design == d.design.leftCols(2));
}

TEST_CASE("cp_feature_map") {
  CpFactors ones;
  ones.factors = {Matrix::Ones(2, 1), Matrix::Ones(2, 1)};
  const Tensor x1({2, 2}, std::vector<double>(4, 1.0));
  CHECK(cp_feature_map(ones, x1)[0] == 4.0);
  CHECK(cp_feature_map(ones, Tensor({2, 2})).isZero(0.0));

  const CpFactors f = random_cp({3, 4, 2}, 3, 2);
  RandomStream s(2, 1, "regress");
  const Tensor x = Tensor::from_vector({3, 4, 2}, s.normal_vector(24));
  const Vector phi = cp_feature_map(f, x);
  for (Eigen::Index r = 0; r < 3; ++r) {
    const Vector v =
        kronecker(std::vector<Matrix>{f.factors[2].col(r), f.factors[1].col(r), f.factors[0].col(r)});
    CHECK(phi[r] == doctest::Approx(v.dot(vec(x))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(cp_feature_map(f, Tensor({3, 4})), ArgumentError);
}

TEST_CASE("tucker_feature_map") {
  RandomStream s(3, 0, "regress");
  const Tensor x = Tensor::from_vector({3, 2, 2}, s.normal_vector(12));
  TuckerFactors id{Tensor({3, 2, 2}), {Matrix::Identity(3, 3), Matrix::Identity(2, 2), Matrix::Identity(2, 2)}};
  CHECK((tucker_feature_map(id, x) - vec(x)).norm() <= 1e-14);
  CHECK(tucker_feature_map(id, Tensor({3, 2, 2})).isZero(0.0));

  // Superdiagonal positions of the Tucker features are the CP features.
  const CpFactors cp = random_cp({3, 2, 2}, 2, 4);
  const TuckerFactors tk{Tensor({2, 2, 2}), cp.factors};
  const Vector t = tucker_feature_map(tk, x);
  const Vector c = cp_feature_map(cp, x);
  CHECK(t[0] == doctest::Approx(c[0]).epsilon(1e-12));
  CHECK(t[7] == doctest::Approx(c[1]).epsilon(1e-12));
  const Matrix p = tucker_basis(tk);
  CHECK((t - p.transpose() * vec(x)).norm() <= 1e-12 * t.norm());
}

TEST_CASE("Khatri-Rao components have full column rank for random factors") {
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Shape shape = i % 2 == 0 ? Shape{4, 3, 5} : Shape{6, 5};
    const Eigen::Index r = static_cast<Eigen::Index>(1 + i % 4);
    const Matrix g = cp_components(random_cp(shape, r, 100 + i));
    CHECK(numerical_rank(g) == static_cast<std::size_t>(r));
  }
}

TEST_CASE("empirical feature covariance converges to the component Gram") {
  const Shape shape{3, 2, 2};
  const CpFactors f = random_cp(shape, 3, 5);
  RandomStream s(5, 0, "regress_cov");
  const std::size_t n = 50000;
  const Matrix x = gen_design(n, shape, s);
  const Matrix phi = cp_feature_matrix(f, x);
  const Matrix emp = phi.transpose() * phi / static_cast<double>(n);
  const Matrix g = cp_components(f);
  const Matrix gram = g.transpose() * g;
  const double bound = 5.0 * std::sqrt(gram.diagonal().array().square().maxCoeff() / n);
  CHECK((emp - gram).cwiseAbs().maxCoeff() < bound);
}

TEST_CASE("fit_cp_regression recovers planted CP coefficients") {
  const Shape shape{4, 3, 5};
  {
    const Vector b = vec(cp_reconstruct(random_cp(shape, 1, 6)));
    const Dataset d = planted(shape, b, 200, 6);
    FitOptions o;
    o.seed = 1;
    const FittedModel m = fit_cp_regression(d, 1, 0.0, o);
    CHECK(m.train_mse <= 1e-10 * variance(d.responses));
  }
  {
    const Vector b = vec(cp_reconstruct(random_cp(shape, 3, 7)));
    const Dataset d = planted(shape, b, 300, 7);
    FitOptions o;
    o.restarts = 4;
    o.tol = 1e-14;
    o.max_iter = 3000;
    const FittedModel m = fit_cp_regression(d, 3, 0.0, o);
    const Dataset held = planted(shape, b, 200, 70);
    CHECK(rel_rms(predict(m, held.design), held.responses) <= 1e-4);
    // train_mse is recomputable from parts.
    const Vector r = d.responses - d.design.transpose() * m.coefficient_vec();
    CHECK(m.train_mse == doctest::Approx(r.squaredNorm() / 300.0).epsilon(1e-10));
    const auto& tr = m.meta.objective_trace;
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] <= tr[i - 1] * (1.0 + 1e-12));
  }
  {
    Dataset d = planted(shape, Vector::Ones(60), 50, 8);
    d.responses.setZero();
    const FittedModel m = fit_cp_regression(d, 2, 1.0);
    CHECK(m.coefficient_vec().isZero(1e-12));
    CHECK(m.train_mse == 0.0);
  }
  CHECK_THROWS_AS(fit_cp_regression(Dataset(), 1, 1.0), ArgumentError);
  CHECK_THROWS_AS(fit_cp_regression(planted(shape, Vector::Ones(60), 10, 1), 0, 1.0), ArgumentError);
}

TEST_CASE("fit_cp_regression options: moment init, restarts and screening") {
  const Shape shape{4, 3, 5};
  const Vector b = vec(cp_reconstruct(random_cp(shape, 2, 9)));
  const Dataset d = planted(shape, b, 150, 9);
  FitOptions o;
  o.cp_init = CpInit::moment;
  o.tol = 1e-12;
  o.max_iter = 2000;
  const FittedModel a = fit_cp_regression(d, 2, 1e-6, o);
  CHECK(a.train_mse <= 1e-6 * variance(d.responses));
  const FittedModel again = fit_cp_regression(d, 2, 1e-6, o);
  CHECK(a.coefficient_vec() == again.coefficient_vec());

  o.cp_init = CpInit::random;
  o.restarts = 3;
  o.screen_sweeps = 5;
  const FittedModel s = fit_cp_regression(d, 2, 1e-6, o);
  CHECK(s.train_mse <= 1e-6 * variance(d.responses));
}

TEST_CASE("fit_tucker_regression") {
  const Shape shape{3, 2, 2};
  {
    // Full ranks with lambda = 0 is ordinary least squares on vec(X).
    RandomStream s(10, 0, "regress");
    const Vector b = s.normal_vector(12);
    Dataset d = planted(shape, b, 80, 10);
    d.responses += 0.1 * s.normal_vector(80);
    FitOptions o;
    o.tol = 1e-14;
    o.max_iter = 200;
    const FittedModel m = fit_tucker_regression(d, {3, 2, 2}, 0.0, o);
    const Matrix xt = d.design.transpose();
    const Vector ols = (xt.transpose() * xt).ldlt().solve(xt.transpose() * d.responses);
    CHECK((m.coefficient_vec() - ols).norm() <= 1e-6 * ols.norm());
  }
  {
    const Shape big{5, 4, 6};
    RandomStream s(11, 0, "regress");
    TuckerFactors t;
    t.core = Tensor::from_vector({2, 2, 2}, s.normal_vector(8));
    for (auto dim : big) t.factors.push_back(thin_qr(s.normal_matrix(static_cast<Eigen::Index>(dim), 2)));
    const Vector b = vec(tucker_reconstruct(t));
    const Dataset d = planted(big, b, 200, 11);
    FitOptions o;
    o.tol = 1e-14;
    o.max_iter = 500;
    const FittedModel m = fit_tucker_regression(d, {2, 2, 2}, 0.0, o);
    const Dataset held = planted(big, b, 200, 110);
    CHECK(rel_rms(predict(m, held.design), held.responses) <= 1e-4);
    for (const auto& u : m.tucker().factors) CHECK((u.transpose() * u).isIdentity(1e-10));
    const auto& tr = m.meta.objective_trace;
    const double floor = 1e-20 * d.responses.squaredNorm();
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] <= tr[i - 1] * (1.0 + 1e-10) + floor);

    Dataset zero = d;
    zero.responses.setZero();
    const FittedModel z = fit_tucker_regression(zero, {2, 2, 2}, 1.0);
    CHECK(predict(z, held.design).isZero(1e-12));
  }
  CHECK_THROWS_AS(fit_tucker_regression(planted(shape, Vector::Ones(12), 10, 1), {4, 2, 2}, 1.0),
                  ArgumentError);
}

TEST_CASE("krr_fit") {
  RandomStream s(12, 0, "regress");
  const Vector y = s.normal_vector(6);
  const Matrix id = Matrix::Identity(6, 6);
  CHECK((krr_fit(id, y, 1e-12) - y).norm() <= 1e-10);
  CHECK(krr_fit(id, y, 1e12).norm() <= 1e-10);
  const Matrix f = s.normal_matrix(20, 4);
  const Vector z = s.normal_vector(20);
  const Vector oracle = (f.transpose() * f + 0.5 * Matrix::Identity(4, 4)).inverse() * f.transpose() * z;
  CHECK((krr_fit(f, z, 0.5) - oracle).norm() <= 1e-8 * oracle.norm());
  CHECK_THROWS_AS(krr_fit(f, z, 0.0), ArgumentError);
}

TEST_CASE("predict") {
  FittedModel zero;
  zero.coefficient = CpFactors{{Matrix::Zero(2, 1), Matrix::Zero(3, 1)}};
  CHECK(predict(zero, Tensor({2, 3}, std::vector<double>(6, 1.0))) == 0.0);

  FittedModel ones;
  ones.coefficient = CpFactors{{Matrix::Ones(2, 1), Matrix::Ones(2, 1), Matrix::Ones(2, 1)}};
  CHECK(predict(ones, Tensor({2, 2, 2}, std::vector<double>(8, 1.0))) == 8.0);

  FittedModel m;
  m.coefficient = random_cp({3, 4, 2}, 2, 13);
  RandomStream s(13, 1, "regress");
  const Tensor x = Tensor::from_vector({3, 4, 2}, s.normal_vector(24));
  CHECK(predict(m, x) == doctest::Approx(inner(m.reconstruct(), x)).epsilon(1e-10));
  CHECK_THROWS_AS(predict(m, Tensor({4, 3, 2})), ArgumentError);

  // KRR on the true components with unit weights reproduces the tensor model.
  const Vector phi = cp_feature_map(m.cp(), x);
  CHECK(predict(phi, Vector::Ones(2)) == doctest::Approx(predict(m, x)).epsilon(1e-12));
}

TEST_CASE("ensemble_average") {
  FittedModel a;
  a.coefficient = random_cp({3, 4, 2}, 1, 14);
  const EnsembleModel same = ensemble_average({a, a}, {10, 10});
  CHECK(same.ens_rank == 1);
  CHECK((vec(cp_reconstruct(same.averaged)) - a.coefficient_vec()).norm() <=
        1e-12 * a.coefficient_vec().norm());

  FittedModel b;
  b.coefficient = random_cp({3, 4, 2}, 1, 15);
  CHECK(ensemble_average({a, b}, {10, 10}).ens_rank == 2);

  for (std::uint64_t k = 0; k < 20; ++k) {
    std::vector<FittedModel> members;
    std::size_t sum = 0, mx = 0;
    Vector mean = Vector::Zero(24);
    const std::size_t count = 2 + k % 3;
    for (std::size_t j = 0; j < count; ++j) {
      FittedModel m;
      const Eigen::Index r = static_cast<Eigen::Index>(1 + (k + j) % 3);
      m.coefficient = random_cp({3, 4, 2}, r, 1000 + 10 * k + j);
      mean += m.coefficient_vec() / static_cast<double>(count);
      sum += static_cast<std::size_t>(r);
      mx = std::max(mx, static_cast<std::size_t>(r));
      members.push_back(m);
    }
    const EnsembleModel e = ensemble_average(members, std::vector<std::size_t>(count, 5));
    CHECK(e.ens_rank >= mx);
    CHECK(e.ens_rank <= sum);
    CHECK((vec(cp_reconstruct(e.averaged)) - mean).norm() <= 1e-10 * mean.norm());
  }

  const EnsembleModel std_feats = ensemble_average({a, b}, {10, 10}, {true});
  for (Eigen::Index j = 0; j < std_feats.components.cols(); ++j) {
    CHECK(std_feats.components.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ensemble_average({}, {}), ArgumentError);
}
