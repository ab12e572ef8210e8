#include <vector>

#include "doctest.h"
#include "tensopt/decomp.hpp"
#include "tensopt/errors.hpp"
#include "tensopt/random.hpp"

using namespace tensopt;

namespace {

CpFactors random_cp(const Shape& shape, Eigen::Index rank, std::uint64_t seed) {
  RandomStream s(seed, 0, "decomp");
  CpFactors f;
  for (auto d : shape) f.factors.push_back(s.normal_matrix(static_cast<Eigen::Index>(d), rank));
  return f;
}

TuckerFactors random_tucker(const Shape& shape, const Shape& ranks, std::uint64_t seed) {
  RandomStream s(seed, 0, "decomp");
  TuckerFactors f;
  f.core = Tensor::from_vector(ranks, s.normal_vector(static_cast<Eigen::Index>(num_elements(ranks))));
  for (std::size_t m = 0; m < shape.size(); ++m) {
    f.factors.push_back(thin_qr(s.normal_matrix(static_cast<Eigen::Index>(shape[m]),
                                                static_cast<Eigen::Index>(ranks[m]))));
  }
  return f;
}

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  RandomStream s(seed, 0, "decomp_b");
  return Tensor::from_vector(shape, s.normal_vector(static_cast<Eigen::Index>(num_elements(shape))));
}

// Sum of explicit outer products, independent of the Khatri-Rao path.
Tensor cp_by_outer_sum(const CpFactors& f) {
  Tensor acc(f.shape());
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(f.rank()); ++r) {
    std::vector<Vector> cols;
    for (const auto& b : f.factors) cols.push_back(b.col(r));
    acc.flat() += outer(cols).flat();
  }
  return acc;
}

}  // namespace

TEST_CASE("cp_reconstruct") {
  CpFactors r1;
  r1.factors = {(Matrix(2, 1) << 1, 2).finished(), (Matrix(2, 1) << 3, 4).finished()};
  const Tensor t = cp_reconstruct(r1);
  CHECK(t({0, 0}) == 3.0);
  CHECK(t({0, 1}) == 4.0);
  CHECK(t({1, 0}) == 6.0);
  CHECK(t({1, 1}) == 8.0);

  CpFactors r2 = r1;
  for (auto& b : r2.factors) {
    b.conservativeResize(Eigen::NoChange, 2);
    b.col(1).setZero();
  }
  CHECK(vec(cp_reconstruct(r2)) == vec(t));

  const CpFactors f = random_cp({4, 3, 5}, 3, 1);
  const Vector kr =
      khatri_rao(std::vector<Matrix>{f.factors[2], f.factors[1], f.factors[0]}) * Vector::Ones(3);
  CHECK((vec(cp_reconstruct(f)) - kr).norm() <= 1e-12 * kr.norm());
  CHECK((vec(cp_reconstruct(f)) - vec(cp_by_outer_sum(f))).norm() <= 1e-12 * kr.norm());

  CpFactors bad = f;
  bad.factors[1] = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(validate(bad), ArgumentError);
}

TEST_CASE("tucker_reconstruct") {
  const Shape ranks{2, 3, 2};
  RandomStream s(2, 0, "decomp");
  const Tensor core = Tensor::from_vector(ranks, s.normal_vector(12));
  TuckerFactors id{core, {Matrix::Identity(2, 2), Matrix::Identity(3, 3), Matrix::Identity(2, 2)}};
  CHECK((vec(tucker_reconstruct(id)) - vec(core)).norm() <= 1e-15);

  TuckerFactors zero = random_tucker({4, 5, 3}, ranks, 3);
  zero.core = Tensor(ranks);
  CHECK(vec(tucker_reconstruct(zero)).isZero(0.0));

  const TuckerFactors f = random_tucker({4, 5, 3}, ranks, 4);
  const Matrix kron = kronecker(std::vector<Matrix>{f.factors[2], f.factors[1], f.factors[0]});
  const Vector expect = kron * vec(f.core);
  CHECK((vec(tucker_reconstruct(f)) - expect).norm() <= 1e-10 * expect.norm());
  CHECK((tucker_basis(f) - kron).norm() <= 1e-14 * kron.norm());
}

TEST_CASE("superdiagonal Tucker core reproduces the CP tensor") {
  const CpFactors cp = random_cp({4, 3, 5}, 2, 5);
  Tensor core({2, 2, 2});
  core({0, 0, 0}) = 1.0;
  core({1, 1, 1}) = 1.0;
  const TuckerFactors tk{core, cp.factors};
  const Vector a = vec(cp_reconstruct(cp));
  CHECK((vec(tucker_reconstruct(tk)) - a).norm() <= 1e-12 * a.norm());
}

TEST_CASE("cp_als recovers exact low-rank targets") {
  const CpFactors one = random_cp({5, 4, 3}, 1, 6);
  const Tensor b1 = cp_reconstruct(one);
  const auto r1 = cp_als(b1, 1);
  CHECK(r1.delta_norm_sq <= 1e-12 * b1.flat().squaredNorm());

  const CpFactors three = random_cp({6, 5, 7}, 3, 7);
  const Tensor b3 = cp_reconstruct(three);
  CpAlsOptions o;
  o.max_iter = 3000;
  o.tol = 1e-14;
  o.restarts = 3;
  const auto r3 = cp_als(b3, 3, o);
  CHECK(r3.delta_norm_sq <= 1e-8 * b3.flat().squaredNorm());
  CHECK(r3.delta_norm_sq == doctest::Approx(r3.delta.squaredNorm()).epsilon(1e-10));
  CHECK((r3.delta - (vec(b3) - vec(cp_reconstruct(r3.approx)))).norm() <= 1e-12 * b3.norm());
  CHECK(residual_orthogonality_check(b3, r3.approx) <= 1e-6 * b3.norm());
}

TEST_CASE("cp_als objective is monotone and the residual shrinks with rank") {
  const Tensor b = random_tensor({5, 4, 6}, 8);
  CpAlsOptions o;
  o.restarts = 2;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t r = 1; r <= 4; ++r) {
    const auto res = cp_als(b, r, o);
    const auto& tr = res.objective_trace;
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] <= tr[i - 1] * (1.0 + 1e-12));
    CHECK(res.delta_norm_sq <= prev * (1.0 + 1e-9));
    prev = res.delta_norm_sq;
  }
}

TEST_CASE("cp_als is deterministic, reports non-convergence and rejects bad input") {
  const Tensor b = random_tensor({4, 4, 4}, 9);
  CpAlsOptions o;
  o.seed = 42;
  const auto a1 = cp_als(b, 2, o);
  const auto a2 = cp_als(b, 2, o);
  CHECK(a1.delta == a2.delta);

  o.max_iter = 2;
  o.tol = 0.0;
  const auto short_run = cp_als(b, 3, o);
  CHECK_FALSE(short_run.converged);
  CHECK(short_run.iterations == 2);

  CHECK_THROWS_AS(cp_als(b, 0), ArgumentError);
  Tensor nan_b = b;
  nan_b.flat()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(cp_als(nan_b, 2), std::exception);
}

TEST_CASE("converged under-rank CP fit leaves a residual orthogonal to its components") {
  const Tensor b = cp_reconstruct(random_cp({5, 4, 6}, 4, 10));
  CpAlsOptions o;
  o.tol = 1e-10;
  o.max_iter = 20000;
  const auto res = cp_als(b, 2, o);
  CHECK(residual_orthogonality_check(b, res.approx) <= 1e-6 * b.norm());
}

TEST_CASE("tucker_hooi") {
  const Tensor b = random_tensor({4, 3, 5}, 11);
  const auto full = tucker_hooi(b, {4, 3, 5});
  CHECK(full.delta_norm_sq <= 1e-12 * b.flat().squaredNorm());

  const TuckerFactors planted = random_tucker({6, 5, 4}, {2, 2, 2}, 12);
  const Tensor bp = tucker_reconstruct(planted);
  const auto rec = tucker_hooi(bp, {2, 2, 2});
  CHECK(rec.delta_norm_sq <= 1e-8 * bp.flat().squaredNorm());
  CHECK(residual_orthogonality_check(bp, rec.approx) <= 1e-12 * std::max(1.0, bp.norm()));

  const auto ones = tucker_hooi(b, {1, 1, 1});
  CHECK(ones.delta_norm_sq <= b.flat().squaredNorm());

  const auto trunc = tucker_hooi(b, {2, 2, 3});
  for (const auto& u : trunc.approx.factors) CHECK((u.transpose() * u).isIdentity(1e-10));
  CHECK(residual_orthogonality_check(b, trunc.approx) <= 1e-8 * b.norm());
  // The core is the projection of b onto the factor spans.
  const Matrix p = tucker_basis(trunc.approx);
  CHECK((vec(trunc.approx.core) - p.transpose() * vec(b)).norm() <= 1e-10 * b.norm());

  CHECK_THROWS_AS(tucker_hooi(b, {5, 3, 5}), ArgumentError);
  CHECK_THROWS_AS(tucker_hooi(b, {0, 3, 5}), ArgumentError);
}

TEST_CASE("balance_columns keeps the tensor and does not raise the penalty") {
  CpFactors f = random_cp({4, 3, 5}, 3, 13);
  f.factors[0] *= 10.0;
  const Vector before = vec(cp_reconstruct(f));
  double pen_before = 0.0, pen_after = 0.0;
  for (const auto& b : f.factors) pen_before += b.squaredNorm();
  balance_columns(f);
  for (const auto& b : f.factors) pen_after += b.squaredNorm();
  CHECK((vec(cp_reconstruct(f)) - before).norm() <= 1e-12 * before.norm());
  CHECK(pen_after <= pen_before);
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(f.factors[0].col(r).norm() == doctest::Approx(f.factors[1].col(r).norm()).epsilon(1e-12));
    CHECK(f.factors[1].col(r).norm() == doctest::Approx(f.factors[2].col(r).norm()).epsilon(1e-12));
  }
}
