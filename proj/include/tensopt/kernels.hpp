#pragma once

// Batched multilinear kernels over a design matrix whose column i holds
// vec(X_i).  These sit on the hot path of every regression fit and
// Monte-Carlo replicate; each has a straightforward serial reference in
// `tensopt::reference` used by the tests and the benchmark.

#include <span>

#include "tensopt/multiway.hpp"
#include "tensopt/parallel.hpp"

namespace tensopt::kernels {

/// Row i = (<v_1, x_i>, ..., <v_R, x_i>) with v_r the vectorized CP
/// components of `factors` (each I_m x R).  Result is n x R.
Matrix cp_features(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
                   Exec exec = Exec::parallel);

/// Matricized-tensor-times-Khatri-Rao for every sample: row i is
/// vec(X_i,(mode) * (⊙_{k != mode} B_k)) laid out column-major as
/// I_mode x R.  Result is n x (I_mode * R).
Matrix mttkrp(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
              std::size_t mode, Exec exec = Exec::parallel);

/// Mode-`mode` unfolding of every sample side by side: entry
/// (l + left*rt, i + n*i_m) holds X_i(l, i_m, rt) for the (left, I_m, right)
/// split at `mode`.  Result is (D / I_mode) x (I_mode * n).
Matrix unfold_design(const Matrix& design, const Shape& shape, std::size_t mode);

/// mttkrp from a design pre-arranged by unfold_design; one GEMM whose
/// output is already laid out as n x (I_mode * R).
Matrix mttkrp_unfolded(const Matrix& unfolded, const Shape& shape,
                       std::span<const Matrix> factors, std::size_t mode,
                       Exec exec = Exec::parallel);

/// Column i = vec(X_i ×_1 A_1 ... ×_M A_M), skipping `skip_mode` when it is
/// < M.  Each A_k is J_k x I_k.  Result is (prod J_k) x n.
Matrix multi_mode_product(const Matrix& design, const Shape& shape,
                          std::span<const Matrix> mats, std::size_t skip_mode,
                          Exec exec = Exec::parallel);

/// Row i = vec(W_i,(mode) * core_(mode)^T), the Tucker factor-update
/// covariates, where column i of `projected` is vec(W_i) of shape
/// `projected_shape` (mode `mode` at full size).  Result is n x (I_mode * R_mode).
Matrix unfold_times(const Matrix& projected, const Shape& projected_shape, const Tensor& core,
                    std::size_t mode, Exec exec = Exec::parallel);

}  // namespace tensopt::kernels

namespace tensopt::reference {

Matrix cp_features(const Matrix& design, const Shape& shape, std::span<const Matrix> factors);
Matrix mttkrp(const Matrix& design, const Shape& shape, std::span<const Matrix> factors,
              std::size_t mode);
Matrix multi_mode_product(const Matrix& design, const Shape& shape,
                          std::span<const Matrix> mats, std::size_t skip_mode);

}  // namespace tensopt::reference
