#pragma once

// Dense multiway arrays and the small linear-algebra toolbox shared by the
// decomposition, regression and optimism code.
//
// Linearization is column-major generalized to M modes: the entry at
// multi-index (i_1, ..., i_M) lives at i_1 + I_1 (i_2 + I_2 (...)).  With
// this ordering vec(v_1 o ... o v_M) == v_M (x) ... (x) v_1 and mode
// unfoldings follow Kolda & Bader.  Modes are 0-based throughout the API.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tensopt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Shape = std::vector<std::size_t>;

/// Product of all mode sizes (1 for an empty shape).
std::size_t num_elements(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  /// Zero tensor of the given shape.
  explicit Tensor(Shape shape);
  /// Adopts `data` as the linearized entries; its length must match.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_vector(Shape shape, const Vector& v);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Eigen::Map<const Vector> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Vector> flat() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  /// Linear offset of a 0-based multi-index.
  std::size_t offset(std::span<const std::size_t> index) const;

  double operator()(std::initializer_list<std::size_t> index) const;
  double& operator()(std::initializer_list<std::size_t> index);

  double norm() const { return flat().norm(); }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Symmetric eigendecomposition with eigenvalues sorted descending.
struct EigenPair {
  Vector values;
  Matrix vectors;
  /// Number of eigenvalues below -tol * max(1, ||s||).
  std::size_t negative_count = 0;
};

Vector vec(const Tensor& x);
Tensor reshape(const Vector& v, Shape shape);

/// Mode-`mode` matricization, I_mode x prod_{k != mode} I_k.
Matrix mode_unfold(const Tensor& x, std::size_t mode);
/// Inverse of mode_unfold for the given full shape.
Tensor mode_fold(const Matrix& unfolded, std::size_t mode, Shape shape);

/// x ×_mode a, with a of size J x I_mode.
Tensor mode_product(const Tensor& x, const Matrix& a, std::size_t mode);

double inner(const Tensor& x, const Tensor& y);
Tensor outer(std::span<const Vector> vs);

Matrix kronecker(const Matrix& a, const Matrix& b);
Matrix khatri_rao(const Matrix& a, const Matrix& b);
/// mats[0] ⊙ mats[1] ⊙ ... (left to right).
Matrix khatri_rao(std::span<const Matrix> mats);
/// mats[0] ⊗ mats[1] ⊗ ... (left to right).
Matrix kronecker(std::span<const Matrix> mats);

/// Cyclic Jacobi eigensolver for symmetric input.  Throws ArgumentError if
/// `s` is not symmetric within tol * max(1, ||s||) and NumericalError if the
/// off-diagonal mass does not fall below 1e-12 ||s|| within 100 sweeps.
EigenPair sym_eig(const Matrix& s, double tol = 1e-10);

/// argmin_w ||y - a w||^2 + lambda ||w||^2.
Vector ridge_solve(const Matrix& a, const Vector& y, double lambda);

/// Thin QR with diag(R) >= 0: returns Q (rows x cols, orthonormal columns)
/// and writes R (cols x cols) when `r` is non-null.  Needs rows >= cols.
Matrix thin_qr(const Matrix& a, Matrix* r = nullptr);

/// Numerical column rank: singular values above rel_tol * sigma_max.
std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-8);

}  // namespace tensopt
