#pragma once

// Synthetic scalar-on-tensor data: standard-Gaussian covariates, a planted
// CP or Tucker coefficient, and noise scaled to a fraction of the signal
// standard deviation.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tensopt/decomp.hpp"
#include "tensopt/random.hpp"

namespace tensopt {

/// A CP rank (one entry) or a Tucker rank tuple (one entry per mode).
struct RankSpec {
  std::vector<std::size_t> values;

  static RankSpec cp(std::size_t r) { return RankSpec{{r}}; }
  static RankSpec tucker(Shape r) { return RankSpec{std::move(r)}; }

  bool is_cp() const { return values.size() == 1; }
  std::size_t cp_rank() const;
  /// Mode ranks for an order-M model; a single value is not expanded.
  const Shape& tucker_ranks() const { return values; }

  /// "3" for CP, "3x3x3" for Tucker.
  std::string label() const;
  static RankSpec parse(const std::string& label);

  /// Lexicographic on `values`; smaller ranks sort first.
  friend bool operator<(const RankSpec& a, const RankSpec& b) { return a.values < b.values; }
  friend bool operator==(const RankSpec& a, const RankSpec& b) { return a.values == b.values; }
};

struct SimConfig {
  Shape shape;
  ModelKind true_kind = ModelKind::cp;
  RankSpec true_rank = RankSpec::cp(3);
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  double noise_frac = 0.05;
  /// Ridge parameter; unset means the fitter's own default.
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::size_t replicates = 2000;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

using TrueCoefficient = Coefficient;

/// D x n matrix; column i is vec(X_i) with i.i.d. N(0, 1) entries.
Matrix gen_design(std::size_t n, const Shape& shape, RandomStream& stream);

/// Same draws as gen_design, unpacked into tensors.
std::vector<Tensor> gen_design_tensors(std::size_t n, const Shape& shape, RandomStream& stream);

/// Standard-normal factors (Tucker: orthonormalized factors, normal core).
/// Redraws up to 10 times until the components are linearly independent.
TrueCoefficient gen_true_coefficient(ModelKind kind, const Shape& shape, const RankSpec& rank,
                                     RandomStream& stream);

struct Responses {
  Vector y;
  Vector signal;
  /// Noise standard deviation s * sigma_s.
  double sigma = 0.0;
};

/// y_i = <X_i, B> + eps_i with eps ~ N(0, (s sigma_s)^2), sigma_s the sample
/// standard deviation of the signals.  The standard-normal draws behind eps
/// do not depend on s.
Responses gen_responses(const Vector& coef_vec, const Matrix& design, double noise_frac,
                        RandomStream& stream);

/// gen_responses for precomputed signals.
Responses responses_from_signal(Vector signal, double noise_frac, RandomStream& stream);

/// As above but with the noise level fixed in advance (test sets reuse the
/// training sigma).
Responses gen_responses_sigma(const Vector& coef_vec, const Matrix& design, double sigma,
                              RandomStream& stream);

}  // namespace tensopt
