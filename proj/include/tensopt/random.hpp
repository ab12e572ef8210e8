#pragma once

// Seeded random streams.  A stream is identified by (master seed, replicate,
// role tag); distinct identities give statistically independent sequences,
// so e.g. changing the test-set size never perturbs the training draws.

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "tensopt/multiway.hpp"

namespace tensopt {

/// splitmix64 finalizer; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x);

class RandomStream {
 public:
  RandomStream(std::uint64_t master, std::uint64_t replicate, std::string_view role);

  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n);

  Vector normal_vector(Eigen::Index n);
  /// Filled column by column.
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, RandomStream& stream);

}  // namespace tensopt
