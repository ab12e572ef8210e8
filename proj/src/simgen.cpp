#include "tensopt/simgen.hpp"

#include <cmath>
#include <sstream>

#include "tensopt/errors.hpp"

namespace tensopt {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RandomStream::RandomStream(std::uint64_t master, std::uint64_t replicate, std::string_view role)
    : engine_(mix64(mix64(mix64(master) ^ replicate) ^ fnv1a(role))) {}

std::size_t RandomStream::uniform_index(std::size_t n) {
  if (n == 0) throw ArgumentError("uniform_index: empty range");
  // Rejection sampling keeps the result exactly uniform and engine-defined.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

Vector RandomStream::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Matrix RandomStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = normal();
  return m;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, RandomStream& stream) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = stream.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::size_t RankSpec::cp_rank() const {
  if (!is_cp()) throw ArgumentError("rank " + label() + " is not a CP rank");
  return values.front();
}

std::string RankSpec::label() const {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += 'x';
    out += std::to_string(values[i]);
  }
  return out;
}

RankSpec RankSpec::parse(const std::string& label) {
  RankSpec r;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = label.find('x', pos);
    const std::string part = label.substr(pos, next == std::string::npos ? next : next - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw ArgumentError("malformed rank label '" + label + "'");
    }
    r.values.push_back(std::stoull(part));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return r;
}

void SimConfig::validate() const {
  if (shape.empty()) throw ConfigError("shape", "must list at least one mode size");
  for (auto d : shape) {
    if (d == 0) throw ConfigError("shape", "mode sizes must be positive");
  }
  if (true_rank.values.empty()) throw ConfigError("true_rank", "must be given");
  for (auto r : true_rank.values) {
    if (r == 0) throw ConfigError("true_rank", "ranks must be positive");
  }
  if (true_kind == ModelKind::cp && !true_rank.is_cp()) {
    throw ConfigError("true_rank", "CP truth needs a single integer rank");
  }
  if (true_kind == ModelKind::tucker && true_rank.values.size() != shape.size()) {
    throw ConfigError("true_rank", "Tucker truth needs one rank per mode");
  }
  if (n_train == 0) throw ConfigError("n_train", "must be positive");
  if (n_test == 0) throw ConfigError("n_test", "must be positive");
  if (!(noise_frac >= 0.0) || !std::isfinite(noise_frac)) {
    throw ConfigError("noise_frac", "must be finite and nonnegative");
  }
  if (noise_frac > 0.0 && n_train < 2) {
    throw ConfigError("n_train", "must be at least 2 when noise_frac > 0");
  }
  if (lambda && (!(*lambda >= 0.0) || !std::isfinite(*lambda))) {
    throw ConfigError("lambda", "must be finite and nonnegative");
  }
  if (replicates == 0) throw ConfigError("replicates", "must be positive");
}

Matrix gen_design(std::size_t n, const Shape& shape, RandomStream& stream) {
  return stream.normal_matrix(static_cast<Eigen::Index>(num_elements(shape)),
                              static_cast<Eigen::Index>(n));
}

std::vector<Tensor> gen_design_tensors(std::size_t n, const Shape& shape, RandomStream& stream) {
  const Matrix d = gen_design(n, shape, stream);
  std::vector<Tensor> out;
  out.reserve(n);
  for (Eigen::Index i = 0; i < d.cols(); ++i) out.push_back(Tensor::from_vector(shape, d.col(i)));
  return out;
}

TrueCoefficient gen_true_coefficient(ModelKind kind, const Shape& shape, const RankSpec& rank,
                                     RandomStream& stream) {
  const std::size_t total = num_elements(shape);
  constexpr int kAttempts = 10;
  if (kind == ModelKind::cp) {
    const std::size_t r = rank.cp_rank();
    if (r == 0) throw ArgumentError("CP rank must be positive");
    for (std::size_t m = 0; m < shape.size(); ++m) {
      if (r > total / shape[m]) {
        throw ArgumentError("CP rank " + std::to_string(r) + " exceeds the product of the modes other than " +
                            std::to_string(m));
      }
    }
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      CpFactors f;
      for (auto d : shape) {
        f.factors.push_back(stream.normal_matrix(static_cast<Eigen::Index>(d),
                                                 static_cast<Eigen::Index>(r)));
      }
      if (numerical_rank(cp_components(f)) == r) return f;
    }
    throw NumericalError("could not draw linearly independent CP components in 10 attempts");
  }

  const Shape& ranks = rank.tucker_ranks();
  if (ranks.size() != shape.size()) throw ArgumentError("Tucker rank needs one entry per mode");
  const std::size_t core_size = num_elements(ranks);
  for (std::size_t m = 0; m < shape.size(); ++m) {
    if (ranks[m] == 0 || ranks[m] > shape[m]) {
      throw ArgumentError("Tucker rank for mode " + std::to_string(m) + " outside [1, " +
                          std::to_string(shape[m]) + "]");
    }
    if (ranks[m] > core_size / ranks[m]) {
      throw ArgumentError("Tucker rank for mode " + std::to_string(m) +
                          " exceeds the product of the other ranks");
    }
  }
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    TuckerFactors f;
    for (std::size_t m = 0; m < shape.size(); ++m) {
      f.factors.push_back(thin_qr(stream.normal_matrix(
          static_cast<Eigen::Index>(shape[m]), static_cast<Eigen::Index>(ranks[m]))));
    }
    f.core = Tensor::from_vector(ranks, stream.normal_vector(static_cast<Eigen::Index>(core_size)));
    bool ok = true;
    for (std::size_t m = 0; m < shape.size() && ok; ++m) {
      ok = numerical_rank(f.factors[m]) == ranks[m] &&
           numerical_rank(mode_unfold(f.core, m)) == ranks[m];
    }
    if (ok) return f;
  }
  throw NumericalError("could not draw a full-rank Tucker coefficient in 10 attempts");
}

Responses gen_responses(const Vector& coef_vec, const Matrix& design, double noise_frac,
                        RandomStream& stream) {
  if (coef_vec.size() != design.rows()) throw ArgumentError("coefficient does not match design");
  return responses_from_signal(design.transpose() * coef_vec, noise_frac, stream);
}

Responses responses_from_signal(Vector signal, double noise_frac, RandomStream& stream) {
  if (!(noise_frac >= 0.0)) throw ArgumentError("noise_frac must be nonnegative");
  Responses out;
  out.signal = std::move(signal);
  const auto n = out.signal.size();
  if (noise_frac > 0.0 && n < 2) {
    throw ArgumentError("noise scaling needs at least 2 samples to define the signal std");
  }
  double sigma_s = 0.0;
  if (n >= 2) {
    const double mean = out.signal.mean();
    sigma_s = std::sqrt((out.signal.array() - mean).square().sum() / static_cast<double>(n - 1));
  }
  out.sigma = noise_frac * sigma_s;
  out.y = out.signal + out.sigma * stream.normal_vector(n);
  return out;
}

Responses gen_responses_sigma(const Vector& coef_vec, const Matrix& design, double sigma,
                              RandomStream& stream) {
  if (!(sigma >= 0.0)) throw ArgumentError("sigma must be nonnegative");
  if (coef_vec.size() != design.rows()) throw ArgumentError("coefficient does not match design");
  Responses out;
  out.signal = design.transpose() * coef_vec;
  out.sigma = sigma;
  out.y = out.signal + sigma * stream.normal_vector(out.signal.size());
  return out;
}

}  // namespace tensopt
