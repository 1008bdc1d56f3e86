#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace dbias {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Seeded generator used everywhere randomness is needed. mt19937_64 output is
/// fully specified by the standard, so runs are reproducible across platforms
/// as long as we avoid the implementation-defined std distributions.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built directly from generator bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [lo, hi].
inline int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  const auto span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(rng() % span);
}

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform01(rng) < p;
}

/// Standard normal via Box-Muller on uniform01.
double normal(Rng& rng);

/// Fisher-Yates shuffle driven by uniform_int (std::shuffle is not portable).
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<int64_t>(last - first);
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = uniform_int(rng, 0, i);
    std::swap(first[i], first[j]);
  }
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent configuration or shape mismatch between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A character outside the subword alphabet.
class EncodingError : public Error {
 public:
  using Error::Error;
};

/// Log of sum of exponentials of two values; handles -inf.
double log_add(double a, double b);

/// Row-wise log-sum-exp.
double log_sum_exp(const RowVector& v);

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// 64-bit FNV-1a, used for content hashes stored in checkpoints.
uint64_t fnv1a(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace dbias
