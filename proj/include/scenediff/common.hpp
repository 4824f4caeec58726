#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace scenediff {

inline constexpr double kPi = 3.14159265358979323846;

// Maps any finite angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

// Thrown when numeric state goes bad (NaN/Inf loss, divergence).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown for malformed configuration (bad flags, bad config file).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown for malformed input data (scene files, fixtures, datasets).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, used for content hashes in manifests and fixture keys.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

// Counter-based splittable PRNG. A stream is a (key, counter) pair; fork()
// derives an independent stream from the parent key and a tag, so parallel
// consumers keyed by (seed, scene, step) draw identical values regardless of
// scheduling.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  Prng fork(std::uint64_t tag) const {
    return Prng(mix(key_ ^ mix(tag + 0x632be59bd9b4e019ull)), 0);
  }

  std::uint64_t next_u64() {
    return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (portable; avoids libstdc++'s
  // implementation-defined normal_distribution).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    has_spare_ = true;
    spare_ = r * std::sin(2.0 * kPi * u2);
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  Prng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scenediff
