#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace nlrn {

/// Deterministic RNG used everywhere randomness is needed. Only the mt19937_64
/// engine comes from the standard library; the uniform and Gaussian draws are
/// spelled out here so that streams are identical across standard-library
/// implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller; one value per call, no cached state.
  double gaussian() {
    const double u1 = static_cast<double>((bits() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace nlrn
