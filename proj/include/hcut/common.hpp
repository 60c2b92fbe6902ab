#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>

namespace hcut {

// Error taxonomy. The CLI maps these onto exit codes: configuration and
// contract problems are usage errors, data/parse/format problems are data
// errors, non-finite arithmetic is a numeric failure.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DegenerateError : std::runtime_error {
  explicit DegenerateError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : DataError {
  explicit ParseError(const std::string& msg) : DataError(msg) {}
};
struct FormatError : DataError {
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic PRNG (xoshiro256++ seeded via splitmix64). All sampling in
// the project goes through this class so that runs are bit-reproducible
// across platforms; the standard <random> distributions are
// implementation-defined and therefore avoided.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  // Derives an independent stream from (seed, salts...). Used to give every
  // (epoch, example, augmentation) its own stream so determinism does not
  // depend on batching order.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> salts) {
    uint64_t h = seed;
    for (uint64_t salt : salts) {
      uint64_t mixed = salt + 0x9e3779b97f4a7c15ull;
      h ^= splitmix64(mixed) + (h << 6) + (h >> 2);
    }
    return Rng(h);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Multiply-shift map; bias is below 2^-64·n.
  size_t uniform_index(size_t n) {
    return static_cast<size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal(double mu, double sigma) {
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(6.283185307179586 * u2);
  }

  // Index sampled with probability proportional to weights[i]; caller
  // guarantees sum(weights) > 0.
  size_t weighted_index(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double r = next_double() * total;
    double cum = 0.0;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      cum += weights[i];
      if (r < cum) return i;
    }
    return weights.size() - 1;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace hcut
