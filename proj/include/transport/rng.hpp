#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "transport/linalg.hpp"

namespace transport {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic draw source: identical (seed, stream) yields an identical
// sequence on every platform. The engine is mt19937_64 (bit-exact per the
// standard); all samplers below are implemented here so that no standard
// library distribution variability leaks into results.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s = h ^ (stream + 0xD1B54A32D192ED03ULL);
    h = splitmix64(s);
    eng_.seed(h);
  }

  // Uniform on [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Marsaglia polar method; the spare value is cached, so draw order matters
  // to reproducibility and is fixed by construction.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mu, double sd) {
    if (!(sd >= 0.0)) throw NumericError("Rng::normal: sd must be nonnegative");
    return mu + sd * normal();
  }

  int bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw NumericError("Rng::bernoulli: p outside [0,1]");
    return uniform() < p ? 1 : 0;
  }

  // Single categorical draw over probs (0-based index); probs must sum to 1.
  int multinomial(const Vector& probs) {
    double total = probs.sum();
    if (std::abs(total - 1.0) > 1e-12) throw NumericError("Rng::multinomial: probabilities must sum to 1");
    if ((probs.array() < 0).any()) throw NumericError("Rng::multinomial: negative probability");
    double u = uniform(), acc = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size() - 1);
  }

  // Marsaglia-Tsang; shape below 1 handled by boosting and a power of a uniform.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0 && scale > 0.0)) throw NumericError("Rng::gamma: shape and scale must be positive");
    if (shape < 1.0) {
      double u = uniform();
      while (u == 0.0) u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  // mu + L z with L the lower Cholesky factor of the covariance.
  Vector mvnormal(const Vector& mu, const CholeskyFactor& chol) {
    Vector z(mu.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
    return mu + chol.L * z;
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace transport
