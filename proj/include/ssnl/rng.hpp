#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ssnl/common.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

// Splittable counter-style generator built on the splitmix64 mixer.
// child(k) derives an independent stream from the construction key alone,
// so the substream layout does not depend on how many draws the parent
// has made. Every distribution consumes a fixed, documented number of
// uniforms per call; that is what makes runs bit-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ 0x853C49E6748FEA9BULL)), state_(key_) {}

  // Independent substream k. Children of distinct k (and of distinct
  // parents) never share state.
  Rng child(std::uint64_t k) const {
    Rng r(0);
    r.key_ = mix64(key_ + 0x9E3779B97F4A7C15ULL * (k + 1));
    r.state_ = r.key_;
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo < hi))
      throw ConfigError("rng: uniform bounds must satisfy lo < hi, got [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + ")");
    return lo + (hi - lo) * uniform();
  }

  // Box-Muller, cosine branch only: exactly two uniforms per call, no
  // cached spare.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mu, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("rng: normal sigma must be > 0, got " + std::to_string(sigma));
    return mu + sigma * normal();
  }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  // Sum of n Bernoulli trials. n stays small (simulator observation
  // counts), so the O(n) walk is fine and keeps draw consumption fixed.
  long binomial(long n, double p) {
    if (n < 0) throw ConfigError("rng: binomial n must be >= 0, got " + std::to_string(n));
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError("rng: binomial p must lie in [0, 1], got " + std::to_string(p));
    long k = 0;
    for (long i = 0; i < n; ++i)
      if (uniform() < p) ++k;
    return k;
  }

  // Marsaglia-Tsang squeeze; shape < 1 boosted through gamma(shape + 1).
  double gamma(double shape, double scale) {
    if (!(shape > 0.0)) throw ConfigError("rng: gamma shape must be > 0, got " + std::to_string(shape));
    if (!(scale > 0.0)) throw ConfigError("rng: gamma scale must be > 0, got " + std::to_string(scale));
    if (shape < 1.0) {
      double u = 1.0 - uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 1.0 - uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    return x / (x + y);
  }

  double chisq(double dof) {
    if (!(dof > 0.0)) throw ConfigError("rng: chisq dof must be > 0, got " + std::to_string(dof));
    return gamma(0.5 * dof, 2.0);
  }

  double student_t(double dof) {
    if (!(dof > 0.0)) throw ConfigError("rng: student_t dof must be > 0, got " + std::to_string(dof));
    double z = normal();
    double v = chisq(dof);
    return z / std::sqrt(v / dof);
  }

  // Unbiased integer on [0, n) via rejection.
  std::size_t randint(std::size_t n) {
    if (n == 0) throw ConfigError("rng: randint bound must be > 0");
    const std::uint64_t nn = n;
    const std::uint64_t threshold = (~nn + 1) % nn;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return static_cast<std::size_t>(r % nn);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[randint(i)]);
    return p;
  }

  Tensor normal_tensor(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = normal();
    return t;
  }

  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t state_;
};

}  // namespace ssnl
