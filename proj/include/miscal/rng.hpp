#ifndef MISCAL_RNG_HPP
#define MISCAL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace miscal {

// Counter-based generator in the SplitMix64 family: output k of a stream is
// mix(key + k * GOLDEN), so a draw depends only on (seed, stream, counter).
// Streams never share state, which keeps multi-chain and multi-task runs
// bit-reproducible under any thread schedule.
class Rng {
 public:
  Rng() : Rng(0, 0) {}
  Rng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(mix(seed + kGolden) ^ mix(stream ^ 0x5851f42d4c957f2dULL))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on the open interval (0, 1); safe under log().
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool coin() { return (next_u64() >> 63) != 0; }

  // Integer uniform on [0, n); n > 0. Bias is below 2^-53 for the n used here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double r = std::sqrt(-2.0 * std::log(uniform_open()));
    double t = 2.0 * kPi * uniform();
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Marsaglia-Tsang; shape < 1 handled by the u^(1/shape) boost.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      double u = uniform_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform_open();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  // Writes a point on the simplex; conc.size() == out.size() >= 1.
  void dirichlet(std::span<const double> conc, std::span<double> out) {
    if (conc.size() != out.size() || conc.empty())
      throw std::invalid_argument("dirichlet: size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < conc.size(); ++k) {
      out[k] = gamma(conc[k]);
      total += out[k];
    }
    for (std::size_t k = 0; k < conc.size(); ++k) out[k] /= total;
  }

  // Sequential binomial-free scheme: n independent categorical draws.
  // Exact and fast enough for the cell totals used here.
  void multinomial(std::int64_t n, std::span<const double> probs,
                   std::span<std::int64_t> out) {
    if (probs.size() != out.size() || probs.empty())
      throw std::invalid_argument("multinomial: size mismatch");
    for (auto& c : out) c = 0;
    for (std::int64_t t = 0; t < n; ++t) out[categorical(probs)]++;
  }

  // Index k with probability probs[k] / sum(probs).
  std::size_t categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return k;
    }
    return probs.size() - 1;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr double kPi = 3.14159265358979323846;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable seed for a named substream of a master seed; tasks seeded this way
// stay independent of scheduling and of each other.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return Rng(master, stream).next_u64();
}

}  // namespace miscal

#endif
