#ifndef MISCAL_SAMPLER_HPP
#define MISCAL_SAMPLER_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "miscal/model.hpp"
#include "miscal/rng.hpp"

namespace miscal {

// Differentiable unnormalised log density over R^dim.
class LogDensity {
 public:
  virtual ~LogDensity() = default;
  virtual int dim() const = 0;
  // Returns the log density and fills grad; -inf marks out-of-support.
  virtual double value_and_grad(std::span<const double> x,
                                std::span<double> grad) const = 0;
};

struct NutsConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_draws = 1000;
  std::uint64_t seed = 0;
  int max_depth = 10;
  double target_accept = 0.8;
  // Chains start uniform on (-init_radius, init_radius) per coordinate.
  double init_radius = 2.0;
  int max_init_tries = 100;
  // 0 = one thread per chain up to the OpenMP limit; 1 = serial reference.
  int threads = 0;
};

struct ChainStats {
  double step_size = 0.0;
  std::vector<double> inv_metric;
  std::int64_t n_divergent = 0;  // post-warmup
  std::int64_t n_leapfrog = 0;   // including warmup
  double mean_accept = 0.0;      // post-warmup
};

// Post-warmup draws over the unconstrained space.
struct RawRun {
  int n_chains = 0, n_draws = 0, dim = 0;
  std::vector<double> draws;              // [chain][draw][dim]
  std::vector<std::uint8_t> divergent;    // [chain][draw]
  std::vector<ChainStats> chains;

  std::span<const double> draw(int chain, int d) const {
    return {draws.data() +
                (static_cast<std::size_t>(chain) * n_draws + d) * dim,
            static_cast<std::size_t>(dim)};
  }
};

struct SamplerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Phase-space point with its cached target value and gradient.
struct Phase {
  std::vector<double> q, p, grad;
  double lp = 0.0;
};

double kinetic_energy(std::span<const double> p,
                      std::span<const double> inv_metric);

// One leapfrog step of size eps (eps < 0 integrates backwards); updates the
// phase point in place, including its cached gradient.
void leapfrog(const LogDensity& target, std::span<const double> inv_metric,
              double eps, Phase& z);

// Uniform draws in a cube until the density and gradient are finite.
std::vector<double> initialize_chain(const LogDensity& target, Rng& rng,
                                     double radius, int max_tries);

// Multi-chain adaptive sampler: dynamic trajectory lengths chosen by a
// U-turn criterion with multinomial state selection, dual-averaged step
// size, and a diagonal metric adapted over expanding warmup windows.
// Chains are independent streams, so results are bit-identical for a given
// seed regardless of thread count.
RawRun nuts_sample(const LogDensity& target, const NutsConfig& cfg);

// Posterior draws of one model fit, in reported-scalar form, with the
// per-draw pointwise log likelihood needed by fit-quality metrics.
struct PosteriorDraws {
  Variant variant = Variant::kHomogeneous;
  CauseSet causes;
  std::vector<std::string> countries;
  Hyperparams hyper;

  std::vector<std::string> names;          // reported scalars
  int n_chains = 0, n_draws = 0;           // kept draws per chain
  std::vector<double> values;              // [chain][draw][names]
  std::vector<std::pair<int, int>> loglik_rows;  // (country, cause)
  std::vector<double> loglik;              // [chain][draw][rows]
  std::vector<std::uint8_t> divergent;     // [chain][draw]
  std::vector<ChainStats> chains;

  int n_reported() const { return static_cast<int>(names.size()); }
  int total_draws() const { return n_chains * n_draws; }
  double value(int chain, int d, int k) const {
    return values[(static_cast<std::size_t>(chain) * n_draws + d) *
                      names.size() +
                  k];
  }
  std::span<const double> draw(int chain, int d) const {
    return {values.data() +
                (static_cast<std::size_t>(chain) * n_draws + d) * names.size(),
            names.size()};
  }
  std::int64_t n_divergent() const {
    std::int64_t n = 0;
    for (auto f : divergent) n += f;
    return n;
  }
  double divergence_rate() const {
    return total_draws() == 0
               ? 0.0
               : static_cast<double>(n_divergent()) / total_draws();
  }
  int name_index(const std::string& name) const;
};

// Samples the model's posterior and materialises reported scalars plus the
// pointwise log likelihood for every kept draw.
PosteriorDraws fit(const Model& model, const NutsConfig& cfg);

}  // namespace miscal

#endif
