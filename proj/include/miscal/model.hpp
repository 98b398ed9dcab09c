#ifndef MISCAL_MODEL_HPP
#define MISCAL_MODEL_HPP

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "miscal/matrix.hpp"
#include "miscal/rng.hpp"

namespace miscal {

namespace detail {
struct ModelPrep;
}

// Nested model family for a classifier's misclassification structure.
//   kBase:         one shared-attraction matrix, no extra layers.
//   kHomogeneous:  one pooled matrix, centred on the base structure with an
//                  estimated spread.
//   kPartlyHet:    country-specific sensitivities around the pooled ones;
//                  error profiles stay pooled.
//   kFullyHet:     country-specific sensitivities and error profiles.
enum class Variant { kBase, kHomogeneous, kPartlyHet, kFullyHet };

std::string to_string(Variant v);
std::optional<Variant> variant_from_string(std::string_view s);

struct Hyperparams {
  // Beta prior on intrinsic accuracy.
  double acc_shape1 = 1.0, acc_shape2 = 1.0;
  // Dirichlet weights on the attraction vector; empty means all ones.
  std::vector<double> pull_conc;
  // Beta(eps, eps) on each spread's shrinkage weight.
  double shrink_eps = 0.5;
  // Offset added to every derived Beta/Dirichlet shape so they stay proper
  // even when a spread collapses to zero.
  double jeffreys = 0.5;
  // Smooth upper bound for the spread parameters.
  double omega_cap = 1e6;
};

// How a spread parameter scales the concentration of the layer below.
inline double beta_concentration(double omega) { return 2.0 * omega; }
inline double dirichlet_concentration(double omega, int n_causes) {
  return static_cast<double>(n_causes - 1) * omega;
}

struct ModelSpec {
  Variant variant = Variant::kHomogeneous;
  CauseSet causes;
  std::vector<std::string> countries;
  // One matrix per country, same cause order as `causes`.
  std::vector<CountMatrix> counts;
  Hyperparams hyper;
};

// Constrained parameter values for one posterior draw. Vectors are sized by
// the variant; spreads that do not exist in the variant stay NaN. At two
// causes the error profile over the single off-diagonal cause is the
// constant {1} and carries no free coordinates.
struct ParamBlock {
  std::vector<double> accuracy;                       // C
  std::vector<double> pull;                           // C
  std::vector<double> sens;                           // C (pooled)
  std::vector<std::vector<double>> rfp;               // C x (C-1) (pooled)
  std::vector<std::vector<double>> sens_c;            // S x C
  std::vector<std::vector<std::vector<double>>> rfp_c;  // S x C x (C-1)
  double omega_pool = std::numeric_limits<double>::quiet_NaN();
  double omega_sens = std::numeric_limits<double>::quiet_NaN();
  double omega_rfp = std::numeric_limits<double>::quiet_NaN();
};

// Which spreads to pin instead of drawing when sampling from the prior.
struct FixedEffects {
  std::optional<double> pooled, country_sens, country_rfp;
};

// Log posterior of one variant over an unconstrained coordinate vector,
// with reverse-mode gradients, plus the constrain/unconstrain maps and the
// generative (prior) sampler. Instances are immutable and cheap to copy.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const;
  int n_causes() const;
  int n_countries() const;
  // Number of free (unconstrained) coordinates.
  int dim() const;

  // Log posterior density of the transformed parameters, including the
  // transform Jacobian, up to no constant: multinomial coefficients and all
  // prior normalisers are kept so values are comparable across variants.
  double log_posterior(std::span<const double> u, std::span<double> grad) const;
  double log_posterior_value(std::span<const double> u) const;

  ParamBlock constrain(std::span<const double> u) const;
  // Inverse of constrain; every constrained value must be interior.
  std::vector<double> unconstrain(const ParamBlock& block) const;

  // Scalars reported per draw: the constrained parameters followed by every
  // implied matrix cell, in the order of reported_names().
  const std::vector<std::string>& reported_names() const;
  int n_reported() const;
  void reported(const ParamBlock& block, std::span<double> out) const;

  // Pointwise likelihood unit: one (country, gold cause) multinomial row.
  int n_loglik_rows() const;
  const std::vector<std::pair<int, int>>& loglik_rows() const;
  void pointwise_loglik(std::span<const double> u, std::span<double> out) const;

  MisclassMatrix pooled_matrix(const ParamBlock& block) const;
  MisclassMatrix country_matrix(const ParamBlock& block, int country) const;

  // Ancestral draw from the prior; spreads in `fixed` are pinned. Unit and
  // simplex draws are nudged a hair inside the boundary so every draw can
  // be unconstrained.
  ParamBlock prior_sample(Rng& rng, const FixedEffects& fixed = {}) const;

 private:
  std::shared_ptr<const detail::ModelPrep> prep_;
};

}  // namespace miscal

#endif
