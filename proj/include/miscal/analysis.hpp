#ifndef MISCAL_ANALYSIS_HPP
#define MISCAL_ANALYSIS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "miscal/matrix.hpp"
#include "miscal/sampler.hpp"

namespace miscal {

// Sample quantile with linear interpolation between order statistics
// (type 7): deterministic, matches the reporting convention everywhere.
double quantile_type7(std::vector<double> values, double p);

struct SummaryRow {
  std::string name;
  double mean = 0, sd = 0;
  double q2_5 = 0, q25 = 0, q50 = 0, q75 = 0, q97_5 = 0;
};
using SummaryTable = std::vector<SummaryRow>;

// Per-scalar posterior means, sds, and equal-tailed quantiles pooled over
// chains.
SummaryTable summarize(const PosteriorDraws& draws);

// Deviance-scale predictive criteria from a pointwise log-likelihood
// matrix; lower is better for both.
struct ComparisonMetrics {
  double waic = 0, waic_se = 0;
  double loo_ic = 0, loo_se = 0;
  double lppd = 0, p_waic = 0, p_loo = 0;
  std::vector<double> pareto_k;   // per row; NaN when no tail fit was done
  std::vector<int> high_k_rows;   // rows with pareto_k > 0.7
};

// loglik is draw-major: draws.size() / n_rows draws of n_rows entries each.
// Importance weights for the leave-one-out criterion are Pareto-smoothed
// over the largest max(5, S/5) weights per row.
ComparisonMetrics loo_ic(std::span<const double> loglik, int n_rows);
double waic(std::span<const double> loglik, int n_rows);

// Interval score at level alpha for a central (1-alpha) interval: the width
// plus 2/alpha times the distance by which the truth escapes the interval.
double interval_score(double lower, double upper, double truth,
                      double alpha = 0.05);

struct ErrorTable {
  int n_causes = 0;
  std::vector<double> abs_bias;  // row-major cells
  std::vector<double> sq_err;
  double mean_abs_bias = 0;
  double mean_sq_err = 0;
};

ErrorTable bias_and_mse(const MisclassMatrix& estimate,
                        const MisclassMatrix& truth);

// Posterior predictive misclassification matrices for a country that
// contributed no data, one per retained draw.
struct PredictiveDraws {
  CauseSet causes;
  int n_draws = 0;
  std::vector<double> phi;  // [draw][cause][cause]

  std::span<const double> matrix(int d) const {
    std::size_t cells =
        static_cast<std::size_t>(causes.size()) * causes.size();
    return {phi.data() + static_cast<std::size_t>(d) * cells, cells};
  }
  MisclassMatrix matrix_at(int d) const;
};

// Extrapolation to an unseen country: per posterior draw, sensitivities are
// redrawn around the pooled diagonal at strength omega_sens and (for the
// fully heterogeneous variant) error profiles around the pooled profile at
// strength omega_rfp.  The homogeneous variant returns the pooled draws
// unchanged; the base variant has no pooled layer to extrapolate from and
// is rejected.
PredictiveDraws predict_new_country(const PosteriorDraws& draws,
                                    std::uint64_t seed);

}  // namespace miscal

#endif
