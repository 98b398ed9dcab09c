#ifndef MISCAL_SIMULATE_HPP
#define MISCAL_SIMULATE_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miscal/matrix.hpp"
#include "miscal/model.hpp"
#include "miscal/sampler.hpp"

namespace miscal {

// True generating parameters of one study: pooled layer plus per-country
// matrices already shaped by the scenario (homogeneous truths repeat the
// pooled matrix, partly heterogeneous truths share its error profiles).
struct TruthParams {
  BaseParams base;
  double omega_pool = 0, omega_sens = 0, omega_rfp = 0;
  MisclassMatrix pooled;
  std::vector<MisclassMatrix> country;
};

// Study seed whose hierarchy draw gives a moderately heterogeneous,
// comfortably interior truth at the default scale (5 causes, 6 countries):
// accuracies in (0.25, 0.95), attractions in (0.04, 0.55), pooled spread
// inside (30, 500), country spreads inside (4, 25) and (2, 12), and a mean
// per-cause sensitivity range across countries above 0.12.
inline constexpr std::uint64_t kDefaultTruthSeed = 8017;

struct ScenarioConfig {
  Variant truth = Variant::kFullyHet;  // generating scenario, never kBase
  int n_causes = 5;
  int n_countries = 6;
  int n_per_country = 50;
  int replications = 10;  // desk scale; paper scale uses 50
  std::uint64_t seed = 0;
  std::uint64_t truth_seed = kDefaultTruthSeed;
  // Per-country gold-cause margins; empty means uniform.
  std::vector<std::vector<double>> margins;
  std::optional<TruthParams> truth_params;  // supplied instead of drawn
  NutsConfig sampler;
  Hyperparams hyper;
  bool loco = false;  // leave-one-country-out predictive scoring
  int threads = 0;    // replication-level parallelism; 0 = library default
};

// "stem1" .. "stemN": the synthetic cause and country labels used by
// generated studies.
std::vector<std::string> numbered_labels(const std::string& stem, int n);

// Draws one full truth set from the generative hierarchy and shapes the
// country matrices for the scenario.
TruthParams draw_truth(Variant scenario, int n_causes, int n_countries,
                       const Hyperparams& hyper, std::uint64_t seed);

// Scenario truth: supplied parameters when present, otherwise the seeded
// hierarchy draw.
TruthParams resolve_truth(const ScenarioConfig& cfg);

struct Dataset {
  CauseSet causes;
  std::vector<std::string> countries;
  std::vector<CountMatrix> counts;
  std::vector<MisclassMatrix> truth;  // per-country generating matrices
};

// Gold counts from the margins, then one multinomial row draw per gold
// cause under the country's truth matrix.
Dataset generate_dataset(const ScenarioConfig& cfg,
                         std::uint64_t replication_seed);

// One (replication, fitted method) cell of the study grid.
struct MethodResult {
  int replication = 0;
  Variant method = Variant::kHomogeneous;
  std::uint64_t dataset_seed = 0, fit_seed = 0;
  double waic = 0, loo_ic = 0;
  double in_mse = 0;             // vs truth, mean over countries and cells
  double in_interval_score = 0;  // 95% equal-tailed, same averaging
  double out_interval_score = 0; // leave-one-country-out; NaN when off
  double max_rhat = 0;
  std::int64_t n_divergent = 0;
  bool failed = false;
  std::string error;
};

struct MethodAggregate {
  Variant method = Variant::kHomogeneous;
  int n_ok = 0;
  double mean_waic = 0, se_waic = 0;
  double mean_loo = 0, se_loo = 0;
  double mean_mse = 0, se_mse = 0;
  double mean_is = 0, se_is = 0;
  double mean_out_is = 0, se_out_is = 0;
};

struct StudyResult {
  ScenarioConfig cfg;
  TruthParams truth;
  std::vector<MethodResult> cells;  // replication-major, 3 methods each
  std::vector<MethodAggregate> aggregates;
  int n_failed = 0;

  const MethodResult& cell(int replication, int method_idx) const {
    return cells[static_cast<std::size_t>(replication) * 3 + method_idx];
  }
};

// Mean and Monte-Carlo standard error of a paired per-replication metric
// difference (a minus b), plus how often a strictly beats b (lower wins).
struct PairedDiff {
  double mean = 0, se = 0;
  int n = 0;
  int a_better = 0;
};

PairedDiff paired_diff(const StudyResult& result, Variant a, Variant b,
                       double MethodResult::*metric);

// Fits the three pooled-layer methods to every replication and aggregates
// comparison metrics; replications run as independent seeded tasks.
StudyResult run_study(const ScenarioConfig& cfg);

}  // namespace miscal

#endif
