#include "miscal/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "miscal/analysis.hpp"
#include "miscal/diagnostics.hpp"
#include "miscal/rng.hpp"

#ifdef MISCAL_HAVE_OPENMP
#include <omp.h>
#endif

namespace miscal {

std::vector<std::string> numbered_labels(const std::string& stem, int n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (int i = 1; i <= n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr Variant kMethods[3] = {Variant::kHomogeneous, Variant::kPartlyHet,
                                 Variant::kFullyHet};

void validate(const ScenarioConfig& cfg) {
  if (cfg.truth == Variant::kBase) {
    throw std::invalid_argument(
        "truth scenario must be homogeneous, partly_het, or fully_het");
  }
  if (cfg.n_causes < 2) throw std::invalid_argument("n_causes must be >= 2");
  if (cfg.n_countries < 2) {
    throw std::invalid_argument("n_countries must be >= 2");
  }
  if (cfg.n_per_country < 1) {
    throw std::invalid_argument("n_per_country must be >= 1");
  }
  if (cfg.replications < 1) {
    throw std::invalid_argument("replications must be >= 1");
  }
  if (!cfg.margins.empty()) {
    if (static_cast<int>(cfg.margins.size()) != cfg.n_countries) {
      throw std::invalid_argument("margins must cover every country");
    }
    for (const auto& m : cfg.margins) {
      if (static_cast<int>(m.size()) != cfg.n_causes) {
        throw std::invalid_argument("margin length must equal n_causes");
      }
      double tot = 0.0;
      for (double p : m) {
        if (!(p >= 0.0)) {
          throw std::invalid_argument("margins must be nonnegative");
        }
        tot += p;
      }
      if (!(tot > 0.0)) {
        throw std::invalid_argument("margins must have positive mass");
      }
    }
  }
  if (cfg.truth_params) {
    const TruthParams& t = *cfg.truth_params;
    if (t.pooled.dim() != cfg.n_causes ||
        static_cast<int>(t.country.size()) != cfg.n_countries) {
      throw std::invalid_argument("supplied truth has mismatched dimensions");
    }
    for (const auto& m : t.country) {
      if (m.dim() != cfg.n_causes) {
        throw std::invalid_argument(
            "supplied truth has mismatched dimensions");
      }
    }
  }
}

int phi_base(const PosteriorDraws& draws, const std::string& country) {
  const std::string c0 = draws.causes.label(0);
  int k = draws.name_index("phi." + country + "." + c0 + "." + c0);
  if (k < 0) k = draws.name_index("phi.pooled." + c0 + "." + c0);
  if (k < 0) throw std::logic_error("draws carry no matrix columns");
  return k;
}

// Mean, 2.5% and 97.5% quantiles of one reported scalar over all chains.
struct CellSummary {
  double mean, lo, hi;
};

CellSummary cell_summary(const PosteriorDraws& draws, int k,
                         std::vector<double>& scratch) {
  scratch.resize(draws.total_draws());
  std::size_t n = 0;
  double acc = 0.0;
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int d = 0; d < draws.n_draws; ++d) {
      double v = draws.value(c, d, k);
      scratch[n++] = v;
      acc += v;
    }
  }
  return {acc / static_cast<double>(n), quantile_type7(scratch, 0.025),
          quantile_type7(scratch, 0.975)};
}

// Leave-one-country-out predictive interval score for one fitted method,
// averaged over held-out countries and matrix cells.
double loco_interval_score(const ScenarioConfig& cfg, const Dataset& ds,
                           Variant method, std::uint64_t fit_seed) {
  const int c = cfg.n_causes;
  const int s_all = cfg.n_countries;
  double acc = 0.0;
  std::vector<double> series;
  for (int hold = 0; hold < s_all; ++hold) {
    ModelSpec sp;
    sp.variant = method;
    sp.causes = ds.causes;
    sp.hyper = cfg.hyper;
    for (int s = 0; s < s_all; ++s) {
      if (s == hold) continue;
      sp.countries.push_back(ds.countries[s]);
      sp.counts.push_back(ds.counts[s]);
    }
    Model model(sp);
    NutsConfig nc = cfg.sampler;
    nc.seed = derive_seed(fit_seed, 0x10c0ULL + hold);
    PosteriorDraws draws = fit(model, nc);
    PredictiveDraws pred =
        predict_new_country(draws, derive_seed(fit_seed, 0x9cedULL + hold));

    series.resize(pred.n_draws);
    double cells = 0.0;
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < c; ++j) {
        for (int d = 0; d < pred.n_draws; ++d) {
          series[d] = pred.matrix(d)[static_cast<std::size_t>(i) * c + j];
        }
        double lo = quantile_type7(series, 0.025);
        double hi = quantile_type7(series, 0.975);
        cells += interval_score(lo, hi, ds.truth[hold].at(i, j), 0.05);
      }
    }
    acc += cells / (c * c);
  }
  return acc / s_all;
}

MethodResult fit_cell(const ScenarioConfig& cfg, int rep, int mi) {
  MethodResult r;
  r.replication = rep;
  r.method = kMethods[mi];
  r.dataset_seed = derive_seed(cfg.seed, 0xda7a0000ULL + rep);
  r.fit_seed = derive_seed(cfg.seed, 0xf1700000ULL + rep * 8ULL + mi);
  r.waic = r.loo_ic = r.in_mse = r.in_interval_score = kNan;
  r.out_interval_score = kNan;
  r.max_rhat = kNan;
  try {
    Dataset ds = generate_dataset(cfg, r.dataset_seed);
    ModelSpec sp;
    sp.variant = r.method;
    sp.causes = ds.causes;
    sp.countries = ds.countries;
    sp.counts = ds.counts;
    sp.hyper = cfg.hyper;
    Model model(sp);
    NutsConfig nc = cfg.sampler;
    nc.seed = r.fit_seed;
    PosteriorDraws draws = fit(model, nc);

    ComparisonMetrics cm = loo_ic(draws.loglik, model.n_loglik_rows());
    r.waic = cm.waic;
    r.loo_ic = cm.loo_ic;

    const int c = cfg.n_causes;
    double mse = 0.0, score = 0.0;
    std::vector<double> scratch;
    for (int s = 0; s < cfg.n_countries; ++s) {
      int base = phi_base(draws, ds.countries[s]);
      for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
          CellSummary cs =
              cell_summary(draws, base + i * c + j, scratch);
          double tv = ds.truth[s].at(i, j);
          mse += (cs.mean - tv) * (cs.mean - tv);
          score += interval_score(cs.lo, cs.hi, tv, 0.05);
        }
      }
    }
    double cells = static_cast<double>(cfg.n_countries) * c * c;
    r.in_mse = mse / cells;
    r.in_interval_score = score / cells;

    Diagnostics dg = diagnose(draws);
    r.max_rhat = dg.max_rhat;
    r.n_divergent = dg.n_divergent;

    if (cfg.loco) {
      r.out_interval_score = loco_interval_score(cfg, ds, r.method,
                                                 r.fit_seed);
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

struct Accumulator {
  double sum = 0, sum_sq = 0;
  int n = 0;
  void add(double x) {
    if (!std::isfinite(x)) return;
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return n > 0 ? sum / n : kNan; }
  double se() const {
    if (n < 2) return kNan;
    double m = mean();
    double var = (sum_sq - n * m * m) / (n - 1);
    return std::sqrt(std::max(var, 0.0) / n);
  }
};

}  // namespace

TruthParams draw_truth(Variant scenario, int n_causes, int n_countries,
                       const Hyperparams& hyper, std::uint64_t seed) {
  if (scenario == Variant::kBase) {
    throw std::invalid_argument(
        "truth scenario must carry a pooled layer; base has none");
  }
  ModelSpec sp;
  sp.variant = Variant::kFullyHet;
  sp.causes = CauseSet(numbered_labels("cause", n_causes));
  sp.countries = numbered_labels("country", n_countries);
  std::vector<std::vector<std::int64_t>> zeros(
      n_causes, std::vector<std::int64_t>(n_causes, 0));
  for (int s = 0; s < n_countries; ++s) {
    sp.counts.push_back(CountMatrix::from_rows(zeros));
  }
  sp.hyper = hyper;
  Model model(sp);

  Rng rng(seed, 0x74727574ULL);
  ParamBlock block = model.prior_sample(rng);

  TruthParams t;
  t.base.accuracy = block.accuracy;
  t.base.pull = block.pull;
  t.omega_pool = block.omega_pool;
  t.pooled = model.pooled_matrix(block);

  const double inf = std::numeric_limits<double>::infinity();
  t.omega_sens = scenario == Variant::kHomogeneous ? inf : block.omega_sens;
  t.omega_rfp = scenario == Variant::kFullyHet ? block.omega_rfp : inf;

  t.country.reserve(n_countries);
  for (int s = 0; s < n_countries; ++s) {
    switch (scenario) {
      case Variant::kHomogeneous:
        t.country.push_back(t.pooled);
        break;
      case Variant::kPartlyHet: {
        SensRelFP parts;
        parts.sensitivity = block.sens_c[s];
        parts.rel_fp = block.rfp;
        parts.degenerate.assign(n_causes, false);
        t.country.push_back(recompose(parts));
        break;
      }
      default:
        t.country.push_back(model.country_matrix(block, s));
    }
  }
  return t;
}

TruthParams resolve_truth(const ScenarioConfig& cfg) {
  validate(cfg);
  if (cfg.truth_params) return *cfg.truth_params;
  return draw_truth(cfg.truth, cfg.n_causes, cfg.n_countries, cfg.hyper,
                    cfg.truth_seed);
}

Dataset generate_dataset(const ScenarioConfig& cfg,
                         std::uint64_t replication_seed) {
  TruthParams truth = resolve_truth(cfg);
  const int c = cfg.n_causes;

  Dataset ds;
  ds.causes = CauseSet(numbered_labels("cause", c));
  ds.countries = numbered_labels("country", cfg.n_countries);
  ds.truth = truth.country;

  Rng rng(replication_seed, 0xda7aULL);
  std::vector<double> margin(c, 1.0 / c), row_p(c);
  std::vector<std::int64_t> gold(c), row(c);
  for (int s = 0; s < cfg.n_countries; ++s) {
    if (!cfg.margins.empty()) {
      margin = cfg.margins[s];
    }
    rng.multinomial(cfg.n_per_country, margin, gold);
    std::vector<std::vector<std::int64_t>> cells(
        c, std::vector<std::int64_t>(c, 0));
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < c; ++j) row_p[j] = truth.country[s].at(i, j);
      rng.multinomial(gold[i], row_p, row);
      for (int j = 0; j < c; ++j) cells[i][j] = row[j];
    }
    ds.counts.push_back(CountMatrix::from_rows(cells));
  }
  return ds;
}

PairedDiff paired_diff(const StudyResult& result, Variant a, Variant b,
                       double MethodResult::*metric) {
  auto idx_of = [](Variant v) {
    for (int i = 0; i < 3; ++i) {
      if (kMethods[i] == v) return i;
    }
    throw std::invalid_argument("method is not part of the study grid");
  };
  const int ia = idx_of(a), ib = idx_of(b);

  PairedDiff out;
  Accumulator acc;
  int reps = static_cast<int>(result.cells.size()) / 3;
  for (int r = 0; r < reps; ++r) {
    const MethodResult& ca = result.cell(r, ia);
    const MethodResult& cb = result.cell(r, ib);
    if (ca.failed || cb.failed) continue;
    double d = ca.*metric - cb.*metric;
    if (!std::isfinite(d)) continue;
    acc.add(d);
    if (d < 0.0) ++out.a_better;
  }
  out.n = acc.n;
  out.mean = acc.mean();
  out.se = acc.se();
  return out;
}

StudyResult run_study(const ScenarioConfig& cfg) {
  validate(cfg);

  StudyResult out;
  out.cfg = cfg;
  out.truth = resolve_truth(cfg);

  const int n_tasks = cfg.replications * 3;
  out.cells.resize(n_tasks);

#ifdef MISCAL_HAVE_OPENMP
  int n_threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
  n_threads = std::min(n_threads, n_tasks);
#pragma omp parallel for schedule(dynamic) num_threads(n_threads)
  for (int t = 0; t < n_tasks; ++t) {
    out.cells[t] = fit_cell(cfg, t / 3, t % 3);
  }
#else
  for (int t = 0; t < n_tasks; ++t) {
    out.cells[t] = fit_cell(cfg, t / 3, t % 3);
  }
#endif

  for (int mi = 0; mi < 3; ++mi) {
    MethodAggregate agg;
    agg.method = kMethods[mi];
    Accumulator waic_a, loo_a, mse_a, is_a, out_a;
    for (int r = 0; r < cfg.replications; ++r) {
      const MethodResult& cell = out.cell(r, mi);
      if (cell.failed) continue;
      ++agg.n_ok;
      waic_a.add(cell.waic);
      loo_a.add(cell.loo_ic);
      mse_a.add(cell.in_mse);
      is_a.add(cell.in_interval_score);
      out_a.add(cell.out_interval_score);
    }
    agg.mean_waic = waic_a.mean();
    agg.se_waic = waic_a.se();
    agg.mean_loo = loo_a.mean();
    agg.se_loo = loo_a.se();
    agg.mean_mse = mse_a.mean();
    agg.se_mse = mse_a.se();
    agg.mean_is = is_a.mean();
    agg.se_is = is_a.se();
    agg.mean_out_is = out_a.mean();
    agg.se_out_is = out_a.se();
    out.aggregates.push_back(agg);
  }
  for (const auto& cell : out.cells) out.n_failed += cell.failed ? 1 : 0;
  return out;
}

}  // namespace miscal
