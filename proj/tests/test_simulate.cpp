#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "miscal/simulate.hpp"

using namespace miscal;

namespace {

bool matrices_equal(const MisclassMatrix& a, const MisclassMatrix& b,
                    double tol) {
  if (a.dim() != b.dim()) return false;
  for (int i = 0; i < a.dim(); ++i) {
    for (int j = 0; j < a.dim(); ++j) {
      if (std::abs(a.at(i, j) - b.at(i, j)) > tol) return false;
    }
  }
  return true;
}

ScenarioConfig small_cfg(Variant truth) {
  ScenarioConfig cfg;
  cfg.truth = truth;
  cfg.n_causes = 3;
  cfg.n_countries = 3;
  cfg.n_per_country = 40;
  cfg.replications = 2;
  cfg.seed = 77;
  cfg.truth_seed = 8017;
  cfg.sampler.n_chains = 2;
  cfg.sampler.n_warmup = 200;
  cfg.sampler.n_draws = 150;
  return cfg;
}

}  // namespace

TEST_CASE("homogeneous truth repeats the pooled matrix") {
  TruthParams t = draw_truth(Variant::kHomogeneous, 4, 5, Hyperparams{}, 42);
  REQUIRE(t.country.size() == 5);
  for (const auto& m : t.country) CHECK(matrices_equal(m, t.pooled, 0.0));
  CHECK(std::isinf(t.omega_sens));
  CHECK(std::isinf(t.omega_rfp));
  CHECK(t.omega_pool > 0.0);
}

TEST_CASE("partly heterogeneous truth varies sensitivities only") {
  TruthParams t = draw_truth(Variant::kPartlyHet, 4, 5, Hyperparams{}, 42);
  SensRelFP pooled = decompose(t.pooled);
  double sens_spread = 0.0;
  for (int s = 0; s < 5; ++s) {
    SensRelFP parts = decompose(t.country[s]);
    for (int i = 0; i < 4; ++i) {
      REQUIRE_FALSE(parts.degenerate[i]);
      for (int j = 0; j < 3; ++j) {
        CHECK(parts.rel_fp[i][j] ==
              doctest::Approx(pooled.rel_fp[i][j]).epsilon(1e-9));
      }
      sens_spread += std::abs(parts.sensitivity[i] - pooled.sensitivity[i]);
    }
  }
  CHECK(sens_spread > 0.01);
  CHECK(std::isfinite(t.omega_sens));
  CHECK(std::isinf(t.omega_rfp));
}

TEST_CASE("fully heterogeneous truth varies profiles too") {
  TruthParams t = draw_truth(Variant::kFullyHet, 4, 5, Hyperparams{}, 42);
  SensRelFP a = decompose(t.country[0]);
  SensRelFP b = decompose(t.country[1]);
  double profile_gap = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      profile_gap += std::abs(a.rel_fp[i][j] - b.rel_fp[i][j]);
    }
  }
  CHECK(profile_gap > 0.01);
  CHECK(std::isfinite(t.omega_sens));
  CHECK(std::isfinite(t.omega_rfp));
  CHECK_THROWS_AS(draw_truth(Variant::kBase, 4, 5, Hyperparams{}, 42),
                  std::invalid_argument);
}

TEST_CASE("truth draws are seed-deterministic") {
  TruthParams a = draw_truth(Variant::kFullyHet, 3, 4, Hyperparams{}, 9);
  TruthParams b = draw_truth(Variant::kFullyHet, 3, 4, Hyperparams{}, 9);
  TruthParams c = draw_truth(Variant::kFullyHet, 3, 4, Hyperparams{}, 10);
  CHECK(matrices_equal(a.pooled, b.pooled, 0.0));
  for (int s = 0; s < 4; ++s) {
    CHECK(matrices_equal(a.country[s], b.country[s], 0.0));
  }
  CHECK_FALSE(matrices_equal(a.pooled, c.pooled, 1e-6));
}

TEST_CASE("the frozen default truth seed lands in the detectable regime") {
  TruthParams t =
      draw_truth(Variant::kFullyHet, 5, 6, Hyperparams{}, kDefaultTruthSeed);
  CHECK(t.omega_pool > 30.0);
  CHECK(t.omega_pool < 500.0);
  CHECK(t.omega_sens > 4.0);
  CHECK(t.omega_sens < 25.0);
  CHECK(t.omega_rfp > 2.0);
  CHECK(t.omega_rfp < 12.0);
  for (double a : t.base.accuracy) {
    CHECK(a > 0.25);
    CHECK(a < 0.95);
  }
  for (double p : t.base.pull) {
    CHECK(p > 0.04);
    CHECK(p < 0.55);
  }
  double spread = 0.0;
  for (int i = 0; i < 5; ++i) {
    double lo = 1.0, hi = 0.0;
    for (int s = 0; s < 6; ++s) {
      lo = std::min(lo, t.country[s].at(i, i));
      hi = std::max(hi, t.country[s].at(i, i));
    }
    spread += hi - lo;
  }
  CHECK(spread / 5.0 > 0.12);
}

TEST_CASE("generated counts honor totals, margins, and seeds") {
  ScenarioConfig cfg = small_cfg(Variant::kFullyHet);
  Dataset a = generate_dataset(cfg, 1001);
  Dataset b = generate_dataset(cfg, 1001);
  Dataset c = generate_dataset(cfg, 1002);

  REQUIRE(a.counts.size() == 3);
  for (const auto& m : a.counts) CHECK(m.total() == 40);
  bool same = true, diff = false;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        same = same && a.counts[s].at(i, j) == b.counts[s].at(i, j);
        diff = diff || a.counts[s].at(i, j) != c.counts[s].at(i, j);
      }
    }
  }
  CHECK(same);
  CHECK(diff);

  ScenarioConfig pinned = cfg;
  pinned.margins = {{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}};
  Dataset d = generate_dataset(pinned, 5);
  for (const auto& m : d.counts) {
    CHECK(m.row_total(0) == 40);
    CHECK(m.row_total(1) == 0);
    CHECK(m.row_total(2) == 0);
  }
}

TEST_CASE("empirical proportions converge to the truth matrices") {
  ScenarioConfig cfg;
  cfg.truth = Variant::kFullyHet;
  cfg.n_causes = 3;
  cfg.n_countries = 2;
  cfg.n_per_country = 10000;
  cfg.seed = 4;
  cfg.truth_seed = 8017;
  Dataset ds = generate_dataset(cfg, 31337);
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 3; ++i) {
      double n = static_cast<double>(ds.counts[s].row_total(i));
      REQUIRE(n > 0);
      for (int j = 0; j < 3; ++j) {
        double prop = ds.counts[s].at(i, j) / n;
        CHECK(std::abs(prop - ds.truth[s].at(i, j)) < 0.05);
      }
    }
  }
}

TEST_CASE("scenario validation rejects malformed configs") {
  ScenarioConfig cfg = small_cfg(Variant::kFullyHet);
  cfg.truth = Variant::kBase;
  CHECK_THROWS_AS(generate_dataset(cfg, 1), std::invalid_argument);
  cfg = small_cfg(Variant::kFullyHet);
  cfg.n_causes = 1;
  CHECK_THROWS_AS(generate_dataset(cfg, 1), std::invalid_argument);
  cfg = small_cfg(Variant::kFullyHet);
  cfg.margins = {{0.5, 0.5, 0.0}};
  CHECK_THROWS_AS(generate_dataset(cfg, 1), std::invalid_argument);
  cfg = small_cfg(Variant::kFullyHet);
  cfg.replications = 0;
  CHECK_THROWS_AS(run_study(cfg), std::invalid_argument);
}

TEST_CASE("supplied truth parameters override the seeded draw") {
  ScenarioConfig cfg = small_cfg(Variant::kHomogeneous);
  TruthParams t;
  t.base.accuracy = {0.6, 0.7, 0.8};
  t.base.pull = {0.3, 0.3, 0.4};
  t.pooled = build_base_matrix(t.base);
  t.country = {t.pooled, t.pooled, t.pooled};
  t.omega_pool = 100.0;
  t.omega_sens = std::numeric_limits<double>::infinity();
  t.omega_rfp = std::numeric_limits<double>::infinity();
  cfg.truth_params = t;

  Dataset ds = generate_dataset(cfg, 12);
  for (int s = 0; s < 3; ++s) {
    CHECK(matrices_equal(ds.truth[s], t.pooled, 0.0));
  }
}

TEST_CASE("the study grid runs, aggregates, and reproduces bit-for-bit") {
  ScenarioConfig cfg = small_cfg(Variant::kFullyHet);
  StudyResult res = run_study(cfg);

  REQUIRE(res.cells.size() == 6);
  CHECK(res.n_failed == 0);
  for (int r = 0; r < 2; ++r) {
    CHECK(res.cell(r, 0).dataset_seed == res.cell(r, 1).dataset_seed);
    CHECK(res.cell(r, 0).dataset_seed == res.cell(r, 2).dataset_seed);
    CHECK(res.cell(r, 0).fit_seed != res.cell(r, 1).fit_seed);
    for (int m = 0; m < 3; ++m) {
      const MethodResult& cell = res.cell(r, m);
      CHECK_FALSE(cell.failed);
      CHECK(std::isfinite(cell.waic));
      CHECK(std::isfinite(cell.loo_ic));
      CHECK(std::isfinite(cell.in_mse));
      CHECK(cell.in_mse >= 0.0);
      CHECK(std::isfinite(cell.in_interval_score));
      CHECK(cell.in_interval_score > 0.0);
      CHECK(std::isnan(cell.out_interval_score));
      CHECK(std::isfinite(cell.max_rhat));
    }
  }
  REQUIRE(res.aggregates.size() == 3);
  for (const auto& agg : res.aggregates) {
    CHECK(agg.n_ok == 2);
    CHECK(std::isfinite(agg.mean_waic));
    CHECK(std::isfinite(agg.se_waic));
    CHECK(std::isfinite(agg.mean_mse));
  }

  PairedDiff d =
      paired_diff(res, Variant::kFullyHet, Variant::kHomogeneous,
                  &MethodResult::waic);
  CHECK(d.n == 2);
  CHECK(std::isfinite(d.mean));
  CHECK(d.a_better >= 0);
  CHECK(d.a_better <= 2);

  StudyResult rerun = run_study(cfg);
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    CHECK(res.cells[i].waic == rerun.cells[i].waic);
    CHECK(res.cells[i].loo_ic == rerun.cells[i].loo_ic);
    CHECK(res.cells[i].in_mse == rerun.cells[i].in_mse);
    CHECK(res.cells[i].in_interval_score ==
          rerun.cells[i].in_interval_score);
  }
}

TEST_CASE("leave-one-country-out scoring produces finite method scores") {
  ScenarioConfig cfg = small_cfg(Variant::kPartlyHet);
  cfg.replications = 1;
  cfg.loco = true;
  cfg.sampler.n_warmup = 150;
  cfg.sampler.n_draws = 100;
  StudyResult res = run_study(cfg);
  REQUIRE(res.cells.size() == 3);
  CHECK(res.n_failed == 0);
  for (int m = 0; m < 3; ++m) {
    const MethodResult& cell = res.cell(0, m);
    CHECK(std::isfinite(cell.out_interval_score));
    CHECK(cell.out_interval_score > 0.0);
  }
}
