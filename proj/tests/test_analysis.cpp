#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "miscal/analysis.hpp"
#include "miscal/kernels.hpp"
#include "miscal/rng.hpp"

using namespace miscal;

namespace {

PosteriorDraws synthetic_draws(
    Variant v, const CauseSet& causes, std::vector<std::string> names,
    int n_draws, const std::function<void(int, std::span<double>)>& fill) {
  PosteriorDraws d;
  d.variant = v;
  d.causes = causes;
  d.names = std::move(names);
  d.n_chains = 1;
  d.n_draws = n_draws;
  d.values.resize(static_cast<std::size_t>(n_draws) * d.names.size());
  for (int i = 0; i < n_draws; ++i) {
    fill(i, {d.values.data() + static_cast<std::size_t>(i) * d.names.size(),
             d.names.size()});
  }
  d.divergent.assign(n_draws, 0);
  return d;
}

std::vector<std::string> pooled_phi_names(const CauseSet& causes) {
  std::vector<std::string> names;
  for (int i = 0; i < causes.size(); ++i) {
    for (int j = 0; j < causes.size(); ++j) {
      names.push_back("phi.pooled." + causes.label(i) + "." +
                      causes.label(j));
    }
  }
  return names;
}

double binom_logpmf(int y, int n, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) -
         std::lgamma(n - y + 1.0) + y * std::log(p) +
         (n - y) * std::log1p(-p);
}

double beta_binom_logpmf(int y, int n, double a, double b) {
  return std::lgamma(n + 1.0) - std::lgamma(y + 1.0) -
         std::lgamma(n - y + 1.0) + lbeta(y + a, n - y + b) - lbeta(a, b);
}

}  // namespace

TEST_CASE("type-7 quantiles match hand values") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(quantile_type7(v, 0.5) == doctest::Approx(50.5).epsilon(1e-14));
  CHECK(quantile_type7(v, 0.025) == doctest::Approx(3.475).epsilon(1e-14));
  CHECK(quantile_type7(v, 0.0) == doctest::Approx(1.0));
  CHECK(quantile_type7(v, 1.0) == doctest::Approx(100.0));
  CHECK(quantile_type7({4.0, 4.0, 4.0}, 0.37) == doctest::Approx(4.0));
  CHECK_THROWS_AS(quantile_type7({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quantile_type7({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("summaries report pooled moments and monotone quantiles") {
  CauseSet causes({"x", "y"});
  PosteriorDraws d = synthetic_draws(
      Variant::kHomogeneous, causes, {"flat", "ramp"}, 100,
      [](int i, std::span<double> out) {
        out[0] = 2.5;
        out[1] = static_cast<double>(i + 1);
      });
  d.n_chains = 2;
  d.n_draws = 50;

  SummaryTable table = summarize(d);
  REQUIRE(table.size() == 2);
  CHECK(table[0].mean == doctest::Approx(2.5));
  CHECK(table[0].sd == doctest::Approx(0.0));
  CHECK(table[0].q2_5 == doctest::Approx(2.5));
  CHECK(table[0].q97_5 == doctest::Approx(2.5));
  CHECK(table[1].mean == doctest::Approx(50.5));
  CHECK(table[1].q50 == doctest::Approx(50.5));
  CHECK(table[1].q2_5 <= table[1].q25);
  CHECK(table[1].q25 <= table[1].q50);
  CHECK(table[1].q50 <= table[1].q75);
  CHECK(table[1].q75 <= table[1].q97_5);
  CHECK(table[1].mean >= 1.0);
  CHECK(table[1].mean <= 100.0);
}

TEST_CASE("identical log-likelihood draws give zero penalty") {
  // 2 draws x 3 rows, constant over draws.
  std::vector<double> ll = {-1.0, -2.0, -0.5, -1.0, -2.0, -0.5};
  ComparisonMetrics m = loo_ic(ll, 3);
  CHECK(m.p_waic == doctest::Approx(0.0));
  CHECK(m.waic == doctest::Approx(-2.0 * (-3.5)).epsilon(1e-12));
  CHECK(waic(ll, 3) == doctest::Approx(m.waic).epsilon(1e-14));
}

TEST_CASE("two-draw mixture reproduces the hand lppd") {
  std::vector<double> ll = {std::log(0.5), std::log(0.25)};
  ComparisonMetrics m = loo_ic(ll, 1);
  CHECK(m.lppd == doctest::Approx(std::log(0.375)).epsilon(1e-12));
  double v = std::log(2.0) * std::log(2.0) / 2.0;  // sample variance
  CHECK(m.p_waic == doctest::Approx(v).epsilon(1e-12));
  CHECK(m.waic ==
        doctest::Approx(-2.0 * (std::log(0.375) - v)).epsilon(1e-12));
  CHECK(std::isnan(m.pareto_k[0]));  // too few draws for a tail fit
}

TEST_CASE("non-finite log likelihood is rejected") {
  std::vector<double> ll = {-1.0, -std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(loo_ic(ll, 1), std::invalid_argument);
  CHECK_THROWS_AS(waic(ll, 1), std::invalid_argument);
  CHECK_THROWS_AS(loo_ic(std::vector<double>{-1.0, -2.0, -3.0}, 2),
                  std::invalid_argument);
}

TEST_CASE("importance-sampled LOO matches the conjugate oracle") {
  const double a0 = 2.0, b0 = 2.0;
  const std::vector<int> y = {3, 7, 5};
  const int n = 10, n_rows = 3, s = 4000;
  int sum_y = 15, sum_f = 15;

  Rng rng(424242, 0);
  std::vector<double> ll(static_cast<std::size_t>(s) * n_rows);
  for (int d = 0; d < s; ++d) {
    double p = rng.beta(a0 + sum_y, b0 + sum_f);
    for (int r = 0; r < n_rows; ++r) {
      ll[static_cast<std::size_t>(d) * n_rows + r] =
          binom_logpmf(y[r], n, p);
    }
  }
  ComparisonMetrics m = loo_ic(ll, n_rows);

  double elpd_exact = 0.0;
  for (int r = 0; r < n_rows; ++r) {
    double a = a0 + (sum_y - y[r]);
    double b = b0 + (sum_f - (n - y[r]));
    elpd_exact += beta_binom_logpmf(y[r], n, a, b);
  }
  double loo_exact = -2.0 * elpd_exact;

  CHECK(m.loo_ic == doctest::Approx(loo_exact).epsilon(0.02));
  CHECK(std::abs(m.loo_ic - loo_exact) < 0.3);
  CHECK(m.high_k_rows.empty());
  // Standard asymptotic agreement between the two criteria.
  double tol = 2.0 * std::max(m.waic_se, m.loo_se);
  CHECK(std::abs(m.waic - m.loo_ic) < tol);
  CHECK(m.p_waic > 0.0);
  CHECK(m.loo_se > 0.0);
}

TEST_CASE("heavy-tailed importance ratios are flagged") {
  // Log likelihood -x with x ~ Exp(1) makes the ratios Pareto with unit
  // shape, far above the 0.7 reliability threshold.
  const int s = 2000;
  Rng rng(7, 0);
  std::vector<double> ll(s);
  for (int d = 0; d < s; ++d) ll[d] = std::log(rng.uniform_open());
  ComparisonMetrics m = loo_ic(ll, 1);
  REQUIRE(m.pareto_k.size() == 1);
  CHECK(m.pareto_k[0] > 0.7);
  REQUIRE(m.high_k_rows.size() == 1);
  CHECK(m.high_k_rows[0] == 0);
}

TEST_CASE("interval score hand values and properness") {
  CHECK(interval_score(0.0, 1.0, 0.5) == doctest::Approx(1.0));
  CHECK(interval_score(0.2, 0.4, 0.5, 0.05) ==
        doctest::Approx(4.2).epsilon(1e-12));
  CHECK(interval_score(0.2, 0.4, 0.4, 0.05) ==
        doctest::Approx(0.2).epsilon(1e-12));
  CHECK(interval_score(0.2, 0.4, 0.2, 0.05) ==
        doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(interval_score(0.5, 0.4, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(interval_score(0.0, 1.0, 0.5, 0.0), std::invalid_argument);

  // Among fixed-width intervals, covering the truth never scores worse.
  const double truth = 0.5, width = 0.2;
  double covering = interval_score(0.4, 0.6, truth, 0.05);
  for (double lo = 0.0; lo <= 0.8; lo += 0.01) {
    CHECK(covering <= interval_score(lo, lo + width, truth, 0.05) + 1e-12);
  }
}

TEST_CASE("bias and mse tables") {
  MisclassMatrix est = MisclassMatrix::from_rows({{0.6, 0.4}, {0.3, 0.7}});
  MisclassMatrix truth = MisclassMatrix::from_rows({{0.5, 0.5}, {0.3, 0.7}});
  ErrorTable t = bias_and_mse(est, truth);
  CHECK(t.abs_bias[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(t.sq_err[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(t.abs_bias[2] == doctest::Approx(0.0));
  CHECK(t.mean_abs_bias == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(t.mean_sq_err == doctest::Approx(0.005).epsilon(1e-12));

  ErrorTable zero = bias_and_mse(truth, truth);
  CHECK(zero.mean_abs_bias == doctest::Approx(0.0));
  CHECK(zero.mean_sq_err == doctest::Approx(0.0));

  MisclassMatrix big = MisclassMatrix::from_rows(
      {{1.0, 0, 0}, {0, 1.0, 0}, {0, 0, 1.0}});
  CHECK_THROWS_AS(bias_and_mse(est, big), std::invalid_argument);
}

TEST_CASE("homogeneous prediction returns the pooled draws unchanged") {
  CauseSet causes({"x", "y", "z"});
  std::vector<std::string> names = pooled_phi_names(causes);
  PosteriorDraws d = synthetic_draws(
      Variant::kHomogeneous, causes, names, 50,
      [&](int i, std::span<double> out) {
        double s = 0.6 + 0.003 * i;
        for (int r = 0; r < 3; ++r) {
          out[r * 3 + r] = s;
          int off = 0;
          for (int j = 0; j < 3; ++j) {
            if (j != r) out[r * 3 + j] = (1.0 - s) * (off++ == 0 ? 0.25 : 0.75);
          }
        }
      });
  PredictiveDraws pred = predict_new_country(d, 99);
  REQUIRE(pred.n_draws == 50);
  for (int i = 0; i < 50; ++i) {
    std::span<const double> m = pred.matrix(i);
    for (int k = 0; k < 9; ++k) CHECK(m[k] == d.value(0, i, k));
  }
}

TEST_CASE("base draws cannot be extrapolated") {
  CauseSet causes({"x", "y"});
  PosteriorDraws d = synthetic_draws(Variant::kBase, causes,
                                     pooled_phi_names(causes), 10,
                                     [](int, std::span<double> out) {
                                       out[0] = 0.7;
                                       out[1] = 0.3;
                                       out[2] = 0.2;
                                       out[3] = 0.8;
                                     });
  CHECK_THROWS_AS(predict_new_country(d, 1), std::invalid_argument);
}

TEST_CASE("partly heterogeneous prediction draws sensitivities only") {
  CauseSet causes({"x", "y", "z"});
  std::vector<std::string> names = pooled_phi_names(causes);
  names.push_back("omega_sens");
  const double phi_d = 0.7, omega_s = 10.0;
  PosteriorDraws d = synthetic_draws(
      Variant::kPartlyHet, causes, names, 4000,
      [&](int, std::span<double> out) {
        for (int r = 0; r < 3; ++r) {
          out[r * 3 + r] = phi_d;
          int off = 0;
          for (int j = 0; j < 3; ++j) {
            if (j != r) {
              out[r * 3 + j] = (1.0 - phi_d) * (off++ == 0 ? 0.4 : 0.6);
            }
          }
        }
        out[9] = omega_s;
      });
  PredictiveDraws pred = predict_new_country(d, 2718);

  // Sensitivity draws follow a Beta law around the pooled diagonal whose
  // mean is (0.5 + 2*10*0.7) / (1 + 2*10).
  double expect = 14.5 / 21.0;
  double acc = 0.0;
  for (int i = 0; i < pred.n_draws; ++i) acc += pred.matrix(i)[0];
  acc /= pred.n_draws;
  CHECK(acc == doctest::Approx(expect).epsilon(0.01));
  CHECK(std::abs(acc - expect) < 0.005);

  // Profiles are copied exactly from the pooled decomposition.
  for (int i = 0; i < pred.n_draws; i += 97) {
    std::span<const double> m = pred.matrix(i);
    for (int r = 0; r < 3; ++r) {
      double s = m[r * 3 + r];
      CHECK(s > 0.0);
      CHECK(s < 1.0);
      int off = 0;
      for (int j = 0; j < 3; ++j) {
        if (j == r) continue;
        double q = m[r * 3 + j] / (1.0 - s);
        CHECK(q == doctest::Approx(off++ == 0 ? 0.4 : 0.6).epsilon(1e-9));
      }
    }
    pred.matrix_at(i);  // throws if any row is out of tolerance
  }
}

TEST_CASE("fully heterogeneous prediction perturbs profiles and stays valid") {
  CauseSet causes({"x", "y", "z"});
  std::vector<std::string> names = pooled_phi_names(causes);
  names.push_back("omega_sens");
  names.push_back("omega_rfp");
  PosteriorDraws d = synthetic_draws(
      Variant::kFullyHet, causes, names, 2000,
      [&](int, std::span<double> out) {
        for (int r = 0; r < 3; ++r) {
          out[r * 3 + r] = 0.7;
          int off = 0;
          for (int j = 0; j < 3; ++j) {
            if (j != r) out[r * 3 + j] = 0.3 * (off++ == 0 ? 0.4 : 0.6);
          }
        }
        out[9] = 10.0;
        out[10] = 8.0;
      });
  PredictiveDraws pred = predict_new_country(d, 314);

  double mean_q = 0.0, mean_sq = 0.0;
  for (int i = 0; i < pred.n_draws; ++i) {
    std::span<const double> m = pred.matrix(i);
    double s = m[0];
    double q = m[1] / (1.0 - s);
    mean_q += q;
    mean_sq += q * q;
  }
  mean_q /= pred.n_draws;
  mean_sq = mean_sq / pred.n_draws - mean_q * mean_q;
  // Dirichlet(0.5 + 2*8*q) keeps the profile mean near its center but must
  // scatter it across draws, unlike the copied profiles above.
  CHECK(mean_q == doctest::Approx((0.5 + 16.0 * 0.4) / (1.0 + 16.0))
                      .epsilon(0.05));
  CHECK(mean_sq > 1e-4);

  for (int i = 0; i < pred.n_draws; i += 131) pred.matrix_at(i);
}

TEST_CASE("large effect sizes collapse the predictive onto the pooled rates") {
  CauseSet causes({"x", "y", "z"});
  std::vector<std::string> names = pooled_phi_names(causes);
  names.push_back("omega_sens");
  PosteriorDraws d = synthetic_draws(
      Variant::kPartlyHet, causes, names, 1500,
      [&](int, std::span<double> out) {
        for (int r = 0; r < 3; ++r) {
          out[r * 3 + r] = 0.7;
          int off = 0;
          for (int j = 0; j < 3; ++j) {
            if (j != r) out[r * 3 + j] = 0.3 * (off++ == 0 ? 0.4 : 0.6);
          }
        }
        out[9] = 1e6;
      });
  PredictiveDraws pred = predict_new_country(d, 11);
  double lo = 1.0, hi = 0.0, acc = 0.0;
  for (int i = 0; i < pred.n_draws; ++i) {
    double s = pred.matrix(i)[0];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    acc += s;
  }
  CHECK(acc / pred.n_draws == doctest::Approx(0.7).epsilon(0.002));
  CHECK(hi - lo < 0.01);
}

TEST_CASE("heterogeneous predictive intervals dominate homogeneous ones") {
  CauseSet causes({"x", "y", "z"});
  std::vector<std::string> hom_names = pooled_phi_names(causes);
  auto fill = [](int, std::span<double> out) {
    for (int r = 0; r < 3; ++r) {
      out[r * 3 + r] = 0.7;
      int off = 0;
      for (int j = 0; j < 3; ++j) {
        if (j != r) out[r * 3 + j] = 0.3 * (off++ == 0 ? 0.4 : 0.6);
      }
    }
    if (out.size() > 9) out[9] = 10.0;
    if (out.size() > 10) out[10] = 8.0;
  };
  PosteriorDraws hom =
      synthetic_draws(Variant::kHomogeneous, causes, hom_names, 2000, fill);
  std::vector<std::string> het_names = hom_names;
  het_names.push_back("omega_sens");
  het_names.push_back("omega_rfp");
  PosteriorDraws het =
      synthetic_draws(Variant::kFullyHet, causes, het_names, 2000, fill);

  PredictiveDraws ph = predict_new_country(hom, 5);
  PredictiveDraws pf = predict_new_country(het, 5);
  for (int cell : {0, 1, 4, 8}) {
    std::vector<double> a, b;
    for (int i = 0; i < 2000; ++i) {
      a.push_back(ph.matrix(i)[cell]);
      b.push_back(pf.matrix(i)[cell]);
    }
    double wa = quantile_type7(a, 0.975) - quantile_type7(a, 0.025);
    double wb = quantile_type7(b, 0.975) - quantile_type7(b, 0.025);
    CHECK(wb >= wa - 1e-12);
  }
}
