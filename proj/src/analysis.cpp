#include "miscal/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "miscal/rng.hpp"

namespace miscal {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (static_cast<double>(v.size()) - 1.0);
}

// Generalized Pareto fit to exceedances by the profile-posterior point
// estimate over a grid of scale candidates, shape lightly regularized
// toward 1/2.
struct GpdFit {
  double k = kNan, sigma = kNan;
  bool ok = false;
};

GpdFit fit_gpd(const std::vector<double>& y) {  // sorted ascending, y > 0
  GpdFit fit;
  const int n = static_cast<int>(y.size());
  if (n < 5 || !(y.back() > 0.0)) return fit;
  double quart = y[static_cast<int>(std::floor(n / 4.0 + 0.5)) - 1];
  if (!(quart > 0.0)) quart = y.back();

  const int m = 30 + static_cast<int>(std::floor(std::sqrt(n)));
  std::vector<double> theta(m), prof(m);
  for (int j = 0; j < m; ++j) {
    theta[j] = 1.0 / y.back() +
               (1.0 - std::sqrt(m / (j + 0.5))) / (3.0 * quart);
    double kj = 0.0;
    for (double v : y) kj += std::log1p(-theta[j] * v);
    kj /= n;
    prof[j] = kj == 0.0 ? -std::numeric_limits<double>::infinity()
                        : n * (std::log(-theta[j] / kj) - kj - 1.0);
  }
  double lse = log_sum_exp(prof);
  if (!std::isfinite(lse)) return fit;
  double theta_hat = 0.0;
  for (int j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(prof[j] - lse);

  double k = 0.0;
  for (double v : y) k += std::log1p(-theta_hat * v);
  k /= n;
  fit.sigma = -k / theta_hat;
  fit.k = (n * k + 5.0) / (n + 10.0);
  fit.ok = std::isfinite(fit.k) && std::isfinite(fit.sigma) && fit.sigma > 0;
  return fit;
}

double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma / k * (std::pow(1.0 - p, -k) - 1.0);
}

// Pareto-smoothed importance weights for one row, given shifted log
// ratios (max 0).  Returns the fitted shape, NaN when no fit was possible.
double smooth_weights(std::vector<double>& lw) {
  const int s = static_cast<int>(lw.size());
  const int m = std::max(5, s / 5);
  if (s < 10 || m >= s) return kNan;

  std::vector<int> idx(s);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return lw[a] < lw[b]; });

  double cutoff = std::exp(lw[idx[s - m - 1]]);
  std::vector<double> exceed(m);
  for (int j = 0; j < m; ++j) {
    exceed[j] = std::exp(lw[idx[s - m + j]]) - cutoff;
  }
  if (!(exceed.back() > 0.0)) return kNan;

  GpdFit fit = fit_gpd(exceed);
  if (!fit.ok) return kNan;
  for (int j = 0; j < m; ++j) {
    double q = (j + 0.5) / m;
    double w = cutoff + gpd_quantile(q, fit.k, fit.sigma);
    lw[idx[s - m + j]] = std::min(std::log(w), 0.0);
  }
  return fit.k;
}

}  // namespace

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) {
    throw std::invalid_argument("quantile of an empty sample");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("quantile level must be in [0, 1]");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  double h = (static_cast<double>(n) - 1.0) * p;
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, n - 1);
  double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SummaryTable summarize(const PosteriorDraws& draws) {
  if (draws.total_draws() == 0) {
    throw std::invalid_argument("summarize requires nonempty draws");
  }
  SummaryTable table;
  table.reserve(draws.names.size());
  std::vector<double> x(draws.total_draws());
  for (int k = 0; k < draws.n_reported(); ++k) {
    for (int c = 0; c < draws.n_chains; ++c) {
      for (int d = 0; d < draws.n_draws; ++d) {
        x[static_cast<std::size_t>(c) * draws.n_draws + d] =
            draws.value(c, d, k);
      }
    }
    SummaryRow row;
    row.name = draws.names[k];
    row.mean = mean_of(x);
    row.sd = std::sqrt(sample_var(x));
    row.q2_5 = quantile_type7(x, 0.025);
    row.q25 = quantile_type7(x, 0.25);
    row.q50 = quantile_type7(x, 0.50);
    row.q75 = quantile_type7(x, 0.75);
    row.q97_5 = quantile_type7(x, 0.975);
    table.push_back(std::move(row));
  }
  return table;
}

ComparisonMetrics loo_ic(std::span<const double> loglik, int n_rows) {
  if (n_rows < 1 || loglik.empty() || loglik.size() % n_rows != 0) {
    throw std::invalid_argument("pointwise log-likelihood shape mismatch");
  }
  for (double v : loglik) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("non-finite pointwise log-likelihood");
    }
  }
  const int s = static_cast<int>(loglik.size()) / n_rows;

  ComparisonMetrics out;
  out.pareto_k.assign(n_rows, kNan);
  std::vector<double> ll(s), lw(s);
  std::vector<double> elpd_waic(n_rows), elpd_loo(n_rows);
  double lppd = 0.0, p_waic = 0.0;

  for (int r = 0; r < n_rows; ++r) {
    for (int d = 0; d < s; ++d) {
      ll[d] = loglik[static_cast<std::size_t>(d) * n_rows + r];
    }
    double lppd_r = log_sum_exp(ll) - std::log(static_cast<double>(s));
    double var_r = sample_var(ll);
    lppd += lppd_r;
    p_waic += var_r;
    elpd_waic[r] = lppd_r - var_r;

    double mx = *std::max_element(ll.begin(), ll.end());
    for (int d = 0; d < s; ++d) lw[d] = -(ll[d] - mx);
    double shift = *std::max_element(lw.begin(), lw.end());
    for (double& v : lw) v -= shift;
    out.pareto_k[r] = smooth_weights(lw);
    if (std::isfinite(out.pareto_k[r]) && out.pareto_k[r] > 0.7) {
      out.high_k_rows.push_back(r);
    }
    std::vector<double> num(s);
    for (int d = 0; d < s; ++d) num[d] = lw[d] + ll[d];
    elpd_loo[r] = log_sum_exp(num) - log_sum_exp(lw);
  }

  double elpd_w = 0.0, elpd_l = 0.0;
  for (int r = 0; r < n_rows; ++r) {
    elpd_w += elpd_waic[r];
    elpd_l += elpd_loo[r];
  }
  out.lppd = lppd;
  out.p_waic = p_waic;
  out.p_loo = lppd - elpd_l;
  out.waic = -2.0 * elpd_w;
  out.loo_ic = -2.0 * elpd_l;
  out.waic_se = 2.0 * std::sqrt(n_rows * sample_var(elpd_waic));
  out.loo_se = 2.0 * std::sqrt(n_rows * sample_var(elpd_loo));
  return out;
}

double waic(std::span<const double> loglik, int n_rows) {
  if (n_rows < 1 || loglik.empty() || loglik.size() % n_rows != 0) {
    throw std::invalid_argument("pointwise log-likelihood shape mismatch");
  }
  const int s = static_cast<int>(loglik.size()) / n_rows;
  std::vector<double> ll(s);
  double elpd = 0.0;
  for (int r = 0; r < n_rows; ++r) {
    for (int d = 0; d < s; ++d) {
      double v = loglik[static_cast<std::size_t>(d) * n_rows + r];
      if (!std::isfinite(v)) {
        throw std::invalid_argument("non-finite pointwise log-likelihood");
      }
      ll[d] = v;
    }
    elpd += log_sum_exp(ll) - std::log(static_cast<double>(s)) -
            sample_var(ll);
  }
  return -2.0 * elpd;
}

double interval_score(double lower, double upper, double truth,
                      double alpha) {
  if (lower > upper) {
    throw std::invalid_argument("interval_score: lower exceeds upper");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("interval_score: alpha must be in (0, 1)");
  }
  double score = upper - lower;
  if (truth < lower) score += 2.0 / alpha * (lower - truth);
  if (truth > upper) score += 2.0 / alpha * (truth - upper);
  return score;
}

ErrorTable bias_and_mse(const MisclassMatrix& estimate,
                        const MisclassMatrix& truth) {
  if (estimate.dim() != truth.dim()) {
    throw std::invalid_argument("bias_and_mse: dimension mismatch");
  }
  const int c = estimate.dim();
  ErrorTable t;
  t.n_causes = c;
  t.abs_bias.resize(static_cast<std::size_t>(c) * c);
  t.sq_err.resize(static_cast<std::size_t>(c) * c);
  double sum_abs = 0.0, sum_sq = 0.0;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      double d = estimate.at(i, j) - truth.at(i, j);
      t.abs_bias[static_cast<std::size_t>(i) * c + j] = std::abs(d);
      t.sq_err[static_cast<std::size_t>(i) * c + j] = d * d;
      sum_abs += std::abs(d);
      sum_sq += d * d;
    }
  }
  t.mean_abs_bias = sum_abs / (c * c);
  t.mean_sq_err = sum_sq / (c * c);
  return t;
}

MisclassMatrix PredictiveDraws::matrix_at(int d) const {
  const int c = causes.size();
  std::span<const double> cells = matrix(d);
  std::vector<std::vector<double>> rows(c, std::vector<double>(c));
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      rows[i][j] = cells[static_cast<std::size_t>(i) * c + j];
    }
  }
  return MisclassMatrix::from_rows(rows);
}

PredictiveDraws predict_new_country(const PosteriorDraws& draws,
                                    std::uint64_t seed) {
  if (draws.variant == Variant::kBase) {
    throw std::invalid_argument(
        "predict_new_country requires a variant with a pooled layer "
        "(homogeneous or heterogeneous), not base");
  }
  if (draws.total_draws() == 0) {
    throw std::invalid_argument("predict_new_country requires draws");
  }
  const int c = draws.causes.size();
  const std::string c0 = draws.causes.label(0);
  const int phi0 = draws.name_index("phi.pooled." + c0 + "." + c0);
  if (phi0 < 0) {
    throw std::invalid_argument("draws are missing pooled matrix columns");
  }
  const bool draw_sens = draws.variant != Variant::kHomogeneous;
  const bool draw_rfp = draws.variant == Variant::kFullyHet && c >= 3;
  const int k_sens = draws.name_index("omega_sens");
  const int k_rfp = draws.name_index("omega_rfp");
  if (draw_sens && k_sens < 0) {
    throw std::invalid_argument("draws are missing omega_sens");
  }
  if (draw_rfp && k_rfp < 0) {
    throw std::invalid_argument("draws are missing omega_rfp");
  }
  const double jeffreys = draws.hyper.jeffreys;

  PredictiveDraws out;
  out.causes = draws.causes;
  out.n_draws = draws.total_draws();
  out.phi.resize(static_cast<std::size_t>(out.n_draws) * c * c);

  Rng rng(seed, 0x70726564u);  // dedicated predictive stream
  std::vector<std::vector<double>> rows(c, std::vector<double>(c));
  std::vector<double> conc(c > 1 ? c - 1 : 0), qrow(c > 1 ? c - 1 : 0);

  std::size_t cell = 0;
  for (int ch = 0; ch < draws.n_chains; ++ch) {
    for (int d = 0; d < draws.n_draws; ++d) {
      for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
          rows[i][j] = draws.value(ch, d, phi0 + i * c + j);
        }
      }
      if (!draw_sens) {
        for (int i = 0; i < c; ++i) {
          for (int j = 0; j < c; ++j) out.phi[cell++] = rows[i][j];
        }
        continue;
      }
      MisclassMatrix pooled = MisclassMatrix::from_rows(rows);
      SensRelFP parts = decompose(pooled);
      double omega_s = draws.value(ch, d, k_sens);
      double omega_r = draw_rfp ? draws.value(ch, d, k_rfp) : 0.0;

      for (int i = 0; i < c; ++i) {
        double conc_s = beta_concentration(omega_s);
        double sens = rng.beta(jeffreys + conc_s * parts.sensitivity[i],
                               jeffreys + conc_s * (1.0 - parts.sensitivity[i]));
        // Degenerate pooled rows carry no profile; fall back to uniform.
        bool flat = parts.degenerate[i] || parts.rel_fp[i].empty();
        for (int j = 0; j < c - 1; ++j) {
          qrow[j] = flat ? 1.0 / (c - 1.0) : parts.rel_fp[i][j];
        }
        if (draw_rfp) {
          double conc_r = dirichlet_concentration(omega_r, c);
          for (int j = 0; j < c - 1; ++j) {
            conc[j] = jeffreys + conc_r * qrow[j];
          }
          rng.dirichlet(conc, qrow);
        }
        int off = 0;
        for (int j = 0; j < c; ++j) {
          if (j == i) {
            out.phi[cell++] = sens;
          } else {
            out.phi[cell++] = c == 2 ? 1.0 - sens
                                     : (1.0 - sens) * qrow[off++];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace miscal
