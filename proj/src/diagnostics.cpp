#include "miscal/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "miscal/special.hpp"

namespace miscal {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Splits each chain in half; an odd middle draw is dropped.  Returns
// sequences flattened sequence-major.
struct SplitChains {
  int n_seq = 0, len = 0;
  std::vector<double> z;
};

SplitChains split(std::span<const double> draws, int n_chains) {
  SplitChains s;
  int n = static_cast<int>(draws.size()) / n_chains;
  s.len = n / 2;
  s.n_seq = 2 * n_chains;
  if (s.len == 0) return s;
  s.z.reserve(static_cast<std::size_t>(s.n_seq) * s.len);
  for (int c = 0; c < n_chains; ++c) {
    const double* chain = draws.data() + static_cast<std::size_t>(c) * n;
    s.z.insert(s.z.end(), chain, chain + s.len);
    s.z.insert(s.z.end(), chain + (n - s.len), chain + n);
  }
  return s;
}

// Average ranks (ties averaged) mapped through the normal quantile with the
// standard continuity offset.
void rank_normalize(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && v[idx[j]] == v[idx[i]]) ++j;
    double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    double u = (rank - 0.375) / (static_cast<double>(n) + 0.25);
    double zval = normal_quantile(u);
    for (std::size_t k = i; k < j; ++k) out[idx[k]] = zval;
    i = j;
  }
  v = std::move(out);
}

bool is_constant(std::span<const double> v) {
  for (double x : v) {
    if (x != v[0]) return false;
  }
  return true;
}

struct Moments {
  double w = 0.0;         // mean within-sequence sample variance
  double var_plus = 0.0;  // pooled variance estimate
  std::vector<double> means;
};

Moments sequence_moments(const SplitChains& s) {
  Moments m;
  m.means.resize(s.n_seq);
  double sum_var = 0.0;
  for (int q = 0; q < s.n_seq; ++q) {
    const double* seq = s.z.data() + static_cast<std::size_t>(q) * s.len;
    double mean = 0.0;
    for (int i = 0; i < s.len; ++i) mean += seq[i];
    mean /= s.len;
    m.means[q] = mean;
    double v = 0.0;
    for (int i = 0; i < s.len; ++i) v += (seq[i] - mean) * (seq[i] - mean);
    sum_var += s.len > 1 ? v / (s.len - 1) : 0.0;
  }
  m.w = sum_var / s.n_seq;
  double grand = 0.0;
  for (double x : m.means) grand += x;
  grand /= s.n_seq;
  double b = 0.0;
  for (double x : m.means) b += (x - grand) * (x - grand);
  b = s.n_seq > 1 ? b * s.len / (s.n_seq - 1) : 0.0;
  m.var_plus = (s.len - 1.0) / s.len * m.w + b / s.len;
  return m;
}

}  // namespace

double split_rhat(std::span<const double> draws, int n_chains) {
  if (n_chains < 1 || draws.empty()) return kNan;
  if (is_constant(draws)) return 1.0;
  SplitChains s = split(draws, n_chains);
  if (s.len < 2) return kNan;
  rank_normalize(s.z);
  Moments m = sequence_moments(s);
  if (m.w <= 0.0) {
    return m.var_plus > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  return std::sqrt(m.var_plus / m.w);
}

double ess_bulk(std::span<const double> draws, int n_chains) {
  if (n_chains < 1 || draws.empty()) return kNan;
  const double total = static_cast<double>(draws.size());
  if (is_constant(draws)) return total;
  SplitChains s = split(draws, n_chains);
  if (s.len < 4) return kNan;
  rank_normalize(s.z);
  Moments m = sequence_moments(s);
  if (m.var_plus <= 0.0) return total;

  // Mean over sequences of the lag-t autocovariance (1/n normalisation).
  auto mean_acov = [&](int t) {
    double acc = 0.0;
    for (int q = 0; q < s.n_seq; ++q) {
      const double* seq = s.z.data() + static_cast<std::size_t>(q) * s.len;
      double mean = m.means[q];
      double a = 0.0;
      for (int i = 0; i + t < s.len; ++i) {
        a += (seq[i] - mean) * (seq[i + t] - mean);
      }
      acc += a / s.len;
    }
    return acc / s.n_seq;
  };

  // Initial monotone positive sequence over lag pairs.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int k = 0; 2 * k + 1 < s.len; ++k) {
    double rho_even = 1.0 - (m.w - mean_acov(2 * k)) / m.var_plus;
    double rho_odd = 1.0 - (m.w - mean_acov(2 * k + 1)) / m.var_plus;
    double pair = rho_even + rho_odd;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(total + 10.0));
  double n_split = static_cast<double>(s.z.size());
  return std::min(n_split / tau, total);
}

Diagnostics diagnose(const PosteriorDraws& draws) {
  Diagnostics d;
  d.rhat_available = draws.n_chains >= 2;
  if (!d.rhat_available) {
    d.warnings.push_back(
        "single chain: split R-hat is not reported; run at least two chains "
        "to assess mixing");
  }
  const int n_par = draws.n_reported();
  const int total = draws.total_draws();
  d.params.reserve(n_par);
  double max_rhat = -std::numeric_limits<double>::infinity();
  double min_ess = std::numeric_limits<double>::infinity();

  std::vector<double> series(total);
  for (int k = 0; k < n_par; ++k) {
    for (int c = 0; c < draws.n_chains; ++c) {
      for (int i = 0; i < draws.n_draws; ++i) {
        series[static_cast<std::size_t>(c) * draws.n_draws + i] =
            draws.value(c, i, k);
      }
    }
    ScalarDiagnostic sd;
    sd.name = draws.names[k];
    sd.constant = is_constant(series);
    sd.rhat = d.rhat_available ? split_rhat(series, draws.n_chains) : kNan;
    sd.ess_bulk = ess_bulk(series, draws.n_chains);
    if (std::isfinite(sd.rhat)) max_rhat = std::max(max_rhat, sd.rhat);
    if (std::isinf(sd.rhat) && sd.rhat > 0) max_rhat = sd.rhat;
    if (std::isfinite(sd.ess_bulk)) min_ess = std::min(min_ess, sd.ess_bulk);
    d.params.push_back(std::move(sd));
  }

  d.max_rhat = d.rhat_available && max_rhat > 0 ? max_rhat : kNan;
  d.min_ess = std::isfinite(min_ess) ? min_ess : kNan;
  d.n_divergent = draws.n_divergent();
  d.divergence_rate = draws.divergence_rate();

  if (d.rhat_available && d.max_rhat > 1.01) {
    d.warnings.push_back("max split R-hat " + std::to_string(d.max_rhat) +
                         " exceeds 1.01: chains have not mixed");
  }
  if (d.divergence_rate > 0.01) {
    d.warnings.push_back(
        "divergent transitions exceed 1% of draws: results may be biased");
  }
  if (std::isfinite(d.min_ess) && d.min_ess < 100.0) {
    d.warnings.push_back(
        "min bulk ESS below 100: estimates are noisy, run longer chains");
  }
  return d;
}

}  // namespace miscal
