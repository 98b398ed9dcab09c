#ifndef MISCAL_KERNELS_HPP
#define MISCAL_KERNELS_HPP

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "miscal/autodiff.hpp"

// Transforms between unconstrained sampler coordinates and model parameters,
// plus the log densities the hierarchy is assembled from. Everything is
// templated on the scalar so one definition serves both the plain-double
// path and the reverse-mode gradient path. Probabilities are carried next
// to their logs, which keeps likelihood terms finite even when a transform
// saturates in double precision.

namespace miscal {

template <class S>
struct UnitVal {
  S p, log_p, log_1mp;
};

template <class S>
struct SimplexVal {
  std::vector<S> p, log_p;
};

template <class S>
struct PosVal {
  S w, log_w;
};

// Logistic with logs computed on the stable side of 0.
template <class S>
UnitVal<S> unit_logistic(const S& x) {
  using std::exp;
  using std::log1p;
  UnitVal<S> u;
  if (ad::value_of(x) > 0.0) {
    S e = exp(-x);
    S l = log1p(e);
    u.p = 1.0 / (1.0 + e);
    u.log_p = -l;
    u.log_1mp = -x - l;
  } else {
    S e = exp(x);
    S l = log1p(e);
    u.p = e / (1.0 + e);
    u.log_p = x - l;
    u.log_1mp = -l;
  }
  return u;
}

// (0, 1) parameter from one unconstrained coordinate; accumulates the
// log-Jacobian log p + log(1 - p).
template <class S>
UnitVal<S> unit_constrain(const S& x, S& log_jac) {
  UnitVal<S> u = unit_logistic(x);
  log_jac += u.log_p + u.log_1mp;
  return u;
}

inline double unit_unconstrain(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("unit_unconstrain: p must be interior");
  return std::log(p) - std::log1p(-p);
}

// Stick-breaking simplex from K - 1 coordinates, K >= 2. The per-stick
// offset centres the map so the origin lands on the uniform point. The
// 1-simplex is a point mass; callers skip it instead of materialising it.
template <class S>
void simplex_constrain(const S* x, int K, SimplexVal<S>& out, S& log_jac) {
  assert(K >= 2);
  out.p.resize(K);
  out.log_p.resize(K);
  UnitVal<S> z = unit_logistic(x[0] + -std::log(static_cast<double>(K - 1)));
  out.p[0] = z.p;
  out.log_p[0] = z.log_p;
  log_jac += z.log_p + z.log_1mp;
  S stick = 1.0 - z.p;
  S log_stick = z.log_1mp;
  for (int k = 1; k < K - 1; ++k) {
    z = unit_logistic(x[k] + -std::log(static_cast<double>(K - 1 - k)));
    out.p[k] = stick * z.p;
    out.log_p[k] = log_stick + z.log_p;
    log_jac += z.log_p + z.log_1mp + log_stick;
    stick *= 1.0 - z.p;
    log_stick += z.log_1mp;
  }
  out.p[K - 1] = stick;
  out.log_p[K - 1] = log_stick;
}

inline std::vector<double> simplex_unconstrain(std::span<const double> p) {
  const int K = static_cast<int>(p.size());
  if (K < 2) throw std::invalid_argument("simplex_unconstrain: K must be >= 2");
  std::vector<double> x(K - 1);
  double stick = 1.0;
  for (int k = 0; k < K - 1; ++k) {
    if (!(p[k] > 0.0 && p[k] < stick))
      throw std::domain_error("simplex_unconstrain: point must be interior");
    x[k] = unit_unconstrain(p[k] / stick) +
           std::log(static_cast<double>(K - 1 - k));
    stick -= p[k];
  }
  return x;
}

// Positive parameter with a smooth cap: w = cap * logistic(x). Below the
// cap the map is exponential in x, so sampling happens on the log scale.
template <class S>
PosVal<S> capped_positive_constrain(const S& x, double cap, S& log_jac) {
  UnitVal<S> u = unit_logistic(x);
  PosVal<S> out{cap * u.p, std::log(cap) + u.log_p};
  log_jac += std::log(cap) + u.log_p + u.log_1mp;
  return out;
}

inline double capped_positive_unconstrain(double w, double cap) {
  if (!(w > 0.0 && w < cap))
    throw std::domain_error("capped_positive_unconstrain: w must be in (0, cap)");
  return unit_unconstrain(w / cap);
}

inline double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Beta log density with constant shapes; the normaliser stays off the tape.
template <class S>
S beta_lpdf(const UnitVal<S>& u, double a, double b) {
  return (a - 1.0) * u.log_p + (b - 1.0) * u.log_1mp - lbeta(a, b);
}

// Beta log density with shapes that are themselves expressions.
template <class S>
S beta_lpdf_param(const UnitVal<S>& u, const S& a, const S& b) {
  using std::lgamma;
  return (a - 1.0) * u.log_p + (b - 1.0) * u.log_1mp + lgamma(a + b) -
         lgamma(a) - lgamma(b);
}

inline double beta_lpdf(double p, double a, double b) {
  UnitVal<double> u{p, std::log(p), std::log1p(-p)};
  return beta_lpdf(u, a, b);
}

template <class S>
S dirichlet_lpdf(const SimplexVal<S>& p, std::span<const double> conc) {
  const int K = static_cast<int>(conc.size());
  double total = 0.0, norm = 0.0;
  for (double c : conc) {
    total += c;
    norm -= std::lgamma(c);
  }
  norm += std::lgamma(total);
  S acc = norm + (conc[0] - 1.0) * p.log_p[0];
  for (int k = 1; k < K; ++k) acc += (conc[k] - 1.0) * p.log_p[k];
  return acc;
}

template <class S>
S dirichlet_lpdf_param(const SimplexVal<S>& p, const S* conc, int K) {
  using std::lgamma;
  S total = conc[0];
  for (int k = 1; k < K; ++k) total += conc[k];
  S acc = lgamma(total);
  for (int k = 0; k < K; ++k)
    acc += (conc[k] - 1.0) * p.log_p[k] - lgamma(conc[k]);
  return acc;
}

inline double dirichlet_lpdf(std::span<const double> p,
                             std::span<const double> conc) {
  if (p.size() != conc.size() || p.empty())
    throw std::invalid_argument("dirichlet_lpdf: size mismatch");
  SimplexVal<double> sv;
  sv.p.assign(p.begin(), p.end());
  sv.log_p.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) sv.log_p[k] = std::log(p[k]);
  return dirichlet_lpdf(sv, conc);
}

inline double multinomial_log_coef(std::span<const std::int64_t> t) {
  std::int64_t n = 0;
  double denom = 0.0;
  for (std::int64_t c : t) {
    if (c < 0) throw std::invalid_argument("multinomial_log_coef: negative count");
    n += c;
    denom += std::lgamma(static_cast<double>(c) + 1.0);
  }
  return std::lgamma(static_cast<double>(n) + 1.0) - denom;
}

// Adds the data-dependent part sum_k t_k log p_k into acc; the caller adds
// the combinatorial coefficient, which is constant in the parameters.
template <class S>
void multinomial_kernel(std::span<const std::int64_t> t, const S* log_p,
                        S& acc) {
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] > 0) acc += static_cast<double>(t[k]) * log_p[k];
}

inline double multinomial_lpmf(std::span<const std::int64_t> t,
                               std::span<const double> probs) {
  if (t.size() != probs.size() || t.empty())
    throw std::invalid_argument("multinomial_lpmf: size mismatch");
  double acc = multinomial_log_coef(t);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] == 0) continue;
    if (!(probs[k] > 0.0))
      return -std::numeric_limits<double>::infinity();
    acc += static_cast<double>(t[k]) * std::log(probs[k]);
  }
  return acc;
}

// Prior on a positive spread parameter w: the shrinkage weight 1 / (1 + w)
// gets a Beta(eps, eps) density, expressed directly in w. Small eps keeps
// mass at both "ignore the pooled level" and "collapse onto it".
template <class S>
S effect_size_prior_lpdf(const PosVal<S>& w, double eps) {
  using std::log1p;
  return (eps - 1.0) * w.log_w - (2.0 * eps) * log1p(w.w) - lbeta(eps, eps);
}

inline double effect_size_prior_lpdf(double w, double eps) {
  if (!(w > 0.0)) return -std::numeric_limits<double>::infinity();
  PosVal<double> pv{w, std::log(w)};
  return effect_size_prior_lpdf(pv, eps);
}

}  // namespace miscal

#endif
