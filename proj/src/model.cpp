#include "miscal/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "miscal/autodiff.hpp"
#include "miscal/kernels.hpp"

namespace miscal {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kHomogeneous: return "homogeneous";
    case Variant::kPartlyHet: return "partly_het";
    case Variant::kFullyHet: return "fully_het";
  }
  return "unknown";
}

std::optional<Variant> variant_from_string(std::string_view s) {
  if (s == "base") return Variant::kBase;
  if (s == "homogeneous" || s == "hom") return Variant::kHomogeneous;
  if (s == "partly_het" || s == "partly-het" || s == "partly_heterogeneous")
    return Variant::kPartlyHet;
  if (s == "fully_het" || s == "fully-het" || s == "fully_heterogeneous")
    return Variant::kFullyHet;
  return std::nullopt;
}

namespace detail {

// One multinomial data row: counts for gold cause i within one country.
struct RowData {
  std::int64_t diag = 0, total = 0;
  std::vector<std::int64_t> off;  // j != i, ascending j
  double log_coef = 0.0;
};

struct ModelPrep {
  ModelSpec spec;
  int C = 0, S = 0;
  bool pooled_layer = false;   // homogeneous and up
  bool country_sens = false;   // partly heterogeneous and up
  bool country_rfp = false;    // fully heterogeneous
  bool has_rfp = false;        // profiles carry free coordinates (C >= 3)

  int off_a = 0, off_alpha = 0, off_sens = -1, off_rfp = -1,
      off_omega_pool = -1, off_sens_c = -1, off_omega_sens = -1,
      off_rfp_c = -1, off_omega_rfp = -1;
  int dim = 0;

  std::vector<double> pull_conc;
  std::vector<RowData> rows;         // s * C + i
  std::vector<RowData> pooled_rows;  // i
  double total_log_coef = 0.0;
  std::vector<std::pair<int, int>> loglik_rows;
  std::vector<std::string> names;
};

}  // namespace detail

namespace {

using detail::ModelPrep;
using detail::RowData;

RowData make_row(const CountMatrix& t, int i) {
  RowData r;
  const int C = t.dim();
  r.diag = t.at(i, i);
  r.total = t.row_total(i);
  r.off.reserve(C - 1);
  std::vector<std::int64_t> full(C);
  for (int j = 0; j < C; ++j) {
    full[j] = t.at(i, j);
    if (j != i) r.off.push_back(t.at(i, j));
  }
  r.log_coef = multinomial_log_coef(full);
  return r;
}

template <class T>
struct Work {
  std::vector<UnitVal<T>> a, sens, sens_c;
  SimplexVal<T> alpha;
  std::vector<SimplexVal<T>> rfp, rfp_c;
  PosVal<T> omega_pool, omega_sens, omega_rfp;
  std::vector<T> conc, diag;
};

// Unconstrained coordinates -> parameter values, accumulating the transform
// log-Jacobian into lp.
template <class T>
void transform_params(const ModelPrep& d, const T* u, Work<T>& w, T& lp) {
  const int C = d.C, S = d.S;
  const double cap = d.spec.hyper.omega_cap;
  w.a.resize(C);
  for (int i = 0; i < C; ++i) w.a[i] = unit_constrain(u[d.off_a + i], lp);
  simplex_constrain(u + d.off_alpha, C, w.alpha, lp);
  w.diag.resize(C);
  for (int i = 0; i < C; ++i)
    w.diag[i] = w.a[i].p + (1.0 - w.a[i].p) * w.alpha.p[i];
  if (d.pooled_layer) {
    w.sens.resize(C);
    for (int i = 0; i < C; ++i)
      w.sens[i] = unit_constrain(u[d.off_sens + i], lp);
    if (d.has_rfp) {
      w.rfp.resize(C);
      for (int i = 0; i < C; ++i)
        simplex_constrain(u + d.off_rfp + i * (C - 2), C - 1, w.rfp[i], lp);
    }
    w.omega_pool = capped_positive_constrain(u[d.off_omega_pool], cap, lp);
  }
  if (d.country_sens) {
    w.sens_c.resize(S * C);
    for (int k = 0; k < S * C; ++k)
      w.sens_c[k] = unit_constrain(u[d.off_sens_c + k], lp);
    w.omega_sens = capped_positive_constrain(u[d.off_omega_sens], cap, lp);
  }
  if (d.country_rfp) {
    if (d.has_rfp) {
      w.rfp_c.resize(S * C);
      for (int k = 0; k < S * C; ++k)
        simplex_constrain(u + d.off_rfp_c + k * (C - 2), C - 1, w.rfp_c[k], lp);
    }
    w.omega_rfp = capped_positive_constrain(u[d.off_omega_rfp], cap, lp);
  }
}

template <class T>
void add_priors(const ModelPrep& d, Work<T>& w, T& lp) {
  using std::lgamma;
  const auto& h = d.spec.hyper;
  const int C = d.C, S = d.S;
  for (int i = 0; i < C; ++i)
    lp += beta_lpdf(w.a[i], h.acc_shape1, h.acc_shape2);
  lp += dirichlet_lpdf(w.alpha, d.pull_conc);

  if (d.pooled_layer) {
    lp += effect_size_prior_lpdf(w.omega_pool, h.shrink_eps);
    T kappa = 2.0 * w.omega_pool.w;
    // Shape totals are shared across gold causes, so their lgamma is hoisted.
    T lg_beta_tot = lgamma(2.0 * h.jeffreys + kappa);
    for (int i = 0; i < C; ++i) {
      T sh1 = h.jeffreys + kappa * w.diag[i];
      T sh2 = h.jeffreys + kappa * ((1.0 - w.a[i].p) * (1.0 - w.alpha.p[i]));
      lp += (sh1 - 1.0) * w.sens[i].log_p + (sh2 - 1.0) * w.sens[i].log_1mp +
            lg_beta_tot - lgamma(sh1) - lgamma(sh2);
    }
    if (d.has_rfp) {
      T lambda = static_cast<double>(C - 1) * w.omega_pool.w;
      T lg_dir_tot = lgamma(static_cast<double>(C - 1) * h.jeffreys + lambda);
      w.conc.resize(C - 1);
      for (int i = 0; i < C; ++i) {
        // Summing the other components keeps the renormalizer exact when
        // alpha_i saturates; 1 - alpha_i would cancel to zero there.
        T denom = w.alpha.p[i == 0 ? 1 : 0];
        for (int j = 0; j < C; ++j) {
          if (j != i && j != (i == 0 ? 1 : 0)) denom = denom + w.alpha.p[j];
        }
        int jj = 0;
        for (int j = 0; j < C; ++j) {
          if (j == i) continue;
          w.conc[jj++] = h.jeffreys + lambda * (w.alpha.p[j] / denom);
        }
        T acc = lg_dir_tot;
        for (int k = 0; k < C - 1; ++k)
          acc += (w.conc[k] - 1.0) * w.rfp[i].log_p[k] - lgamma(w.conc[k]);
        lp += acc;
      }
    }
  }

  if (d.country_sens) {
    lp += effect_size_prior_lpdf(w.omega_sens, h.shrink_eps);
    T gamma = 2.0 * w.omega_sens.w;
    T lg_tot = lgamma(2.0 * h.jeffreys + gamma);
    for (int s = 0; s < S; ++s) {
      for (int i = 0; i < C; ++i) {
        T sh1 = h.jeffreys + gamma * w.sens[i].p;
        T sh2 = h.jeffreys + gamma * (1.0 - w.sens[i].p);
        const UnitVal<T>& v = w.sens_c[s * C + i];
        lp += (sh1 - 1.0) * v.log_p + (sh2 - 1.0) * v.log_1mp + lg_tot -
              lgamma(sh1) - lgamma(sh2);
      }
    }
  }

  if (d.country_rfp) {
    lp += effect_size_prior_lpdf(w.omega_rfp, h.shrink_eps);
    if (d.has_rfp) {
      T delta = static_cast<double>(C - 1) * w.omega_rfp.w;
      T lg_tot = lgamma(static_cast<double>(C - 1) * h.jeffreys + delta);
      w.conc.resize(C - 1);
      for (int s = 0; s < S; ++s) {
        for (int i = 0; i < C; ++i) {
          T acc = lg_tot;
          for (int k = 0; k < C - 1; ++k) {
            w.conc[k] = h.jeffreys + delta * w.rfp[i].p[k];
            acc += (w.conc[k] - 1.0) * w.rfp_c[s * C + i].log_p[k] -
                   lgamma(w.conc[k]);
          }
          lp += acc;
        }
      }
    }
  }
}

// Multinomial rows factor into a diagonal binomial piece and an off-diagonal
// profile piece, so each row needs only two transform logs plus the profile
// logs of its populated cells.
template <class T>
void add_likelihood(const ModelPrep& d, Work<T>& w, T& lp) {
  using std::log;
  const int C = d.C, S = d.S;
  switch (d.spec.variant) {
    case Variant::kBase:
      for (int i = 0; i < C; ++i) {
        const RowData& r = d.pooled_rows[i];
        if (r.total == 0) continue;
        if (r.diag > 0) lp += static_cast<double>(r.diag) * log(w.diag[i]);
        const std::int64_t offn = r.total - r.diag;
        if (offn > 0) lp += static_cast<double>(offn) * w.a[i].log_1mp;
        int jj = 0;
        for (int j = 0; j < C; ++j) {
          if (j == i) continue;
          if (r.off[jj] > 0)
            lp += static_cast<double>(r.off[jj]) * w.alpha.log_p[j];
          ++jj;
        }
      }
      break;
    case Variant::kHomogeneous:
      for (int i = 0; i < C; ++i) {
        const RowData& r = d.pooled_rows[i];
        if (r.total == 0) continue;
        if (r.diag > 0) lp += static_cast<double>(r.diag) * w.sens[i].log_p;
        const std::int64_t offn = r.total - r.diag;
        if (offn > 0) lp += static_cast<double>(offn) * w.sens[i].log_1mp;
        if (d.has_rfp)
          for (int k = 0; k < C - 1; ++k)
            if (r.off[k] > 0)
              lp += static_cast<double>(r.off[k]) * w.rfp[i].log_p[k];
      }
      break;
    case Variant::kPartlyHet:
    case Variant::kFullyHet:
      for (int s = 0; s < S; ++s) {
        for (int i = 0; i < C; ++i) {
          const RowData& r = d.rows[s * C + i];
          if (r.total == 0) continue;
          const UnitVal<T>& v = w.sens_c[s * C + i];
          if (r.diag > 0) lp += static_cast<double>(r.diag) * v.log_p;
          const std::int64_t offn = r.total - r.diag;
          if (offn > 0) lp += static_cast<double>(offn) * v.log_1mp;
          if (d.has_rfp) {
            const SimplexVal<T>& q = d.spec.variant == Variant::kFullyHet
                                         ? w.rfp_c[s * C + i]
                                         : w.rfp[i];
            for (int k = 0; k < C - 1; ++k)
              if (r.off[k] > 0)
                lp += static_cast<double>(r.off[k]) * q.log_p[k];
          }
        }
      }
      break;
  }
  lp += d.total_log_coef;
}

template <class T>
T eval_lp(const ModelPrep& d, const T* u, Work<T>& w, T lp) {
  transform_params(d, u, w, lp);
  add_priors(d, w, lp);
  add_likelihood(d, w, lp);
  return lp;
}

double clamp_unit(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

void clamp_simplex(std::vector<double>& p) {
  double total = 0.0;
  for (double& v : p) {
    v = std::max(v, 1e-12);
    total += v;
  }
  for (double& v : p) v /= total;
}

}  // namespace

Model::Model(ModelSpec spec) {
  auto d = std::make_shared<ModelPrep>();
  d->spec = std::move(spec);
  const ModelSpec& sp = d->spec;
  d->C = sp.causes.size();
  d->S = static_cast<int>(sp.countries.size());
  if (d->C < 2) throw std::invalid_argument("Model: need at least 2 causes");
  if (d->S < 1) throw std::invalid_argument("Model: need at least 1 country");
  if (sp.counts.size() != sp.countries.size())
    throw std::invalid_argument("Model: one count matrix per country required");
  std::set<std::string> seen;
  for (const auto& c : sp.countries) {
    if (c.empty()) throw std::invalid_argument("Model: empty country label");
    if (!seen.insert(c).second)
      throw std::invalid_argument("Model: duplicate country '" + c + "'");
  }
  for (const auto& t : sp.counts)
    if (t.dim() != d->C)
      throw std::invalid_argument("Model: count matrix dimension mismatch");
  const Hyperparams& h = sp.hyper;
  if (!(h.acc_shape1 > 0.0) || !(h.acc_shape2 > 0.0))
    throw std::invalid_argument("Model: accuracy prior shapes must be > 0");
  if (!h.pull_conc.empty() &&
      static_cast<int>(h.pull_conc.size()) != d->C)
    throw std::invalid_argument("Model: pull_conc size must match causes");
  for (double e : h.pull_conc)
    if (!(e > 0.0))
      throw std::invalid_argument("Model: pull_conc entries must be > 0");
  if (!(h.shrink_eps > 0.0))
    throw std::invalid_argument("Model: shrink_eps must be > 0");
  if (!(h.jeffreys > 0.0))
    throw std::invalid_argument("Model: jeffreys offset must be > 0");
  if (!(h.omega_cap > 1.0))
    throw std::invalid_argument("Model: omega_cap must be > 1");

  d->pooled_layer = sp.variant != Variant::kBase;
  d->country_sens = sp.variant == Variant::kPartlyHet ||
                    sp.variant == Variant::kFullyHet;
  d->country_rfp = sp.variant == Variant::kFullyHet;
  d->has_rfp = d->pooled_layer && d->C >= 3;

  const int C = d->C, S = d->S;
  d->pull_conc = h.pull_conc.empty() ? std::vector<double>(C, 1.0) : h.pull_conc;

  d->off_a = 0;
  d->off_alpha = C;
  int p = 2 * C - 1;
  if (d->pooled_layer) {
    d->off_sens = p;
    p += C;
    if (d->has_rfp) {
      d->off_rfp = p;
      p += C * (C - 2);
    }
    d->off_omega_pool = p++;
  }
  if (d->country_sens) {
    d->off_sens_c = p;
    p += S * C;
    d->off_omega_sens = p++;
  }
  if (d->country_rfp) {
    if (d->has_rfp) {
      d->off_rfp_c = p;
      p += S * C * (C - 2);
    }
    d->off_omega_rfp = p++;
  }
  d->dim = p;

  d->rows.reserve(S * C);
  d->loglik_rows.reserve(S * C);
  for (int s = 0; s < S; ++s) {
    for (int i = 0; i < C; ++i) {
      d->rows.push_back(make_row(sp.counts[s], i));
      d->total_log_coef += d->rows.back().log_coef;
      d->loglik_rows.emplace_back(s, i);
    }
  }
  CountMatrix pooled = pool(sp.counts);
  for (int i = 0; i < C; ++i) d->pooled_rows.push_back(make_row(pooled, i));

  auto cause = [&](int i) { return sp.causes.label(i); };
  for (int i = 0; i < C; ++i) d->names.push_back("accuracy." + cause(i));
  for (int i = 0; i < C; ++i) d->names.push_back("pull." + cause(i));
  if (d->pooled_layer) {
    for (int i = 0; i < C; ++i) d->names.push_back("sens." + cause(i));
    if (d->has_rfp)
      for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
          if (j != i) d->names.push_back("rfp." + cause(i) + "." + cause(j));
    d->names.push_back("omega_pool");
  }
  if (d->country_sens) {
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i)
        d->names.push_back("sens." + sp.countries[s] + "." + cause(i));
    d->names.push_back("omega_sens");
  }
  if (d->country_rfp) {
    if (d->has_rfp)
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < C; ++i)
          for (int j = 0; j < C; ++j)
            if (j != i)
              d->names.push_back("rfp." + sp.countries[s] + "." + cause(i) +
                                 "." + cause(j));
    d->names.push_back("omega_rfp");
  }
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      d->names.push_back("phi.pooled." + cause(i) + "." + cause(j));
  if (d->country_sens)
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
          d->names.push_back("phi." + sp.countries[s] + "." + cause(i) + "." +
                             cause(j));

  prep_ = std::move(d);
}

const ModelSpec& Model::spec() const { return prep_->spec; }
int Model::n_causes() const { return prep_->C; }
int Model::n_countries() const { return prep_->S; }
int Model::dim() const { return prep_->dim; }
const std::vector<std::string>& Model::reported_names() const {
  return prep_->names;
}
int Model::n_reported() const { return static_cast<int>(prep_->names.size()); }
int Model::n_loglik_rows() const { return prep_->C * prep_->S; }
const std::vector<std::pair<int, int>>& Model::loglik_rows() const {
  return prep_->loglik_rows;
}

double Model::log_posterior(std::span<const double> u,
                            std::span<double> grad) const {
  const ModelPrep& d = *prep_;
  if (static_cast<int>(u.size()) != d.dim ||
      static_cast<int>(grad.size()) != d.dim)
    throw std::invalid_argument("log_posterior: size mismatch");
  thread_local ad::Tape tape;
  thread_local Work<ad::Var> w;
  thread_local std::vector<ad::Var> inputs;
  thread_local std::vector<double> adj;
  tape.reset();
  inputs.resize(d.dim);
  bool finite_input = true;
  for (int k = 0; k < d.dim; ++k) {
    if (!std::isfinite(u[k])) finite_input = false;
    inputs[k] = ad::var(tape, u[k]);
  }
  if (!finite_input) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return -std::numeric_limits<double>::infinity();
  }
  ad::Var lp = eval_lp(d, inputs.data(), w, ad::var(tape, 0.0));
  if (!std::isfinite(lp.v)) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return -std::numeric_limits<double>::infinity();
  }
  tape.backward(lp.i, adj);
  for (int k = 0; k < d.dim; ++k) grad[k] = adj[k];
  return lp.v;
}

double Model::log_posterior_value(std::span<const double> u) const {
  const ModelPrep& d = *prep_;
  if (static_cast<int>(u.size()) != d.dim)
    throw std::invalid_argument("log_posterior_value: size mismatch");
  for (double v : u)
    if (!std::isfinite(v)) return -std::numeric_limits<double>::infinity();
  thread_local Work<double> w;
  double lp = eval_lp(d, u.data(), w, 0.0);
  return std::isfinite(lp) ? lp : -std::numeric_limits<double>::infinity();
}

ParamBlock Model::constrain(std::span<const double> u) const {
  const ModelPrep& d = *prep_;
  if (static_cast<int>(u.size()) != d.dim)
    throw std::invalid_argument("constrain: size mismatch");
  thread_local Work<double> w;
  double lj = 0.0;
  transform_params(d, u.data(), w, lj);
  const int C = d.C, S = d.S;
  ParamBlock b;
  b.accuracy.resize(C);
  b.pull.resize(C);
  for (int i = 0; i < C; ++i) {
    b.accuracy[i] = w.a[i].p;
    b.pull[i] = w.alpha.p[i];
  }
  if (d.pooled_layer) {
    b.sens.resize(C);
    for (int i = 0; i < C; ++i) b.sens[i] = w.sens[i].p;
    b.rfp.assign(C, std::vector<double>(C - 1, 1.0));
    if (d.has_rfp)
      for (int i = 0; i < C; ++i)
        for (int k = 0; k < C - 1; ++k) b.rfp[i][k] = w.rfp[i].p[k];
    b.omega_pool = w.omega_pool.w;
  }
  if (d.country_sens) {
    b.sens_c.assign(S, std::vector<double>(C));
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i) b.sens_c[s][i] = w.sens_c[s * C + i].p;
    b.omega_sens = w.omega_sens.w;
  }
  if (d.country_rfp) {
    b.rfp_c.assign(
        S, std::vector<std::vector<double>>(C, std::vector<double>(C - 1, 1.0)));
    if (d.has_rfp)
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < C; ++i)
          for (int k = 0; k < C - 1; ++k)
            b.rfp_c[s][i][k] = w.rfp_c[s * C + i].p[k];
    b.omega_rfp = w.omega_rfp.w;
  }
  return b;
}

std::vector<double> Model::unconstrain(const ParamBlock& b) const {
  const ModelPrep& d = *prep_;
  const int C = d.C, S = d.S;
  if (static_cast<int>(b.accuracy.size()) != C ||
      static_cast<int>(b.pull.size()) != C)
    throw std::invalid_argument("unconstrain: block size mismatch");
  std::vector<double> u(d.dim);
  for (int i = 0; i < C; ++i) u[d.off_a + i] = unit_unconstrain(b.accuracy[i]);
  std::vector<double> xs = simplex_unconstrain(b.pull);
  std::copy(xs.begin(), xs.end(), u.begin() + d.off_alpha);
  if (d.pooled_layer) {
    if (static_cast<int>(b.sens.size()) != C ||
        static_cast<int>(b.rfp.size()) != C)
      throw std::invalid_argument("unconstrain: pooled block size mismatch");
    for (int i = 0; i < C; ++i) u[d.off_sens + i] = unit_unconstrain(b.sens[i]);
    if (d.has_rfp)
      for (int i = 0; i < C; ++i) {
        xs = simplex_unconstrain(b.rfp[i]);
        std::copy(xs.begin(), xs.end(), u.begin() + d.off_rfp + i * (C - 2));
      }
    u[d.off_omega_pool] =
        capped_positive_unconstrain(b.omega_pool, d.spec.hyper.omega_cap);
  }
  if (d.country_sens) {
    if (static_cast<int>(b.sens_c.size()) != S)
      throw std::invalid_argument("unconstrain: country block size mismatch");
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i)
        u[d.off_sens_c + s * C + i] = unit_unconstrain(b.sens_c[s][i]);
    u[d.off_omega_sens] =
        capped_positive_unconstrain(b.omega_sens, d.spec.hyper.omega_cap);
  }
  if (d.country_rfp) {
    if (d.has_rfp) {
      if (static_cast<int>(b.rfp_c.size()) != S)
        throw std::invalid_argument("unconstrain: profile block size mismatch");
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < C; ++i) {
          xs = simplex_unconstrain(b.rfp_c[s][i]);
          std::copy(xs.begin(), xs.end(),
                    u.begin() + d.off_rfp_c + (s * C + i) * (C - 2));
        }
    }
    u[d.off_omega_rfp] =
        capped_positive_unconstrain(b.omega_rfp, d.spec.hyper.omega_cap);
  }
  return u;
}

void Model::reported(const ParamBlock& b, std::span<double> out) const {
  const ModelPrep& d = *prep_;
  if (out.size() != d.names.size())
    throw std::invalid_argument("reported: size mismatch");
  const int C = d.C, S = d.S;
  std::size_t k = 0;
  for (int i = 0; i < C; ++i) out[k++] = b.accuracy[i];
  for (int i = 0; i < C; ++i) out[k++] = b.pull[i];
  if (d.pooled_layer) {
    for (int i = 0; i < C; ++i) out[k++] = b.sens[i];
    if (d.has_rfp)
      for (int i = 0; i < C; ++i)
        for (int kk = 0; kk < C - 1; ++kk) out[k++] = b.rfp[i][kk];
    out[k++] = b.omega_pool;
  }
  if (d.country_sens) {
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i) out[k++] = b.sens_c[s][i];
    out[k++] = b.omega_sens;
  }
  if (d.country_rfp) {
    if (d.has_rfp)
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < C; ++i)
          for (int kk = 0; kk < C - 1; ++kk) out[k++] = b.rfp_c[s][i][kk];
    out[k++] = b.omega_rfp;
  }
  MisclassMatrix pooled = pooled_matrix(b);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j) out[k++] = pooled.at(i, j);
  if (d.country_sens)
    for (int s = 0; s < S; ++s) {
      MisclassMatrix m = country_matrix(b, s);
      for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j) out[k++] = m.at(i, j);
    }
}

void Model::pointwise_loglik(std::span<const double> u,
                             std::span<double> out) const {
  const ModelPrep& d = *prep_;
  if (static_cast<int>(u.size()) != d.dim ||
      static_cast<int>(out.size()) != d.C * d.S)
    throw std::invalid_argument("pointwise_loglik: size mismatch");
  thread_local Work<double> w;
  double lj = 0.0;
  transform_params(d, u.data(), w, lj);
  const int C = d.C, S = d.S;
  for (int s = 0; s < S; ++s) {
    for (int i = 0; i < C; ++i) {
      const RowData& r = d.rows[s * C + i];
      double lp = r.log_coef;
      const std::int64_t offn = r.total - r.diag;
      switch (d.spec.variant) {
        case Variant::kBase: {
          if (r.diag > 0) lp += r.diag * std::log(w.diag[i]);
          if (offn > 0) lp += offn * w.a[i].log_1mp;
          int jj = 0;
          for (int j = 0; j < C; ++j) {
            if (j == i) continue;
            if (r.off[jj] > 0) lp += r.off[jj] * w.alpha.log_p[j];
            ++jj;
          }
          break;
        }
        case Variant::kHomogeneous: {
          if (r.diag > 0) lp += r.diag * w.sens[i].log_p;
          if (offn > 0) lp += offn * w.sens[i].log_1mp;
          if (d.has_rfp)
            for (int kk = 0; kk < C - 1; ++kk)
              if (r.off[kk] > 0) lp += r.off[kk] * w.rfp[i].log_p[kk];
          break;
        }
        case Variant::kPartlyHet:
        case Variant::kFullyHet: {
          const UnitVal<double>& v = w.sens_c[s * C + i];
          if (r.diag > 0) lp += r.diag * v.log_p;
          if (offn > 0) lp += offn * v.log_1mp;
          if (d.has_rfp) {
            const SimplexVal<double>& q =
                d.spec.variant == Variant::kFullyHet ? w.rfp_c[s * C + i]
                                                     : w.rfp[i];
            for (int kk = 0; kk < C - 1; ++kk)
              if (r.off[kk] > 0) lp += r.off[kk] * q.log_p[kk];
          }
          break;
        }
      }
      out[s * C + i] = lp;
    }
  }
}

MisclassMatrix Model::pooled_matrix(const ParamBlock& b) const {
  if (prep_->spec.variant == Variant::kBase) {
    BaseParams p;
    p.accuracy = b.accuracy;
    p.pull = b.pull;
    return build_base_matrix(p);
  }
  SensRelFP parts;
  parts.sensitivity = b.sens;
  parts.rel_fp = b.rfp;
  parts.degenerate.assign(b.sens.size(), false);
  return recompose(parts);
}

MisclassMatrix Model::country_matrix(const ParamBlock& b, int country) const {
  const ModelPrep& d = *prep_;
  if (country < 0 || country >= d.S)
    throw std::out_of_range("country_matrix: country index");
  if (!d.country_sens) return pooled_matrix(b);
  SensRelFP parts;
  parts.sensitivity = b.sens_c[country];
  parts.rel_fp = d.country_rfp ? b.rfp_c[country] : b.rfp;
  parts.degenerate.assign(parts.sensitivity.size(), false);
  return recompose(parts);
}

namespace {

double draw_omega(Rng& rng, double eps, double cap) {
  double t = std::clamp(rng.beta(eps, eps), 1e-12, 1.0 - 1e-12);
  return std::clamp(1.0 / t - 1.0, 1e-9, cap * (1.0 - 1e-9));
}

}  // namespace

ParamBlock Model::prior_sample(Rng& rng, const FixedEffects& fixed) const {
  const ModelPrep& d = *prep_;
  const Hyperparams& h = d.spec.hyper;
  const int C = d.C, S = d.S;
  ParamBlock b;
  b.accuracy.resize(C);
  b.pull.resize(C);
  for (int i = 0; i < C; ++i)
    b.accuracy[i] = clamp_unit(rng.beta(h.acc_shape1, h.acc_shape2));
  rng.dirichlet(d.pull_conc, b.pull);
  clamp_simplex(b.pull);
  if (!d.pooled_layer) return b;

  b.omega_pool = fixed.pooled ? *fixed.pooled
                              : draw_omega(rng, h.shrink_eps, h.omega_cap);
  const double kappa = beta_concentration(b.omega_pool);
  b.sens.resize(C);
  b.rfp.assign(C, std::vector<double>(C - 1, 1.0));
  for (int i = 0; i < C; ++i) {
    double m = b.accuracy[i] + (1.0 - b.accuracy[i]) * b.pull[i];
    b.sens[i] = clamp_unit(
        rng.beta(h.jeffreys + kappa * m, h.jeffreys + kappa * (1.0 - m)));
  }
  if (d.has_rfp) {
    const double lambda = dirichlet_concentration(b.omega_pool, C);
    std::vector<double> conc(C - 1);
    for (int i = 0; i < C; ++i) {
      int jj = 0;
      for (int j = 0; j < C; ++j) {
        if (j == i) continue;
        conc[jj++] = h.jeffreys + lambda * b.pull[j] / (1.0 - b.pull[i]);
      }
      rng.dirichlet(conc, b.rfp[i]);
      clamp_simplex(b.rfp[i]);
    }
  }
  if (!d.country_sens) return b;

  b.omega_sens = fixed.country_sens
                     ? *fixed.country_sens
                     : draw_omega(rng, h.shrink_eps, h.omega_cap);
  const double gamma = beta_concentration(b.omega_sens);
  b.sens_c.assign(S, std::vector<double>(C));
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < C; ++i)
      b.sens_c[s][i] =
          clamp_unit(rng.beta(h.jeffreys + gamma * b.sens[i],
                              h.jeffreys + gamma * (1.0 - b.sens[i])));
  if (!d.country_rfp) return b;

  b.omega_rfp = fixed.country_rfp
                    ? *fixed.country_rfp
                    : draw_omega(rng, h.shrink_eps, h.omega_cap);
  b.rfp_c.assign(
      S, std::vector<std::vector<double>>(C, std::vector<double>(C - 1, 1.0)));
  if (d.has_rfp) {
    const double delta = dirichlet_concentration(b.omega_rfp, C);
    std::vector<double> conc(C - 1);
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < C; ++i) {
        for (int k = 0; k < C - 1; ++k)
          conc[k] = h.jeffreys + delta * b.rfp[i][k];
        rng.dirichlet(conc, b.rfp_c[s][i]);
        clamp_simplex(b.rfp_c[s][i]);
      }
  }
  return b;
}

}  // namespace miscal
