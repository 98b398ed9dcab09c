#include "miscal/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <utility>

#ifdef MISCAL_HAVE_OPENMP
#include <omp.h>
#endif

namespace miscal {

namespace {

constexpr double kDivergenceGap = 1000.0;

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Nesterov dual averaging of log step size toward a target acceptance rate.
struct DualAverage {
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int m = 0;
  static constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;

  void init(double eps0) {
    mu = std::log(10.0 * eps0);
    log_eps = std::log(eps0);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    m = 0;
  }
  void update(double accept, double target) {
    ++m;
    h_bar += (target - accept - h_bar) / (m + kT0);
    log_eps = mu - std::sqrt(static_cast<double>(m)) / kGamma * h_bar;
    double w = std::pow(static_cast<double>(m), -kKappa);
    log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
  }
};

struct Welford {
  std::int64_t n = 0;
  std::vector<double> mean, m2;

  explicit Welford(int dim) : mean(dim, 0.0), m2(dim, 0.0) {}
  void reset() {
    n = 0;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
  }
  void add(std::span<const double> x) {
    ++n;
    for (std::size_t k = 0; k < mean.size(); ++k) {
      double d = x[k] - mean[k];
      mean[k] += d / n;
      m2[k] += d * (x[k] - mean[k]);
    }
  }
  // Sample variance shrunk toward a small floor, as a diagonal inverse
  // metric estimate.
  void regularized_variance(std::vector<double>& out) const {
    double shrink = static_cast<double>(n) / (n + 5.0);
    for (std::size_t k = 0; k < mean.size(); ++k) {
      double var = n > 1 ? m2[k] / (n - 1.0) : 0.0;
      out[k] = shrink * var + 1e-3 * (5.0 / (n + 5.0));
    }
  }
};

// Warmup layout: a step-size-only opening buffer, expanding metric windows
// that double in length (the last absorbs the remainder), and a closing
// step-size-only buffer.  Short warmups get proportional buffers.
struct WarmupFlags {
  std::vector<std::uint8_t> flags;  // 0 none, 1 collect, 2 collect + close

  explicit WarmupFlags(int warmup) : flags(warmup, 0) {
    if (warmup <= 0) return;
    const int init = 75, term = 50, base = 25;
    int init_end, term_start;
    std::vector<int> ends;
    if (warmup < init + term + base) {
      init_end = static_cast<int>(std::lround(0.15 * warmup));
      term_start = warmup - static_cast<int>(std::lround(0.10 * warmup));
      if (term_start > init_end) ends.push_back(term_start);
    } else {
      init_end = init;
      term_start = warmup - term;
      int pos = init_end, w = base;
      while (pos < term_start) {
        int end = pos + w;
        if (pos + 3 * w > term_start) end = term_start;
        ends.push_back(std::min(end, term_start));
        pos = ends.back();
        w *= 2;
      }
    }
    int pos = init_end;
    for (int end : ends) {
      for (int i = pos; i < end; ++i) flags[i] = 1;
      flags[end - 1] = 2;
      pos = end;
    }
  }
};

double hamiltonian(const Phase& z, std::span<const double> inv_metric) {
  return -z.lp + kinetic_energy(z.p, inv_metric);
}

void sample_momentum(Phase& z, std::span<const double> inv_metric, Rng& rng) {
  for (std::size_t k = 0; k < z.p.size(); ++k) {
    z.p[k] = rng.normal() / std::sqrt(inv_metric[k]);
  }
}

// Crude bracketing of a step size whose one-step acceptance straddles 1/2.
double find_reasonable_epsilon(const LogDensity& target,
                               std::span<const double> inv_metric,
                               const Phase& start, Rng& rng) {
  double eps = 1.0;
  Phase z = start;
  sample_momentum(z, inv_metric, rng);
  const Phase fresh = z;
  double h0 = hamiltonian(z, inv_metric);
  auto ratio_at = [&](double e) {
    z = fresh;
    leapfrog(target, inv_metric, e, z);
    double h1 = hamiltonian(z, inv_metric);
    return std::isfinite(h1) ? std::exp(h0 - h1) : 0.0;
  };
  double ratio = ratio_at(eps);
  double dir = ratio > 0.5 ? 1.0 : -1.0;
  for (int it = 0; it < 60; ++it) {
    if (dir > 0 ? ratio <= 0.5 : ratio >= 0.5) break;
    eps *= dir > 0 ? 2.0 : 0.5;
    if (eps > 1e7 || eps < 1e-10) break;
    ratio = ratio_at(eps);
  }
  return eps;
}

// One balanced subtree of 2^depth leapfrog states grown in one direction.
struct Subtree {
  Phase end;             // outermost state, in integration order
  Phase proposal;        // multinomial pick among the subtree's states
  std::vector<double> rho;          // momentum sum over states
  std::vector<double> p_sharp_beg;  // metric-scaled momentum, inner end
  std::vector<double> p_sharp_end;  // metric-scaled momentum, outer end
  double log_weight = 0.0;          // logsumexp of state weights vs h0
  bool ok = false;
  bool divergent = false;
};

struct TreeScratch {
  const LogDensity* target = nullptr;
  std::span<const double> inv_metric;
  double h0 = 0.0;
  Rng* rng = nullptr;
  double sum_accept = 0.0;
  std::int64_t n_states = 0;
  std::int64_t n_leapfrog = 0;
};

void scale_momentum(std::span<const double> p,
                    std::span<const double> inv_metric,
                    std::vector<double>& out) {
  out.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) out[k] = inv_metric[k] * p[k];
}

bool turned(std::span<const double> rho, std::span<const double> sharp_beg,
            std::span<const double> sharp_end) {
  double fwd = 0.0, bwd = 0.0;
  for (std::size_t k = 0; k < rho.size(); ++k) {
    fwd += rho[k] * sharp_end[k];
    bwd += rho[k] * sharp_beg[k];
  }
  return fwd <= 0.0 || bwd <= 0.0;
}

Subtree build_tree(TreeScratch& ts, const Phase& from, double dir_eps,
                   int depth) {
  Subtree t;
  if (depth == 0) {
    t.end = from;
    leapfrog(*ts.target, ts.inv_metric, dir_eps, t.end);
    ++ts.n_leapfrog;
    double h = hamiltonian(t.end, ts.inv_metric);
    double gap = h - ts.h0;
    bool finite = std::isfinite(h);
    t.divergent = !finite || gap > kDivergenceGap;
    t.ok = !t.divergent;
    t.log_weight = finite ? -gap : -std::numeric_limits<double>::infinity();
    ts.sum_accept += finite ? std::min(1.0, std::exp(-gap)) : 0.0;
    ++ts.n_states;
    if (t.ok) {
      t.rho = t.end.p;
      scale_momentum(t.end.p, ts.inv_metric, t.p_sharp_beg);
      t.p_sharp_end = t.p_sharp_beg;
      t.proposal = t.end;
    }
    return t;
  }

  Subtree first = build_tree(ts, from, dir_eps, depth - 1);
  if (!first.ok) return first;
  Subtree second = build_tree(ts, first.end, dir_eps, depth - 1);
  if (!second.ok) {
    first.ok = false;
    first.divergent = second.divergent;
    return first;
  }

  Subtree t2;
  t2.log_weight = log_sum_exp(first.log_weight, second.log_weight);
  double p_second = std::exp(second.log_weight - t2.log_weight);
  t2.proposal = ts.rng->uniform() < p_second ? std::move(second.proposal)
                                             : std::move(first.proposal);
  t2.end = std::move(second.end);
  t2.rho = std::move(first.rho);
  for (std::size_t k = 0; k < t2.rho.size(); ++k) t2.rho[k] += second.rho[k];
  t2.p_sharp_beg = std::move(first.p_sharp_beg);
  t2.p_sharp_end = std::move(second.p_sharp_end);
  t2.ok = !turned(t2.rho, t2.p_sharp_beg, t2.p_sharp_end);
  return t2;
}

struct TransitionResult {
  double accept_stat = 0.0;
  bool divergent = false;
  std::int64_t n_leapfrog = 0;
};

// One draw: grow the trajectory by doubling until a U-turn or divergence,
// selecting among states with probability proportional to their density,
// biased toward later subtrees.
TransitionResult transition(const LogDensity& target,
                            std::span<const double> inv_metric, double eps,
                            int max_depth, Rng& rng, Phase& z) {
  sample_momentum(z, inv_metric, rng);
  TreeScratch ts;
  ts.target = &target;
  ts.inv_metric = inv_metric;
  ts.h0 = hamiltonian(z, inv_metric);
  ts.rng = &rng;

  Phase z_minus = z, z_plus = z;
  std::vector<double> rho = z.p, sharp_minus, sharp_plus;
  scale_momentum(z.p, inv_metric, sharp_minus);
  sharp_plus = sharp_minus;
  Phase selected = z;
  double log_weight = 0.0;  // initial state, relative to h0
  TransitionResult res;

  for (int depth = 0; depth < max_depth; ++depth) {
    bool forward = rng.coin();
    const Phase& edge = forward ? z_plus : z_minus;
    Subtree sub = build_tree(ts, edge, forward ? eps : -eps, depth);
    if (!sub.ok) {
      res.divergent = res.divergent || sub.divergent;
      break;
    }
    double p_take = std::exp(std::min(0.0, sub.log_weight - log_weight));
    if (rng.uniform() < p_take) selected = sub.proposal;
    log_weight = log_sum_exp(log_weight, sub.log_weight);
    for (std::size_t k = 0; k < rho.size(); ++k) rho[k] += sub.rho[k];
    if (forward) {
      z_plus = std::move(sub.end);
      sharp_plus = std::move(sub.p_sharp_end);
    } else {
      z_minus = std::move(sub.end);
      sharp_minus = std::move(sub.p_sharp_end);
    }
    if (turned(rho, sharp_minus, sharp_plus)) break;
  }

  z = std::move(selected);
  res.accept_stat = ts.n_states > 0 ? ts.sum_accept / ts.n_states : 0.0;
  res.n_leapfrog = ts.n_leapfrog;
  return res;
}

struct ChainOutput {
  std::vector<double> draws;
  std::vector<std::uint8_t> divergent;
  ChainStats stats;
};

ChainOutput run_chain(const LogDensity& target, const NutsConfig& cfg,
                      int chain) {
  const int dim = target.dim();
  Rng rng(cfg.seed, static_cast<std::uint64_t>(chain));

  Phase z;
  z.q = initialize_chain(target, rng, cfg.init_radius, cfg.max_init_tries);
  z.p.assign(dim, 0.0);
  z.grad.assign(dim, 0.0);
  z.lp = target.value_and_grad(z.q, z.grad);

  std::vector<double> inv_metric(dim, 1.0);
  DualAverage da;
  da.init(find_reasonable_epsilon(target, inv_metric, z, rng));

  WarmupFlags plan(cfg.n_warmup);
  Welford acc(dim);

  ChainOutput out;
  out.draws.resize(static_cast<std::size_t>(cfg.n_draws) * dim);
  out.divergent.assign(cfg.n_draws, 0);
  out.stats.n_divergent = 0;
  out.stats.n_leapfrog = 0;

  double eps_final = std::exp(da.log_eps);
  double accept_sum = 0.0;

  for (int iter = 0; iter < cfg.n_warmup + cfg.n_draws; ++iter) {
    bool warm = iter < cfg.n_warmup;
    double eps = warm ? std::exp(da.log_eps) : eps_final;
    TransitionResult res =
        transition(target, inv_metric, eps, cfg.max_depth, rng, z);
    out.stats.n_leapfrog += res.n_leapfrog;
    if (warm) {
      da.update(res.accept_stat, cfg.target_accept);
      if (plan.flags[iter] != 0) acc.add(z.q);
      if (plan.flags[iter] == 2) {
        acc.regularized_variance(inv_metric);
        acc.reset();
        da.init(find_reasonable_epsilon(target, inv_metric, z, rng));
      }
      if (iter + 1 == cfg.n_warmup) eps_final = std::exp(da.log_eps_bar);
    } else {
      int d = iter - cfg.n_warmup;
      std::copy(z.q.begin(), z.q.end(),
                out.draws.begin() + static_cast<std::size_t>(d) * dim);
      out.divergent[d] = res.divergent ? 1 : 0;
      out.stats.n_divergent += res.divergent ? 1 : 0;
      accept_sum += res.accept_stat;
    }
  }
  out.stats.step_size = eps_final;
  out.stats.inv_metric = inv_metric;
  out.stats.mean_accept = cfg.n_draws > 0 ? accept_sum / cfg.n_draws : 0.0;
  return out;
}

void validate_config(const NutsConfig& cfg) {
  if (cfg.n_chains < 1) throw std::invalid_argument("n_chains must be >= 1");
  if (cfg.n_draws < 1) throw std::invalid_argument("n_draws must be >= 1");
  if (cfg.n_warmup < 0) throw std::invalid_argument("n_warmup must be >= 0");
  if (cfg.max_depth < 1 || cfg.max_depth > 20) {
    throw std::invalid_argument("max_depth must be in [1, 20]");
  }
  if (!(cfg.target_accept > 0.0 && cfg.target_accept < 1.0)) {
    throw std::invalid_argument("target_accept must be in (0, 1)");
  }
  if (!(cfg.init_radius > 0.0)) {
    throw std::invalid_argument("init_radius must be positive");
  }
  if (cfg.threads < 0) throw std::invalid_argument("threads must be >= 0");
}

}  // namespace

double kinetic_energy(std::span<const double> p,
                      std::span<const double> inv_metric) {
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) k += inv_metric[i] * p[i] * p[i];
  return 0.5 * k;
}

void leapfrog(const LogDensity& target, std::span<const double> inv_metric,
              double eps, Phase& z) {
  const std::size_t dim = z.q.size();
  for (std::size_t k = 0; k < dim; ++k) z.p[k] += 0.5 * eps * z.grad[k];
  for (std::size_t k = 0; k < dim; ++k) {
    z.q[k] += eps * inv_metric[k] * z.p[k];
  }
  z.lp = target.value_and_grad(z.q, z.grad);
  for (std::size_t k = 0; k < dim; ++k) z.p[k] += 0.5 * eps * z.grad[k];
}

std::vector<double> initialize_chain(const LogDensity& target, Rng& rng,
                                     double radius, int max_tries) {
  const int dim = target.dim();
  std::vector<double> q(dim), grad(dim);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    for (int k = 0; k < dim; ++k) q[k] = rng.uniform(-radius, radius);
    double lp = target.value_and_grad(q, grad);
    if (std::isfinite(lp) && all_finite(grad)) return q;
  }
  throw SamplerError("failed to find a finite starting point after " +
                     std::to_string(max_tries) + " tries");
}

RawRun nuts_sample(const LogDensity& target, const NutsConfig& cfg) {
  validate_config(cfg);
  const int dim = target.dim();
  if (dim < 1) throw std::invalid_argument("target dimension must be >= 1");

  RawRun run;
  run.n_chains = cfg.n_chains;
  run.n_draws = cfg.n_draws;
  run.dim = dim;
  run.draws.resize(static_cast<std::size_t>(cfg.n_chains) * cfg.n_draws * dim);
  run.divergent.assign(static_cast<std::size_t>(cfg.n_chains) * cfg.n_draws,
                       0);
  run.chains.resize(cfg.n_chains);

  std::exception_ptr failure;
#ifdef MISCAL_HAVE_OPENMP
  int n_threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
  n_threads = std::min(n_threads, cfg.n_chains);
#pragma omp parallel for schedule(static, 1) num_threads(n_threads)
  for (int chain = 0; chain < cfg.n_chains; ++chain) {
    try {
      ChainOutput out = run_chain(target, cfg, chain);
      std::copy(out.draws.begin(), out.draws.end(),
                run.draws.begin() + static_cast<std::size_t>(chain) *
                                        cfg.n_draws * dim);
      std::copy(out.divergent.begin(), out.divergent.end(),
                run.divergent.begin() +
                    static_cast<std::size_t>(chain) * cfg.n_draws);
      run.chains[chain] = std::move(out.stats);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
#else
  for (int chain = 0; chain < cfg.n_chains; ++chain) {
    try {
      ChainOutput out = run_chain(target, cfg, chain);
      std::copy(out.draws.begin(), out.draws.end(),
                run.draws.begin() + static_cast<std::size_t>(chain) *
                                        cfg.n_draws * dim);
      std::copy(out.divergent.begin(), out.divergent.end(),
                run.divergent.begin() +
                    static_cast<std::size_t>(chain) * cfg.n_draws);
      run.chains[chain] = std::move(out.stats);
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
#endif
  if (failure) std::rethrow_exception(failure);
  return run;
}

int PosteriorDraws::name_index(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == name) return static_cast<int>(k);
  }
  return -1;
}

namespace {

// Adapter exposing a model's log posterior to the sampler.
class ModelDensity final : public LogDensity {
 public:
  explicit ModelDensity(const Model& model) : model_(&model) {}
  int dim() const override { return model_->dim(); }
  double value_and_grad(std::span<const double> x,
                        std::span<double> grad) const override {
    return model_->log_posterior(x, grad);
  }

 private:
  const Model* model_;
};

}  // namespace

PosteriorDraws fit(const Model& model, const NutsConfig& cfg) {
  ModelDensity target(model);
  RawRun run = nuts_sample(target, cfg);

  PosteriorDraws out;
  out.variant = model.spec().variant;
  out.causes = model.spec().causes;
  out.countries = model.spec().countries;
  out.hyper = model.spec().hyper;
  out.names = model.reported_names();
  out.n_chains = run.n_chains;
  out.n_draws = run.n_draws;
  out.loglik_rows = model.loglik_rows();
  out.divergent = std::move(run.divergent);
  out.chains = std::move(run.chains);

  const std::size_t n_rep = out.names.size();
  const std::size_t n_rows = out.loglik_rows.size();
  const std::size_t total = static_cast<std::size_t>(run.n_chains) *
                            run.n_draws;
  out.values.resize(total * n_rep);
  out.loglik.resize(total * n_rows);

  for (int c = 0; c < run.n_chains; ++c) {
    for (int d = 0; d < run.n_draws; ++d) {
      std::size_t idx = static_cast<std::size_t>(c) * run.n_draws + d;
      std::span<const double> u = run.draw(c, d);
      ParamBlock block = model.constrain(u);
      model.reported(block,
                     {out.values.data() + idx * n_rep, n_rep});
      model.pointwise_loglik(u, {out.loglik.data() + idx * n_rows, n_rows});
    }
  }
  return out;
}

}  // namespace miscal
