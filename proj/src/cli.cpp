#include "miscal/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "miscal/analysis.hpp"
#include "miscal/dataio.hpp"
#include "miscal/diagnostics.hpp"
#include "miscal/rng.hpp"
#include "miscal/simulate.hpp"

namespace miscal {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";
// Base stream for per-country extrapolation seeds; country k in the predict
// list uses derive_seed(master, kPredictStream + k).
constexpr std::uint64_t kPredictStream = 0x70726564;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  os.flush();
  if (!os.good()) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed(double v, int prec) {
  if (std::isnan(v)) return "n/a";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string resolve_out_dir(const std::string& requested) {
  if (!requested.empty()) return requested;
  if (const char* env = std::getenv("MISCAL_OUT_DIR"); env && *env) return env;
  return ".";
}

Variant parse_variant(const std::string& s, bool allow_base) {
  std::optional<Variant> v = variant_from_string(s);
  if (!v) {
    throw ConfigError("unknown model '" + s +
                      "' (choose base, homogeneous, partly_het, fully_het)");
  }
  if (!allow_base && *v == Variant::kBase) {
    throw ConfigError("scenario must be homogeneous, partly_het, or fully_het");
  }
  return *v;
}

// ---------------------------------------------------------------- config --

void expect_keys(const ordered_json& j,
                 std::initializer_list<const char*> allowed,
                 const char* where) {
  if (!j.is_object()) {
    throw ConfigError(std::string(where) + " must be a JSON object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <class T>
void maybe_get(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void load_sampler_json(const ordered_json& j, NutsConfig& s) {
  expect_keys(j,
              {"chains", "warmup", "draws", "seed", "max_depth",
               "target_accept", "init_radius", "max_init_tries", "threads"},
              "sampler");
  maybe_get(j, "chains", s.n_chains);
  maybe_get(j, "warmup", s.n_warmup);
  maybe_get(j, "draws", s.n_draws);
  maybe_get(j, "seed", s.seed);
  maybe_get(j, "max_depth", s.max_depth);
  maybe_get(j, "target_accept", s.target_accept);
  maybe_get(j, "init_radius", s.init_radius);
  maybe_get(j, "max_init_tries", s.max_init_tries);
  maybe_get(j, "threads", s.threads);
}

void load_hyper_json(const ordered_json& j, Hyperparams& h) {
  expect_keys(j,
              {"acc_shape1", "acc_shape2", "pull_conc", "shrink_eps",
               "jeffreys", "omega_cap"},
              "hyper");
  maybe_get(j, "acc_shape1", h.acc_shape1);
  maybe_get(j, "acc_shape2", h.acc_shape2);
  maybe_get(j, "pull_conc", h.pull_conc);
  maybe_get(j, "shrink_eps", h.shrink_eps);
  maybe_get(j, "jeffreys", h.jeffreys);
  maybe_get(j, "omega_cap", h.omega_cap);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  ordered_json j;
  try {
    j = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  try {
    expect_keys(j,
                {"model", "input", "out", "strict", "dump_draws", "predict",
                 "sampler", "hyper"},
                "config");
    if (j.contains("model")) {
      cfg.model = parse_variant(j.at("model").get<std::string>(), true);
    }
    maybe_get(j, "input", cfg.input);
    maybe_get(j, "out", cfg.out_dir);
    maybe_get(j, "strict", cfg.strict);
    maybe_get(j, "dump_draws", cfg.dump_draws);
    maybe_get(j, "predict", cfg.predict);
    if (j.contains("sampler")) load_sampler_json(j.at("sampler"), cfg.sampler);
    if (j.contains("hyper")) load_hyper_json(j.at("hyper"), cfg.hyper);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return cfg;
}

void validate_sampler(const NutsConfig& s) {
  if (s.n_chains < 1) throw ConfigError("chains must be >= 1");
  if (s.n_warmup < 0) throw ConfigError("warmup must be >= 0");
  if (s.n_draws < 1) throw ConfigError("draws must be >= 1");
  if (s.max_depth < 1 || s.max_depth > 25) {
    throw ConfigError("max_depth must be in [1, 25]");
  }
  if (!(s.target_accept > 0.0 && s.target_accept < 1.0)) {
    throw ConfigError("target_accept must be in (0, 1)");
  }
  if (!(s.init_radius > 0.0)) throw ConfigError("init_radius must be > 0");
  if (s.max_init_tries < 1) throw ConfigError("max_init_tries must be >= 1");
  if (s.threads < 0) throw ConfigError("threads must be >= 0");
}

void validate_hyper(const Hyperparams& h) {
  if (!(h.acc_shape1 > 0.0) || !(h.acc_shape2 > 0.0)) {
    throw ConfigError("accuracy prior shapes must be > 0");
  }
  for (double c : h.pull_conc) {
    if (!(c > 0.0)) throw ConfigError("pull_conc entries must be > 0");
  }
  if (!(h.shrink_eps > 0.0)) throw ConfigError("shrink_eps must be > 0");
  if (!(h.jeffreys > 0.0)) throw ConfigError("jeffreys must be > 0");
  if (!(h.omega_cap > 0.0) || !std::isfinite(h.omega_cap)) {
    throw ConfigError("omega_cap must be positive and finite");
  }
}

void validate_predict_names(const std::vector<std::string>& names,
                            const std::vector<std::string>& data_countries) {
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    if (name.empty()) throw ConfigError("predict country names must not be empty");
    if (name == "pooled") {
      throw ConfigError("the country label 'pooled' is reserved");
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (names[m] == name) {
        throw ConfigError("duplicate predict country '" + name + "'");
      }
    }
    if (std::find(data_countries.begin(), data_countries.end(), name) !=
        data_countries.end()) {
      throw ConfigError("country '" + name +
                        "' is already in the data; its matrix is reported in "
                        "matrices.csv");
    }
  }
}

// -------------------------------------------------------------- manifests --

ordered_json tool_json() {
  ordered_json j;
  j["name"] = "miscal";
  j["version"] = kVersion;
  return j;
}

ordered_json sampler_json(const NutsConfig& s) {
  ordered_json j;
  j["chains"] = s.n_chains;
  j["warmup"] = s.n_warmup;
  j["draws"] = s.n_draws;
  j["seed"] = s.seed;
  j["max_depth"] = s.max_depth;
  j["target_accept"] = s.target_accept;
  j["init_radius"] = s.init_radius;
  j["max_init_tries"] = s.max_init_tries;
  j["threads"] = s.threads;
  return j;
}

ordered_json hyper_json(const Hyperparams& h) {
  ordered_json j;
  j["acc_shape1"] = h.acc_shape1;
  j["acc_shape2"] = h.acc_shape2;
  j["pull_conc"] = h.pull_conc;
  j["shrink_eps"] = h.shrink_eps;
  j["jeffreys"] = h.jeffreys;
  j["omega_cap"] = h.omega_cap;
  return j;
}

ordered_json run_config_json(const RunConfig& cfg, const std::string& out_dir) {
  ordered_json j;
  j["model"] = to_string(cfg.model);
  j["input"] = cfg.input;
  j["out"] = out_dir;
  j["strict"] = cfg.strict;
  j["dump_draws"] = cfg.dump_draws;
  j["predict"] = cfg.predict;
  j["sampler"] = sampler_json(cfg.sampler);
  j["hyper"] = hyper_json(cfg.hyper);
  return j;
}

ordered_json input_json(const LongFormatData& data, const std::string& path) {
  std::int64_t total = 0;
  for (const CountMatrix& m : data.counts) total += m.total();
  ordered_json j;
  j["path"] = path;
  j["checksum_fnv1a64"] = hex64(data.checksum);
  j["n_records"] = data.n_records;
  j["total_count"] = total;
  j["causes"] = data.causes.labels();
  j["countries"] = data.countries;
  return j;
}

ordered_json chains_json(const std::vector<ChainStats>& chains) {
  ordered_json arr = ordered_json::array();
  for (const ChainStats& c : chains) {
    ordered_json j;
    j["step_size"] = c.step_size;
    j["n_divergent"] = c.n_divergent;
    j["n_leapfrog"] = c.n_leapfrog;
    j["mean_accept"] = c.mean_accept;
    j["inv_metric"] = c.inv_metric;
    arr.push_back(std::move(j));
  }
  return arr;
}

ordered_json diagnostics_json(const Diagnostics& d) {
  ordered_json j;
  j["max_rhat"] = d.max_rhat;  // NaN serialises as null
  j["min_ess_bulk"] = d.min_ess;
  j["n_divergent"] = d.n_divergent;
  j["divergence_rate"] = d.divergence_rate;
  j["rhat_available"] = d.rhat_available;
  j["warnings"] = d.warnings;
  return j;
}

ordered_json comparison_json(const ComparisonMetrics& m) {
  ordered_json j;
  j["waic"] = m.waic;
  j["waic_se"] = m.waic_se;
  j["loo_ic"] = m.loo_ic;
  j["loo_se"] = m.loo_se;
  j["lppd"] = m.lppd;
  j["p_waic"] = m.p_waic;
  j["p_loo"] = m.p_loo;
  j["n_high_pareto_k"] = m.high_k_rows.size();
  return j;
}

// --------------------------------------------------------------- commands --

int run_fit(const RunConfig& raw_cfg) {
  RunConfig cfg = raw_cfg;
  if (cfg.input.empty()) {
    throw ConfigError("an input file is required (--input or config)");
  }
  validate_sampler(cfg.sampler);
  validate_hyper(cfg.hyper);
  std::string out_dir = resolve_out_dir(cfg.out_dir);

  LongFormatData data = ingest_counts_file(cfg.input);
  int C = data.causes.size();
  if (!cfg.hyper.pull_conc.empty() &&
      static_cast<int>(cfg.hyper.pull_conc.size()) != C) {
    throw ConfigError("pull_conc must have one entry per cause (" +
                      std::to_string(C) + ")");
  }
  validate_predict_names(cfg.predict, data.countries);

  ModelSpec spec;
  spec.variant = cfg.model;
  spec.causes = data.causes;
  spec.countries = data.countries;
  spec.counts = data.counts;
  spec.hyper = cfg.hyper;
  Model model(spec);

  PosteriorDraws draws = fit(model, cfg.sampler);
  Diagnostics diag = diagnose(draws);
  SummaryTable summary = summarize(draws);
  ComparisonMetrics comp = loo_ic(draws.loglik, model.n_loglik_rows());
  std::vector<CellSummary> cells = matrix_cell_summaries(draws);

  std::vector<std::pair<std::string, OddsTable>> odds;
  odds.emplace_back("pooled", odds_table(pool(data.counts)));
  for (std::size_t s = 0; s < data.countries.size(); ++s) {
    odds.emplace_back(data.countries[s], odds_table(data.counts[s]));
  }

  std::vector<std::uint64_t> predict_seeds;
  std::vector<CellSummary> predicted;
  for (std::size_t k = 0; k < cfg.predict.size(); ++k) {
    std::uint64_t sd = derive_seed(cfg.sampler.seed, kPredictStream + k);
    predict_seeds.push_back(sd);
    PredictiveDraws pd = predict_new_country(draws, sd);
    std::vector<CellSummary> block =
        predictive_cell_summaries(pd, cfg.predict[k]);
    predicted.insert(predicted.end(), block.begin(), block.end());
  }

  fs::create_directories(out_dir);
  std::vector<std::string> outputs;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text_file(fs::path(out_dir) / name, text);
    outputs.push_back(name);
  };
  {
    std::ostringstream os;
    write_summary_csv(os, summary);
    emit("summary.csv", os.str());
  }
  {
    std::ostringstream os;
    write_matrices_csv(os, cells);
    emit("matrices.csv", os.str());
  }
  {
    std::ostringstream os;
    write_comparison_csv(os, comp);
    emit("comparison.csv", os.str());
  }
  {
    std::ostringstream os;
    write_diagnostics_csv(os, diag, draws.chains);
    emit("diagnostics.csv", os.str());
  }
  {
    std::ostringstream os;
    write_odds_csv(os, data.causes, odds);
    emit("odds.csv", os.str());
  }
  if (!predicted.empty()) {
    std::ostringstream os;
    write_matrices_csv(os, predicted);
    emit("predict.csv", os.str());
  }
  if (cfg.dump_draws) {
    std::ostringstream os;
    write_draws_csv(os, draws);
    emit("draws.csv", os.str());
  }

  bool rhat_ok = !diag.rhat_available || !(diag.max_rhat > kStrictMaxRhat);
  bool div_ok = !(diag.divergence_rate > kStrictMaxDivergenceRate);
  bool within = rhat_ok && div_ok;

  ordered_json manifest;
  manifest["tool"] = tool_json();
  manifest["command"] = "fit";
  manifest["config"] = run_config_json(cfg, out_dir);
  manifest["input"] = input_json(data, cfg.input);
  {
    ordered_json jm;
    jm["variant"] = to_string(cfg.model);
    jm["n_free_parameters"] = model.dim();
    jm["n_reported"] = model.n_reported();
    jm["n_loglik_rows"] = model.n_loglik_rows();
    manifest["model"] = std::move(jm);
  }
  manifest["seeds"] = [&] {
    ordered_json j;
    j["master"] = cfg.sampler.seed;
    j["predict"] = predict_seeds;
    return j;
  }();
  manifest["chains"] = chains_json(draws.chains);
  manifest["diagnostics"] = diagnostics_json(diag);
  manifest["comparison"] = comparison_json(comp);
  {
    ordered_json js;
    js["enabled"] = cfg.strict;
    js["max_rhat_threshold"] = kStrictMaxRhat;
    js["max_divergence_rate"] = kStrictMaxDivergenceRate;
    js["within_thresholds"] = within;
    manifest["strict"] = std::move(js);
  }
  outputs.push_back("manifest.json");
  manifest["outputs"] = outputs;
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "model: " << to_string(cfg.model) << ", " << C << " causes, "
            << data.countries.size() << " countries, " << model.dim()
            << " free parameters\n";
  std::cout << "sampling: " << cfg.sampler.n_chains << " chains x "
            << cfg.sampler.n_draws << " draws (" << cfg.sampler.n_warmup
            << " warmup each)\n";
  std::cout << "diagnostics: max rhat "
            << (diag.rhat_available ? fixed(diag.max_rhat, 4) : "n/a")
            << ", min ess " << fixed(diag.min_ess, 1) << ", divergent "
            << diag.n_divergent << "/" << draws.total_draws() << "\n";
  std::cout << "comparison: waic " << fixed(comp.waic, 2) << " (se "
            << fixed(comp.waic_se, 2) << "), loo_ic " << fixed(comp.loo_ic, 2)
            << " (se " << fixed(comp.loo_se, 2) << ")\n";
  for (const std::string& w : diag.warnings) {
    std::cout << "warning: " << w << "\n";
  }
  std::cout << "wrote";
  for (const std::string& name : outputs) std::cout << ' ' << name;
  std::cout << " in " << out_dir << "\n";

  if (cfg.strict && !within) {
    std::cout << "strict gate: FAILED (";
    if (!rhat_ok) {
      std::cout << "max rhat " << fixed(diag.max_rhat, 4) << " > "
                << kStrictMaxRhat;
    }
    if (!div_ok) {
      std::cout << (!rhat_ok ? "; " : "") << "divergence rate "
                << fixed(diag.divergence_rate, 4) << " > "
                << kStrictMaxDivergenceRate;
    }
    std::cout << ")\n";
    return kExitStrict;
  }
  return kExitOk;
}

struct PredictOpts {
  std::string fit_dir;
  std::string out;
  std::vector<std::string> countries;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_predict(const PredictOpts& o) {
  fs::path manifest_path = fs::path(o.fit_dir) / "manifest.json";
  ordered_json fit_manifest;
  try {
    fit_manifest = ordered_json::parse(read_text_file(manifest_path.string()));
  } catch (const std::exception& e) {
    throw ConfigError("cannot read fit manifest: " + std::string(e.what()));
  }

  Variant variant;
  std::vector<std::string> cause_labels, data_countries;
  Hyperparams hyper;
  std::uint64_t master;
  try {
    if (fit_manifest.at("command").get<std::string>() != "fit") {
      throw ConfigError("'" + o.fit_dir + "' does not hold a fit manifest");
    }
    const ordered_json& cj = fit_manifest.at("config");
    variant = parse_variant(cj.at("model").get<std::string>(), true);
    load_hyper_json(cj.at("hyper"), hyper);
    master = o.seed_given ? o.seed
                          : cj.at("sampler").at("seed").get<std::uint64_t>();
    fit_manifest.at("input").at("causes").get_to(cause_labels);
    fit_manifest.at("input").at("countries").get_to(data_countries);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fit manifest " + manifest_path.string() + ": " +
                      e.what());
  }

  if (o.countries.empty()) {
    throw ConfigError("at least one --country is required");
  }
  validate_predict_names(o.countries, data_countries);

  fs::path draws_path = fs::path(o.fit_dir) / "draws.csv";
  if (!fs::exists(draws_path)) {
    throw ConfigError("no draws.csv in '" + o.fit_dir +
                      "' (rerun fit with --dump-draws)");
  }
  std::string draws_text = read_text_file(draws_path.string());
  DrawsFile file = read_draws_csv(draws_text);

  PosteriorDraws draws;
  draws.variant = variant;
  draws.causes = CauseSet(cause_labels);
  draws.countries = data_countries;
  draws.hyper = hyper;
  draws.names = file.names;
  draws.n_chains = file.n_chains;
  draws.n_draws = file.n_draws;
  draws.values = std::move(file.values);
  draws.divergent = std::move(file.divergent);

  std::vector<std::uint64_t> predict_seeds;
  std::vector<CellSummary> predicted;
  for (std::size_t k = 0; k < o.countries.size(); ++k) {
    std::uint64_t sd = derive_seed(master, kPredictStream + k);
    predict_seeds.push_back(sd);
    PredictiveDraws pd = predict_new_country(draws, sd);
    std::vector<CellSummary> block =
        predictive_cell_summaries(pd, o.countries[k]);
    predicted.insert(predicted.end(), block.begin(), block.end());
  }

  std::string out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  {
    std::ostringstream os;
    write_matrices_csv(os, predicted);
    write_text_file(fs::path(out_dir) / "predict.csv", os.str());
  }

  ordered_json manifest;
  manifest["tool"] = tool_json();
  manifest["command"] = "predict";
  {
    ordered_json cj;
    cj["fit"] = o.fit_dir;
    cj["countries"] = o.countries;
    cj["seed"] = master;
    cj["out"] = out_dir;
    manifest["config"] = std::move(cj);
  }
  {
    ordered_json sj;
    sj["model"] = to_string(variant);
    sj["draws_checksum_fnv1a64"] = hex64(fnv1a64(draws_text));
    sj["n_chains"] = draws.n_chains;
    sj["n_draws"] = draws.n_draws;
    manifest["source"] = std::move(sj);
  }
  manifest["seeds"] = [&] {
    ordered_json j;
    j["master"] = master;
    j["predict"] = predict_seeds;
    return j;
  }();
  manifest["outputs"] = {"predict.csv", "manifest.json"};
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "predicted " << o.countries.size() << " countr"
            << (o.countries.size() == 1 ? "y" : "ies") << " from a "
            << to_string(variant) << " fit (" << draws.total_draws()
            << " draws)\n";
  std::cout << "wrote predict.csv manifest.json in " << out_dir << "\n";
  return kExitOk;
}

struct OddsOpts {
  std::string input;
  std::string out;
  double threshold = 0.5;
};

int run_diagnose_odds(const OddsOpts& o) {
  if (o.input.empty()) throw ConfigError("an input file is required (--input)");
  if (!(o.threshold > 0.0)) throw ConfigError("threshold must be > 0");
  LongFormatData data = ingest_counts_file(o.input);

  std::vector<std::pair<std::string, OddsTable>> tables;
  tables.emplace_back("pooled", odds_table(pool(data.counts)));
  for (std::size_t s = 0; s < data.countries.size(); ++s) {
    tables.emplace_back(data.countries[s], odds_table(data.counts[s]));
  }

  std::string out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  {
    std::ostringstream os;
    write_odds_csv(os, data.causes, tables);
    write_text_file(fs::path(out_dir) / "odds.csv", os.str());
  }

  ordered_json results = ordered_json::array();
  for (const auto& [label, table] : tables) {
    double max_spread = std::numeric_limits<double>::quiet_NaN();
    int n_spreads = 0;
    for (const OddsTable::Pair& pair : table.pairs) {
      if (!pair.spread) continue;
      ++n_spreads;
      if (!(max_spread >= *pair.spread)) max_spread = *pair.spread;
    }
    ordered_json j;
    j["matrix"] = label;
    j["n_pairs"] = table.pairs.size();
    j["n_spreads"] = n_spreads;
    j["max_spread"] = max_spread;  // null when no pair was usable
    j["elevated"] = n_spreads > 0 && max_spread > o.threshold;
    results.push_back(std::move(j));

    std::cout << label << ": max log-odds spread "
              << (n_spreads > 0 ? fixed(max_spread, 4) : "n/a") << " ("
              << (n_spreads > 0 && max_spread > o.threshold
                      ? "elevated: row-specific error structure"
                      : "consistent with a shared attraction profile")
              << ")\n";
  }

  ordered_json manifest;
  manifest["tool"] = tool_json();
  manifest["command"] = "diagnose-odds";
  {
    ordered_json cj;
    cj["input"] = o.input;
    cj["out"] = out_dir;
    cj["threshold"] = o.threshold;
    manifest["config"] = std::move(cj);
  }
  manifest["input"] = input_json(data, o.input);
  manifest["results"] = std::move(results);
  manifest["outputs"] = {"odds.csv", "manifest.json"};
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "wrote odds.csv manifest.json in " << out_dir << "\n";
  return kExitOk;
}

struct SimOpts {
  std::string scenario = "fully_het";
  ScenarioConfig cfg;
  std::string out;
};

int run_simulate(const SimOpts& o) {
  ScenarioConfig cfg = o.cfg;
  cfg.truth = parse_variant(o.scenario, false);
  validate_sampler(cfg.sampler);

  StudyResult res = run_study(cfg);

  CauseSet causes(numbered_labels("cause", cfg.n_causes));
  std::vector<std::string> countries =
      numbered_labels("country", cfg.n_countries);

  std::string out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  {
    std::ostringstream os;
    write_study_cells_csv(os, res);
    write_text_file(fs::path(out_dir) / "cells.csv", os.str());
  }
  {
    std::ostringstream os;
    write_study_aggregates_csv(os, res);
    write_text_file(fs::path(out_dir) / "aggregates.csv", os.str());
  }
  {
    std::ostringstream os;
    write_truth_csv(os, res.truth, countries, causes);
    write_text_file(fs::path(out_dir) / "truth.csv", os.str());
  }

  ordered_json manifest;
  manifest["tool"] = tool_json();
  manifest["command"] = "simulate";
  {
    ordered_json cj;
    cj["scenario"] = to_string(cfg.truth);
    cj["causes"] = cfg.n_causes;
    cj["countries"] = cfg.n_countries;
    cj["per_country"] = cfg.n_per_country;
    cj["replications"] = cfg.replications;
    cj["seed"] = cfg.seed;
    cj["truth_seed"] = cfg.truth_seed;
    cj["loco"] = cfg.loco;
    cj["threads"] = cfg.threads;
    cj["out"] = out_dir;
    cj["sampler"] = sampler_json(cfg.sampler);
    cj["hyper"] = hyper_json(cfg.hyper);
    manifest["config"] = std::move(cj);
  }
  {
    ordered_json tj;
    tj["omega_pool"] = res.truth.omega_pool;
    tj["omega_sens"] = res.truth.omega_sens;  // null when held infinite
    tj["omega_rfp"] = res.truth.omega_rfp;
    tj["accuracy"] = res.truth.base.accuracy;
    tj["pull"] = res.truth.base.pull;
    manifest["truth"] = std::move(tj);
  }
  manifest["n_failed"] = res.n_failed;
  manifest["outputs"] = {"cells.csv", "aggregates.csv", "truth.csv",
                         "manifest.json"};
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "scenario: " << to_string(cfg.truth) << " truth, "
            << cfg.replications << " replications, " << cfg.n_causes
            << " causes x " << cfg.n_countries << " countries x "
            << cfg.n_per_country << " deaths\n";
  std::cout << "method        n_ok  waic (se)          loo_ic (se)        "
               "in_mse     in_is\n";
  for (const MethodAggregate& a : res.aggregates) {
    char line[160];
    std::snprintf(line, sizeof line,
                  "%-13s %-5d %-8.1f (%-5.1f)   %-8.1f (%-5.1f)   %-9.5f  "
                  "%-8.4f",
                  to_string(a.method).c_str(), a.n_ok, a.mean_waic, a.se_waic,
                  a.mean_loo, a.se_loo, a.mean_mse, a.mean_is);
    std::cout << line << "\n";
  }
  if (res.n_failed > 0) {
    std::cout << "failed cells: " << res.n_failed << " (see cells.csv)\n";
  }
  std::cout << "wrote cells.csv aggregates.csv truth.csv manifest.json in "
            << out_dir << "\n";
  return kExitOk;
}

struct SummarizeOpts {
  std::string draws;
  std::string out;
};

int run_summarize(const SummarizeOpts& o) {
  if (o.draws.empty()) throw ConfigError("a draw dump is required (--draws)");
  std::string text;
  try {
    text = read_text_file(o.draws);
  } catch (const std::runtime_error& e) {
    throw CsvError(0, e.what());
  }
  DrawsFile file = read_draws_csv(text);

  PosteriorDraws draws;
  draws.names = file.names;
  draws.n_chains = file.n_chains;
  draws.n_draws = file.n_draws;
  draws.values = std::move(file.values);
  draws.divergent = std::move(file.divergent);
  SummaryTable table = summarize(draws);

  std::string out_dir = resolve_out_dir(o.out);
  fs::create_directories(out_dir);
  {
    std::ostringstream os;
    write_summary_csv(os, table);
    write_text_file(fs::path(out_dir) / "summary.csv", os.str());
  }

  ordered_json manifest;
  manifest["tool"] = tool_json();
  manifest["command"] = "summarize-draws";
  {
    ordered_json cj;
    cj["draws"] = o.draws;
    cj["out"] = out_dir;
    manifest["config"] = std::move(cj);
  }
  {
    ordered_json sj;
    sj["draws_checksum_fnv1a64"] = hex64(fnv1a64(text));
    sj["n_chains"] = draws.n_chains;
    sj["n_draws"] = draws.n_draws;
    sj["n_scalars"] = draws.names.size();
    manifest["source"] = std::move(sj);
  }
  manifest["outputs"] = {"summary.csv", "manifest.json"};
  write_text_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

  std::cout << "summarised " << draws.names.size() << " scalars over "
            << draws.total_draws() << " draws (" << draws.n_chains
            << " chains)\n";
  std::cout << "wrote summary.csv manifest.json in " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{
      "Estimation of structured misclassification matrices for a noisy "
      "cause-of-death classifier against a gold standard"};
  app.name("miscal");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("miscal ") + kVersion);

  int rc = kExitOk;

  // fit -------------------------------------------------------------------
  struct {
    std::string config, input, model, out;
    std::uint64_t seed = 0;
    int chains = 0, warmup = 0, draws = 0, max_depth = 0, max_init_tries = 0,
        threads = 0;
    double target_accept = 0, init_radius = 0, shrink_eps = 0, jeffreys = 0,
           acc_shape1 = 0, acc_shape2 = 0, omega_cap = 0;
    bool strict = false, dump_draws = false;
    std::vector<std::string> predict;
  } f;
  CLI::App* fit_cmd = app.add_subcommand(
      "fit", "Fit a misclassification model to paired counts");
  fit_cmd->add_option("--config", f.config, "JSON config file");
  fit_cmd->add_option("--input,-i", f.input, "long-format count CSV");
  fit_cmd->add_option("--model,-m", f.model,
                      "base | homogeneous | partly_het | fully_het");
  fit_cmd->add_option("--out,-o", f.out, "output directory");
  fit_cmd->add_option("--seed", f.seed, "master RNG seed");
  fit_cmd->add_option("--chains", f.chains, "number of chains");
  fit_cmd->add_option("--warmup", f.warmup, "warmup iterations per chain");
  fit_cmd->add_option("--draws", f.draws, "kept draws per chain");
  fit_cmd->add_option("--max-depth", f.max_depth, "maximum trajectory depth");
  fit_cmd->add_option("--target-accept", f.target_accept,
                      "step size adaptation target");
  fit_cmd->add_option("--init-radius", f.init_radius,
                      "initialisation cube half-width");
  fit_cmd->add_option("--max-init-tries", f.max_init_tries,
                      "initialisation attempts per chain");
  fit_cmd->add_option("--threads", f.threads,
                      "chain threads (0 = one per chain)");
  fit_cmd->add_option("--shrink-eps", f.shrink_eps,
                      "Beta(eps, eps) shrinkage exponent");
  fit_cmd->add_option("--jeffreys", f.jeffreys, "shape offset");
  fit_cmd->add_option("--acc-shape1", f.acc_shape1, "accuracy prior shape 1");
  fit_cmd->add_option("--acc-shape2", f.acc_shape2, "accuracy prior shape 2");
  fit_cmd->add_option("--omega-cap", f.omega_cap, "spread upper bound");
  fit_cmd->add_flag("--strict", f.strict,
                    "fail when rhat or divergences exceed thresholds");
  fit_cmd->add_flag("--dump-draws", f.dump_draws, "write the full draw table");
  fit_cmd->add_option("--predict", f.predict,
                      "unseen country to extrapolate (repeatable)");
  fit_cmd->callback([&] {
    RunConfig cfg;
    if (!f.config.empty()) cfg = load_run_config(f.config);
    auto given = [&](const char* name) { return fit_cmd->count(name) > 0; };
    if (given("--input")) cfg.input = f.input;
    if (given("--model")) cfg.model = parse_variant(f.model, true);
    if (given("--out")) cfg.out_dir = f.out;
    if (given("--seed")) cfg.sampler.seed = f.seed;
    if (given("--chains")) cfg.sampler.n_chains = f.chains;
    if (given("--warmup")) cfg.sampler.n_warmup = f.warmup;
    if (given("--draws")) cfg.sampler.n_draws = f.draws;
    if (given("--max-depth")) cfg.sampler.max_depth = f.max_depth;
    if (given("--target-accept")) cfg.sampler.target_accept = f.target_accept;
    if (given("--init-radius")) cfg.sampler.init_radius = f.init_radius;
    if (given("--max-init-tries")) {
      cfg.sampler.max_init_tries = f.max_init_tries;
    }
    if (given("--threads")) cfg.sampler.threads = f.threads;
    if (given("--shrink-eps")) cfg.hyper.shrink_eps = f.shrink_eps;
    if (given("--jeffreys")) cfg.hyper.jeffreys = f.jeffreys;
    if (given("--acc-shape1")) cfg.hyper.acc_shape1 = f.acc_shape1;
    if (given("--acc-shape2")) cfg.hyper.acc_shape2 = f.acc_shape2;
    if (given("--omega-cap")) cfg.hyper.omega_cap = f.omega_cap;
    if (f.strict) cfg.strict = true;
    if (f.dump_draws) cfg.dump_draws = true;
    if (given("--predict")) cfg.predict = f.predict;
    rc = run_fit(cfg);
  });

  // predict ---------------------------------------------------------------
  PredictOpts p;
  CLI::App* predict_cmd = app.add_subcommand(
      "predict", "Extrapolate a fit to countries without data");
  predict_cmd->add_option("--fit", p.fit_dir, "fit output directory")
      ->required();
  predict_cmd->add_option("--country", p.countries,
                          "new country name (repeatable)");
  predict_cmd->add_option("--seed", p.seed,
                          "master seed (default: the fit's seed)");
  predict_cmd->add_option("--out,-o", p.out, "output directory");
  predict_cmd->callback([&] {
    p.seed_given = predict_cmd->count("--seed") > 0;
    rc = run_predict(p);
  });

  // diagnose-odds ---------------------------------------------------------
  OddsOpts d;
  CLI::App* odds_cmd = app.add_subcommand(
      "diagnose-odds",
      "Check counts for a shared attraction profile via log-odds spreads");
  odds_cmd->add_option("--input,-i", d.input, "long-format count CSV")
      ->required();
  odds_cmd->add_option("--out,-o", d.out, "output directory");
  odds_cmd->add_option("--threshold", d.threshold,
                       "spread above which a pair is flagged");
  odds_cmd->callback([&] { rc = run_diagnose_odds(d); });

  // simulate --------------------------------------------------------------
  SimOpts s;
  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "Run the generate-fit-compare replication study");
  sim_cmd->add_option("--scenario", s.scenario,
                      "homogeneous | partly_het | fully_het");
  sim_cmd->add_option("--reps", s.cfg.replications, "replications");
  sim_cmd->add_option("--causes", s.cfg.n_causes, "number of causes");
  sim_cmd->add_option("--countries", s.cfg.n_countries, "number of countries");
  sim_cmd->add_option("--per-country", s.cfg.n_per_country,
                      "deaths per country");
  sim_cmd->add_option("--seed", s.cfg.seed, "master RNG seed");
  sim_cmd->add_option("--truth-seed", s.cfg.truth_seed,
                      "seed of the generating truth draw");
  sim_cmd->add_option("--chains", s.cfg.sampler.n_chains, "chains per fit");
  sim_cmd->add_option("--warmup", s.cfg.sampler.n_warmup,
                      "warmup iterations per chain");
  sim_cmd->add_option("--draws", s.cfg.sampler.n_draws,
                      "kept draws per chain");
  sim_cmd->add_option("--target-accept", s.cfg.sampler.target_accept,
                      "step size adaptation target");
  sim_cmd->add_option("--max-depth", s.cfg.sampler.max_depth,
                      "maximum trajectory depth");
  sim_cmd->add_flag("--loco", s.cfg.loco,
                    "score leave-one-country-out extrapolation");
  sim_cmd->add_option("--threads", s.cfg.threads,
                      "replication-level threads (0 = library default)");
  sim_cmd->add_option("--out,-o", s.out, "output directory");
  sim_cmd->callback([&] { rc = run_simulate(s); });

  // summarize-draws -------------------------------------------------------
  SummarizeOpts m;
  CLI::App* sum_cmd = app.add_subcommand(
      "summarize-draws", "Rebuild the posterior summary from a draw dump");
  sum_cmd->add_option("--draws", m.draws, "draws.csv from a fit")->required();
  sum_cmd->add_option("--out,-o", m.out, "output directory");
  sum_cmd->callback([&] { rc = run_summarize(m); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SamplerError& e) {
    std::cerr << "error: sampling failed: " << e.what() << "\n";
    return kExitSampler;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return rc;
}

}  // namespace miscal
