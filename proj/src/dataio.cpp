#include "miscal/dataio.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace miscal {

CsvError::CsvError(int line, const std::string& message)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " +
                                        message
                                  : message),
      line_(line) {}

std::vector<CsvRecord> parse_csv(std::string_view text) {
  std::vector<CsvRecord> records;
  CsvRecord cur;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;  // current field began with a quote
  bool any_content = false;   // record has a quoted field or non-empty text
  int line = 1;
  cur.line = line;

  auto end_field = [&] {
    cur.fields.push_back(std::move(field));
    field.clear();
    field_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    // A line with no characters at all is skipped, not an empty record.
    if (any_content || cur.fields.size() > 1 || !cur.fields[0].empty()) {
      records.push_back(std::move(cur));
    }
    cur = CsvRecord{};
    cur.line = line;
    any_content = false;
  };

  for (std::size_t at = 0; at < text.size(); ++at) {
    char c = text[at];
    if (in_quotes) {
      if (c == '"') {
        if (at + 1 < text.size() && text[at + 1] == '"') {
          field.push_back('"');
          ++at;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_quoted) {
          throw CsvError(cur.line, "stray quote inside a field");
        }
        in_quotes = true;
        field_quoted = true;
        any_content = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (at + 1 < text.size() && text[at + 1] == '\n') ++at;
        ++line;
        end_record();
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        if (field_quoted) {
          throw CsvError(cur.line, "content after a closing quote");
        }
        field.push_back(c);
        any_content = true;
        break;
    }
  }
  if (in_quotes) throw CsvError(cur.line, "unterminated quoted field");
  if (any_content || !field.empty() || !cur.fields.empty()) end_record();
  return records;
}

std::string csv_escape(std::string_view field) {
  bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string fmt_full(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

const std::array<std::string, 4> kCountHeader = {"country", "gold_cause",
                                                 "predicted_cause", "count"};

std::int64_t parse_count(const std::string& s, int line) {
  if (s.empty()) throw CsvError(line, "count must not be empty");
  if (s[0] == '-') throw CsvError(line, "count must be nonnegative");
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc::result_out_of_range) {
    throw CsvError(line, "count out of range");
  }
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw CsvError(line, "count must be a nonnegative integer");
  }
  return v;
}

int find_label(const std::vector<std::string>& labels,
               const std::string& label) {
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] == label) return static_cast<int>(k);
  }
  return -1;
}

std::vector<double> series_of(const PosteriorDraws& draws, int k) {
  std::vector<double> out;
  out.reserve(draws.total_draws());
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int d = 0; d < draws.n_draws; ++d) out.push_back(draws.value(c, d, k));
  }
  return out;
}

CellSummary summarize_cell(std::string country, std::string gold,
                           std::string predicted, std::vector<double> vals) {
  CellSummary cell;
  cell.country = std::move(country);
  cell.gold = std::move(gold);
  cell.predicted = std::move(predicted);
  double total = 0.0;
  for (double v : vals) total += v;
  cell.mean = total / static_cast<double>(vals.size());
  cell.q2_5 = quantile_type7(vals, 0.025);
  cell.q97_5 = quantile_type7(std::move(vals), 0.975);
  return cell;
}

}  // namespace

LongFormatData ingest_counts(std::string_view text) {
  std::vector<CsvRecord> records = parse_csv(text);
  std::size_t at = 0;

  std::vector<std::string> causes;
  bool closed = false;
  if (at < records.size() && !records[at].fields.empty() &&
      records[at].fields[0] == "causes") {
    const CsvRecord& rec = records[at];
    if (rec.fields.size() < 2) {
      throw CsvError(rec.line, "causes record needs at least one label");
    }
    for (std::size_t k = 1; k < rec.fields.size(); ++k) {
      const std::string& label = rec.fields[k];
      if (label.empty()) {
        throw CsvError(rec.line, "cause labels must not be empty");
      }
      if (find_label(causes, label) >= 0) {
        throw CsvError(rec.line, "duplicate cause label '" + label + "'");
      }
      causes.push_back(label);
    }
    closed = true;
    ++at;
  }

  if (at >= records.size()) {
    throw CsvError(0,
                   "missing header country,gold_cause,predicted_cause,count");
  }
  const CsvRecord& header = records[at];
  if (!std::equal(kCountHeader.begin(), kCountHeader.end(),
                  header.fields.begin(), header.fields.end())) {
    throw CsvError(header.line,
                   "header must be country,gold_cause,predicted_cause,count");
  }
  ++at;

  auto cause_index = [&](const std::string& label, int line) {
    if (label.empty()) throw CsvError(line, "cause labels must not be empty");
    int k = find_label(causes, label);
    if (k >= 0) return k;
    if (closed) {
      throw CsvError(line, "cause '" + label +
                               "' is not in the declared cause list");
    }
    causes.push_back(label);
    return static_cast<int>(causes.size()) - 1;
  };

  LongFormatData data;
  struct Triple {
    int country, gold, predicted;
    std::int64_t count;
  };
  std::vector<Triple> triples;
  std::set<std::array<int, 3>> seen;
  for (; at < records.size(); ++at) {
    const CsvRecord& rec = records[at];
    if (rec.fields.size() != 4) {
      throw CsvError(rec.line, "expected 4 fields, got " +
                                   std::to_string(rec.fields.size()));
    }
    const std::string& country = rec.fields[0];
    if (country.empty()) {
      throw CsvError(rec.line, "country labels must not be empty");
    }
    if (country == "pooled") {
      throw CsvError(rec.line,
                     "country label 'pooled' is reserved for report output");
    }
    int s = find_label(data.countries, country);
    if (s < 0) {
      data.countries.push_back(country);
      s = static_cast<int>(data.countries.size()) - 1;
    }
    int gi = cause_index(rec.fields[1], rec.line);
    int pj = cause_index(rec.fields[2], rec.line);
    if (!seen.insert({s, gi, pj}).second) {
      throw CsvError(rec.line, "duplicate record for (" + country + ", " +
                                   rec.fields[1] + ", " + rec.fields[2] + ")");
    }
    triples.push_back({s, gi, pj, parse_count(rec.fields[3], rec.line)});
  }
  if (triples.empty()) throw CsvError(0, "no data records");

  data.causes = CauseSet(causes);
  int C = data.causes.size();
  data.counts.assign(data.countries.size(), CountMatrix(C));
  for (const Triple& t : triples) {
    data.counts[t.country].set(t.gold, t.predicted, t.count);
  }
  data.n_records = static_cast<std::int64_t>(triples.size());
  data.checksum = fnv1a64(text);
  return data;
}

LongFormatData ingest_counts_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(0, "cannot open input file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) {
    throw CsvError(0, "failed reading input file '" + path + "'");
  }
  return ingest_counts(buf.str());
}

void write_counts_csv(std::ostream& os, const LongFormatData& data) {
  os << "causes";
  for (const std::string& label : data.causes.labels()) {
    os << ',' << csv_escape(label);
  }
  os << '\n';
  os << "country,gold_cause,predicted_cause,count\n";
  int C = data.causes.size();
  for (std::size_t s = 0; s < data.countries.size(); ++s) {
    for (int i = 0; i < C; ++i) {
      for (int j = 0; j < C; ++j) {
        os << csv_escape(data.countries[s]) << ','
           << csv_escape(data.causes.label(i)) << ','
           << csv_escape(data.causes.label(j)) << ','
           << data.counts[s].at(i, j) << '\n';
      }
    }
  }
}

void write_summary_csv(std::ostream& os, const SummaryTable& table) {
  os << "name,mean,sd,q2_5,q25,q50,q75,q97_5\n";
  for (const SummaryRow& row : table) {
    os << csv_escape(row.name) << ',' << fmt_full(row.mean) << ','
       << fmt_full(row.sd) << ',' << fmt_full(row.q2_5) << ','
       << fmt_full(row.q25) << ',' << fmt_full(row.q50) << ','
       << fmt_full(row.q75) << ',' << fmt_full(row.q97_5) << '\n';
  }
}

std::vector<CellSummary> matrix_cell_summaries(const PosteriorDraws& draws) {
  std::vector<CellSummary> out;
  int C = draws.causes.size();

  std::vector<CellSummary> pooled;
  for (int i = 0; i < C; ++i) {
    for (int j = 0; j < C; ++j) {
      std::string name = "phi.pooled." + draws.causes.label(i) + "." +
                         draws.causes.label(j);
      int k = draws.name_index(name);
      if (k < 0) throw std::logic_error("missing reported scalar " + name);
      pooled.push_back(summarize_cell("pooled", draws.causes.label(i),
                                      draws.causes.label(j),
                                      series_of(draws, k)));
    }
  }
  out = pooled;

  for (const std::string& country : draws.countries) {
    for (int i = 0; i < C; ++i) {
      for (int j = 0; j < C; ++j) {
        std::string name = "phi." + country + "." + draws.causes.label(i) +
                           "." + draws.causes.label(j);
        int k = draws.name_index(name);
        if (k >= 0) {
          out.push_back(summarize_cell(country, draws.causes.label(i),
                                       draws.causes.label(j),
                                       series_of(draws, k)));
        } else {
          CellSummary cell = pooled[static_cast<std::size_t>(i) * C + j];
          cell.country = country;
          out.push_back(std::move(cell));
        }
      }
    }
  }
  return out;
}

std::vector<CellSummary> predictive_cell_summaries(
    const PredictiveDraws& pred, const std::string& country) {
  std::vector<CellSummary> out;
  int C = pred.causes.size();
  std::vector<double> vals(pred.n_draws);
  for (int i = 0; i < C; ++i) {
    for (int j = 0; j < C; ++j) {
      for (int d = 0; d < pred.n_draws; ++d) {
        vals[d] = pred.matrix(d)[static_cast<std::size_t>(i) * C + j];
      }
      out.push_back(summarize_cell(country, pred.causes.label(i),
                                   pred.causes.label(j), vals));
    }
  }
  return out;
}

void write_matrices_csv(std::ostream& os,
                        const std::vector<CellSummary>& cells) {
  os << "country,gold_cause,predicted_cause,mean,q2_5,q97_5\n";
  for (const CellSummary& cell : cells) {
    os << csv_escape(cell.country) << ',' << csv_escape(cell.gold) << ','
       << csv_escape(cell.predicted) << ',' << fmt_full(cell.mean) << ','
       << fmt_full(cell.q2_5) << ',' << fmt_full(cell.q97_5) << '\n';
  }
}

void write_comparison_csv(std::ostream& os, const ComparisonMetrics& m) {
  os << "metric,value,se\n";
  os << "waic," << fmt_full(m.waic) << ',' << fmt_full(m.waic_se) << '\n';
  os << "loo_ic," << fmt_full(m.loo_ic) << ',' << fmt_full(m.loo_se) << '\n';
  os << "lppd," << fmt_full(m.lppd) << ",\n";
  os << "p_waic," << fmt_full(m.p_waic) << ",\n";
  os << "p_loo," << fmt_full(m.p_loo) << ",\n";
  os << "high_pareto_k," << m.high_k_rows.size() << ",\n";
}

void write_diagnostics_csv(std::ostream& os, const Diagnostics& d,
                           const std::vector<ChainStats>& chains) {
  os << "metric,name,value\n";
  for (const ScalarDiagnostic& p : d.params) {
    os << "rhat," << csv_escape(p.name) << ',' << fmt_full(p.rhat) << '\n';
  }
  for (const ScalarDiagnostic& p : d.params) {
    os << "ess_bulk," << csv_escape(p.name) << ',' << fmt_full(p.ess_bulk)
       << '\n';
  }
  for (std::size_t c = 0; c < chains.size(); ++c) {
    os << "n_divergent,chain" << c + 1 << ',' << chains[c].n_divergent << '\n';
  }
  os << "n_divergent,total," << d.n_divergent << '\n';
  os << "divergence_rate,total," << fmt_full(d.divergence_rate) << '\n';
  os << "max_rhat,," << fmt_full(d.max_rhat) << '\n';
  os << "min_ess_bulk,," << fmt_full(d.min_ess) << '\n';
}

void write_odds_csv(
    std::ostream& os, const CauseSet& causes,
    const std::vector<std::pair<std::string, OddsTable>>& tables) {
  os << "country,predicted_j,predicted_k,gold,log_odds,spread\n";
  for (const auto& [label, table] : tables) {
    for (const OddsTable::Pair& pair : table.pairs) {
      std::string spread = pair.spread ? fmt_full(*pair.spread) : "";
      for (std::size_t r = 0; r < pair.rows.size(); ++r) {
        os << csv_escape(label) << ',' << csv_escape(causes.label(pair.j))
           << ',' << csv_escape(causes.label(pair.k)) << ','
           << csv_escape(causes.label(pair.rows[r])) << ','
           << (pair.log_odds[r] ? fmt_full(*pair.log_odds[r]) : "") << ','
           << spread << '\n';
      }
    }
  }
}

void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
  os << "chain,draw,divergent";
  for (const std::string& name : draws.names) os << ',' << csv_escape(name);
  os << '\n';
  for (int c = 0; c < draws.n_chains; ++c) {
    for (int d = 0; d < draws.n_draws; ++d) {
      os << c << ',' << d << ','
         << int(draws.divergent[static_cast<std::size_t>(c) * draws.n_draws +
                                d]);
      std::span<const double> row = draws.draw(c, d);
      for (double v : row) os << ',' << fmt_full(v);
      os << '\n';
    }
  }
}

DrawsFile read_draws_csv(std::string_view text) {
  std::vector<CsvRecord> records = parse_csv(text);
  if (records.empty()) throw CsvError(0, "empty draw table");
  const CsvRecord& header = records[0];
  if (header.fields.size() < 4 || header.fields[0] != "chain" ||
      header.fields[1] != "draw" || header.fields[2] != "divergent") {
    throw CsvError(header.line,
                   "header must be chain,draw,divergent,<scalar names>");
  }
  DrawsFile file;
  file.names.assign(header.fields.begin() + 3, header.fields.end());
  std::size_t width = file.names.size();

  auto parse_int = [](const std::string& s, int line) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw CsvError(line, "expected an integer, got '" + s + "'");
    }
    return v;
  };

  int expected_chain = 0, expected_draw = 0;
  for (std::size_t at = 1; at < records.size(); ++at) {
    const CsvRecord& rec = records[at];
    if (rec.fields.size() != width + 3) {
      throw CsvError(rec.line, "expected " + std::to_string(width + 3) +
                                   " fields, got " +
                                   std::to_string(rec.fields.size()));
    }
    int chain = parse_int(rec.fields[0], rec.line);
    int draw = parse_int(rec.fields[1], rec.line);
    if (chain == expected_chain + 1 && draw == 0) {
      if (file.n_draws == 0) file.n_draws = expected_draw;
      if (expected_draw != file.n_draws) {
        throw CsvError(rec.line, "chains have unequal draw counts");
      }
      expected_chain = chain;
      expected_draw = 0;
    }
    if (chain != expected_chain || draw != expected_draw) {
      throw CsvError(rec.line,
                     "draws must be chain-major with draw indices from 0");
    }
    ++expected_draw;
    int div = parse_int(rec.fields[2], rec.line);
    if (div != 0 && div != 1) {
      throw CsvError(rec.line, "divergent flag must be 0 or 1");
    }
    file.divergent.push_back(static_cast<std::uint8_t>(div));
    for (std::size_t k = 0; k < width; ++k) {
      const std::string& s = rec.fields[k + 3];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw CsvError(rec.line, "expected a number, got '" + s + "'");
      }
      file.values.push_back(v);
    }
  }
  if (file.divergent.empty()) throw CsvError(0, "draw table has no rows");
  if (file.n_draws == 0) file.n_draws = expected_draw;
  if (expected_draw != file.n_draws) {
    throw CsvError(records.back().line, "chains have unequal draw counts");
  }
  file.n_chains = expected_chain + 1;
  return file;
}

void write_study_cells_csv(std::ostream& os, const StudyResult& result) {
  os << "replication,method,dataset_seed,fit_seed,waic,loo_ic,in_mse,"
        "in_interval_score,out_interval_score,max_rhat,n_divergent,failed,"
        "error\n";
  for (const MethodResult& cell : result.cells) {
    os << cell.replication << ',' << to_string(cell.method) << ','
       << cell.dataset_seed << ',' << cell.fit_seed << ','
       << fmt_full(cell.waic) << ',' << fmt_full(cell.loo_ic) << ','
       << fmt_full(cell.in_mse) << ',' << fmt_full(cell.in_interval_score)
       << ',' << fmt_full(cell.out_interval_score) << ','
       << fmt_full(cell.max_rhat) << ',' << cell.n_divergent << ','
       << int(cell.failed) << ',' << csv_escape(cell.error) << '\n';
  }
}

void write_study_aggregates_csv(std::ostream& os, const StudyResult& result) {
  os << "method,n_ok,mean_waic,se_waic,mean_loo,se_loo,mean_mse,se_mse,"
        "mean_is,se_is,mean_out_is,se_out_is\n";
  for (const MethodAggregate& agg : result.aggregates) {
    os << to_string(agg.method) << ',' << agg.n_ok << ','
       << fmt_full(agg.mean_waic) << ',' << fmt_full(agg.se_waic) << ','
       << fmt_full(agg.mean_loo) << ',' << fmt_full(agg.se_loo) << ','
       << fmt_full(agg.mean_mse) << ',' << fmt_full(agg.se_mse) << ','
       << fmt_full(agg.mean_is) << ',' << fmt_full(agg.se_is) << ','
       << fmt_full(agg.mean_out_is) << ',' << fmt_full(agg.se_out_is) << '\n';
  }
}

void write_truth_csv(std::ostream& os, const TruthParams& truth,
                     const std::vector<std::string>& countries,
                     const CauseSet& causes) {
  os << "country,gold_cause,predicted_cause,phi\n";
  int C = causes.size();
  auto emit = [&](const std::string& label, const MisclassMatrix& m) {
    for (int i = 0; i < C; ++i) {
      for (int j = 0; j < C; ++j) {
        os << csv_escape(label) << ',' << csv_escape(causes.label(i)) << ','
           << csv_escape(causes.label(j)) << ',' << fmt_full(m.at(i, j))
           << '\n';
      }
    }
  };
  emit("pooled", truth.pooled);
  for (std::size_t s = 0; s < countries.size(); ++s) {
    emit(countries[s], truth.country[s]);
  }
}

}  // namespace miscal
