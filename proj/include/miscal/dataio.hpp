#ifndef MISCAL_DATAIO_HPP
#define MISCAL_DATAIO_HPP

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "miscal/analysis.hpp"
#include "miscal/diagnostics.hpp"
#include "miscal/matrix.hpp"
#include "miscal/sampler.hpp"
#include "miscal/simulate.hpp"

namespace miscal {

// Failure while reading tabular input. `line` is the 1-based physical line
// where the offending record starts, or 0 when no line applies.
class CsvError : public std::runtime_error {
 public:
  CsvError(int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

// One comma-separated record and the physical line it starts on. Quoted
// fields may contain commas, doubled quotes, and line breaks.
struct CsvRecord {
  int line = 0;
  std::vector<std::string> fields;
};

// Whole-text reader with RFC-4180 quoting; LF and CRLF both accepted and
// blank lines skipped. Throws CsvError on an unterminated quote or on
// content following a closing quote.
std::vector<CsvRecord> parse_csv(std::string_view text);

// Quotes a field only when it contains a comma, quote, or line break.
std::string csv_escape(std::string_view field);

// Shortest full-precision decimal form: 17 significant digits round-trip
// any double, so emitted tables diff and re-read exactly.
std::string fmt_full(double x);

// FNV-1a 64-bit over raw bytes; manifests record it so a rerun can verify
// it consumed the same input.
std::uint64_t fnv1a64(std::string_view bytes);

// Long-format paired counts: one record per (country, gold, predicted)
// cell, dense per-country matrices after ingestion.
struct LongFormatData {
  CauseSet causes;
  std::vector<std::string> countries;
  std::vector<CountMatrix> counts;  // aligned with `countries`
  std::int64_t n_records = 0;       // data records consumed
  std::uint64_t checksum = 0;       // fnv1a64 of the raw text
};

// Parses records under the header `country,gold_cause,predicted_cause,count`.
// An optional record `causes,<label>,...` ahead of the header fixes the
// cause order and closes the label set; otherwise causes are collected in
// first-appearance order (gold before predicted within a record) and
// countries likewise. Absent cells are zero. Duplicate triples, negative or
// non-integer counts, ragged records, and labels outside a declared cause
// list are all rejected with the offending line number. The country label
// "pooled" is reserved for report output.
LongFormatData ingest_counts(std::string_view text);
LongFormatData ingest_counts_file(const std::string& path);

// Inverse of ingest_counts: causes record, column header, then every cell
// including zeros, in stored order. Re-ingesting the output reproduces the
// LongFormatData exactly (up to the checksum, which hashes the new text).
void write_counts_csv(std::ostream& os, const LongFormatData& data);

void write_summary_csv(std::ostream& os, const SummaryTable& table);

// Posterior summary of one matrix cell for report tables.
struct CellSummary {
  std::string country, gold, predicted;
  double mean = 0, q2_5 = 0, q97_5 = 0;
};

// Cell summaries for every matrix a fit reports: the pooled matrix first
// (country label "pooled"), then each data country. Variants without
// country-level matrices repeat the pooled cells for every country, which
// is exactly the matrix those models assign them.
std::vector<CellSummary> matrix_cell_summaries(const PosteriorDraws& draws);

// Cell summaries of extrapolated draws for one unseen country.
std::vector<CellSummary> predictive_cell_summaries(const PredictiveDraws& pred,
                                                   const std::string& country);

void write_matrices_csv(std::ostream& os,
                        const std::vector<CellSummary>& cells);

void write_comparison_csv(std::ostream& os, const ComparisonMetrics& m);

// Long-format convergence table: per-scalar rhat and ess_bulk rows, then
// per-chain and total divergence counts, then the global extremes.
void write_diagnostics_csv(std::ostream& os, const Diagnostics& d,
                           const std::vector<ChainStats>& chains);

// Log-odds structure diagnostic, one labelled table per count matrix
// (typically the pooled counts first, then each country).
void write_odds_csv(
    std::ostream& os, const CauseSet& causes,
    const std::vector<std::pair<std::string, OddsTable>>& tables);

// Full draw dump: chain, draw, divergent flag, then every reported scalar
// at full precision.
void write_draws_csv(std::ostream& os, const PosteriorDraws& draws);

// Draw dump reduced to the parts a summary needs.
struct DrawsFile {
  std::vector<std::string> names;
  int n_chains = 0, n_draws = 0;
  std::vector<double> values;  // [chain][draw][names]
  std::vector<std::uint8_t> divergent;
};

// Reads a table produced by write_draws_csv; the layout must be chain-major
// with per-chain draw indices counting up from 0.
DrawsFile read_draws_csv(std::string_view text);

void write_study_cells_csv(std::ostream& os, const StudyResult& result);
void write_study_aggregates_csv(std::ostream& os, const StudyResult& result);

// Generating truth of a study: pooled matrix plus each country's matrix.
void write_truth_csv(std::ostream& os, const TruthParams& truth,
                     const std::vector<std::string>& countries,
                     const CauseSet& causes);

}  // namespace miscal

#endif
