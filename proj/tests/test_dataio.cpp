#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "miscal/dataio.hpp"
#include "miscal/sampler.hpp"

using namespace miscal;

namespace {

// Hand-built draw container with one reported matrix per name block.
PosteriorDraws make_draws(Variant variant,
                          const std::vector<std::string>& names,
                          int n_chains, int n_draws,
                          const std::vector<double>& values) {
  PosteriorDraws d;
  d.variant = variant;
  d.causes = CauseSet({"c1", "c2"});
  d.countries = {"u", "v"};
  d.names = names;
  d.n_chains = n_chains;
  d.n_draws = n_draws;
  d.values = values;
  d.divergent.assign(static_cast<std::size_t>(n_chains) * n_draws, 0);
  return d;
}

}  // namespace

TEST_CASE("csv parser splits quoted fields, escaped quotes, and CRLF") {
  auto records = parse_csv("a,b,c\n\"x,y\",z\n\"he said \"\"hi\"\"\",2\n");
  REQUIRE(records.size() == 3);
  CHECK(records[0].fields == std::vector<std::string>{"a", "b", "c"});
  CHECK(records[1].fields == std::vector<std::string>{"x,y", "z"});
  CHECK(records[2].fields == std::vector<std::string>{"he said \"hi\"", "2"});
  CHECK(records[0].line == 1);
  CHECK(records[2].line == 3);

  auto crlf = parse_csv("a,b\r\nc,d\r\n");
  REQUIRE(crlf.size() == 2);
  CHECK(crlf[0].fields == std::vector<std::string>{"a", "b"});
  CHECK(crlf[1].fields == std::vector<std::string>{"c", "d"});

  // A quoted field may span physical lines; the next record still reports
  // the physical line it starts on.
  auto multi = parse_csv("\"one\ntwo\",3\nnext,4\n");
  REQUIRE(multi.size() == 2);
  CHECK(multi[0].fields[0] == "one\ntwo");
  CHECK(multi[1].line == 3);

  // Blank lines separate records without producing empty ones, and a final
  // record without a trailing newline is kept.
  auto blanks = parse_csv("a\n\n\nb");
  REQUIRE(blanks.size() == 2);
  CHECK(blanks[1].fields == std::vector<std::string>{"b"});
  CHECK(blanks[1].line == 4);

  // An explicitly quoted empty field is content, not a blank line.
  auto quoted_empty = parse_csv("\"\"\n");
  REQUIRE(quoted_empty.size() == 1);
  CHECK(quoted_empty[0].fields == std::vector<std::string>{""});
}

TEST_CASE("csv parser rejects malformed quoting with line numbers") {
  CHECK_THROWS_WITH_AS(parse_csv("a\"b,c\n"),
                       "line 1: stray quote inside a field", CsvError);
  CHECK_THROWS_WITH_AS(parse_csv("ok,1\n\"ab\"x,c\n"),
                       "line 2: content after a closing quote", CsvError);
  CHECK_THROWS_AS(parse_csv("\"abc"), CsvError);
  try {
    parse_csv("x,y\n\"abc");
  } catch (const CsvError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("full-precision formatting round-trips doubles") {
  CHECK(fmt_full(1.0) == "1");
  CHECK(fmt_full(0.25) == "0.25");
  CHECK(fmt_full(0.1) == "0.10000000000000001");
  double third = 1.0 / 3.0;
  CHECK(std::stod(fmt_full(third)) == third);
  CHECK(fmt_full(std::nan("")) == "nan");
}

TEST_CASE("checksum matches the published fnv1a64 test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("ingest builds per-country matrices with absent cells zero") {
  std::string text =
      "country,gold_cause,predicted_cause,count\n"
      "kenya,flu,flu,10\n"
      "kenya,flu,tb,2\n"
      "kenya,tb,tb,7\n"
      "peru,tb,flu,1\n"
      "peru,flu,flu,5\n";
  LongFormatData data = ingest_counts(text);
  CHECK(data.n_records == 5);
  CHECK(data.checksum == fnv1a64(text));
  // First appearance fixes the order: flu before tb, kenya before peru.
  CHECK(data.causes.labels() == std::vector<std::string>{"flu", "tb"});
  CHECK(data.countries == std::vector<std::string>{"kenya", "peru"});
  REQUIRE(data.counts.size() == 2);
  CHECK(data.counts[0].at(0, 0) == 10);
  CHECK(data.counts[0].at(0, 1) == 2);
  CHECK(data.counts[0].at(1, 1) == 7);
  CHECK(data.counts[0].at(1, 0) == 0);
  CHECK(data.counts[1].at(1, 0) == 1);
  CHECK(data.counts[1].at(0, 0) == 5);
  CHECK(data.counts[0].total() == 19);
  CHECK(data.counts[1].total() == 6);
}

TEST_CASE("ingest honors a leading causes record and closes the label set") {
  std::string text =
      "causes,stroke,flu,tb\n"
      "country,gold_cause,predicted_cause,count\n"
      "x,tb,flu,4\n";
  LongFormatData data = ingest_counts(text);
  CHECK(data.causes.labels() ==
        std::vector<std::string>{"stroke", "flu", "tb"});
  CHECK(data.counts[0].at(2, 1) == 4);
  CHECK(data.counts[0].at(0, 0) == 0);

  CHECK_THROWS_AS(ingest_counts("causes,a,b\n"
                                "country,gold_cause,predicted_cause,count\n"
                                "x,a,zebra,1\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("causes,a,a\n"
                                "country,gold_cause,predicted_cause,count\n"
                                "x,a,a,1\n"),
                  CsvError);
}

TEST_CASE("ingest rejects malformed input and names the offending line") {
  std::string dup =
      "country,gold_cause,predicted_cause,count\n"
      "x,a,b,1\n"
      "x,a,b,2\n";
  CHECK_THROWS_WITH_AS(ingest_counts(dup),
                       "line 3: duplicate record for (x, a, b)", CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold_cause,predicted_cause,count\n"
                                "x,a,b,-3\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold_cause,predicted_cause,count\n"
                                "x,a,b,3.5\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold_cause,predicted_cause,count\n"
                                "x,a,b\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold,predicted,count\nx,a,b,1\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold_cause,predicted_cause,count\n"
                                "pooled,a,b,1\n"),
                  CsvError);
  CHECK_THROWS_AS(ingest_counts("country,gold_cause,predicted_cause,count\n"),
                  CsvError);
}

TEST_CASE("count emission is a lossless inverse of ingest") {
  std::string text =
      "country,gold_cause,predicted_cause,count\n"
      "kenya,flu,flu,10\n"
      "kenya,flu,tb,2\n"
      "kenya,tb,tb,7\n"
      "peru,tb,flu,1\n"
      "peru,flu,flu,5\n";
  LongFormatData data = ingest_counts(text);
  std::ostringstream os;
  write_counts_csv(os, data);
  std::string emitted = os.str();
  // The writer pins the cause order and lists every cell, zeros included.
  CHECK(emitted.rfind("causes,flu,tb\n", 0) == 0);
  CHECK(emitted.find("kenya,tb,flu,0\n") != std::string::npos);
  LongFormatData back = ingest_counts(emitted);
  CHECK(back.causes.labels() == data.causes.labels());
  CHECK(back.countries == data.countries);
  CHECK(back.counts == data.counts);
  // A second emission of the re-ingested data is byte-identical.
  std::ostringstream os2;
  write_counts_csv(os2, back);
  CHECK(os2.str() == emitted);
}

TEST_CASE("draw dumps round-trip exactly") {
  std::vector<std::string> names{"accuracy.c1", "omega_pool"};
  std::vector<double> values;
  for (int k = 0; k < 12; ++k) values.push_back(0.1 * k + 1.0 / 3.0);
  PosteriorDraws d =
      make_draws(Variant::kHomogeneous, names, 2, 3, values);
  d.divergent = {0, 1, 0, 0, 0, 1};

  std::ostringstream os;
  write_draws_csv(os, d);
  DrawsFile file = read_draws_csv(os.str());
  CHECK(file.names == names);
  CHECK(file.n_chains == 2);
  CHECK(file.n_draws == 3);
  CHECK(file.values == values);
  CHECK(file.divergent == d.divergent);
}

TEST_CASE("draw dump reader rejects inconsistent layouts") {
  std::string ok =
      "chain,draw,divergent,x\n"
      "0,0,0,1\n0,1,0,2\n1,0,0,3\n1,1,0,4\n";
  CHECK(read_draws_csv(ok).n_draws == 2);
  CHECK_THROWS_AS(read_draws_csv("chain,draw,divergent,x\n"
                                 "0,0,0,1\n1,0,0,2\n0,1,0,3\n"),
                  CsvError);
  CHECK_THROWS_AS(read_draws_csv("chain,draw,divergent,x\n"
                                 "0,0,0,1\n0,1,0,2\n1,0,0,3\n"),
                  CsvError);
  CHECK_THROWS_AS(read_draws_csv("chain,draw,divergent,x\n0,0,2,1\n"),
                  CsvError);
  CHECK_THROWS_AS(read_draws_csv("draw,divergent,x\n0,0,1\n"), CsvError);
  CHECK_THROWS_AS(read_draws_csv("chain,draw,divergent,x\n"), CsvError);
}

TEST_CASE("matrix summaries list pooled first and repeat it for pooled-only "
          "variants") {
  // C = 2: pooled block is phi.pooled.{c1,c2}x{c1,c2}, 4 names. One chain,
  // four draws with a known mean and type-7 quantiles.
  std::vector<std::string> names{"phi.pooled.c1.c1", "phi.pooled.c1.c2",
                                 "phi.pooled.c2.c1", "phi.pooled.c2.c2"};
  std::vector<double> values;
  for (int d = 0; d < 4; ++d) {
    double base = 0.1 * (d + 1);
    values.insert(values.end(), {base, 1.0 - base, base + 0.01, 0.99 - base});
  }
  PosteriorDraws hom = make_draws(Variant::kHomogeneous, names, 1, 4, values);
  std::vector<CellSummary> cells = matrix_cell_summaries(hom);
  // pooled + two countries, 4 cells each.
  REQUIRE(cells.size() == 12);
  CHECK(cells[0].country == "pooled");
  CHECK(cells[0].gold == "c1");
  CHECK(cells[0].predicted == "c1");
  CHECK(cells[0].mean == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(cells[0].q2_5 == doctest::Approx(0.1075).epsilon(1e-12));
  CHECK(cells[0].q97_5 == doctest::Approx(0.3925).epsilon(1e-12));
  CHECK(cells[4].country == "u");
  CHECK(cells[8].country == "v");
  // Pooled-only variants repeat the pooled cells for every country.
  CHECK(cells[4].mean == cells[0].mean);
  CHECK(cells[8].q97_5 == cells[0].q97_5);

  // A variant with country matrices reports them from its own name blocks.
  std::vector<std::string> het_names = names;
  for (const char* c : {"u", "v"}) {
    for (const char* gi : {"c1", "c2"}) {
      for (const char* pj : {"c1", "c2"}) {
        het_names.push_back(std::string("phi.") + c + "." + gi + "." + pj);
      }
    }
  }
  std::vector<double> het_values;
  for (int d = 0; d < 4; ++d) {
    for (int k = 0; k < 12; ++k) het_values.push_back(0.01 * k + 0.05 * d);
  }
  PosteriorDraws het =
      make_draws(Variant::kPartlyHet, het_names, 1, 4, het_values);
  std::vector<CellSummary> het_cells = matrix_cell_summaries(het);
  REQUIRE(het_cells.size() == 12);
  CHECK(het_cells[4].country == "u");
  // Mean of the phi.u.c1.c1 series {0.04, 0.09, 0.14, 0.19}.
  CHECK(het_cells[4].mean == doctest::Approx(0.115).epsilon(1e-12));
  CHECK(het_cells[4].mean != het_cells[0].mean);
}

TEST_CASE("writers emit the documented headers") {
  {
    std::ostringstream os;
    write_summary_csv(os, SummaryTable{});
    CHECK(os.str() == "name,mean,sd,q2_5,q25,q50,q75,q97_5\n");
  }
  {
    std::ostringstream os;
    write_matrices_csv(os, {});
    CHECK(os.str() == "country,gold_cause,predicted_cause,mean,q2_5,q97_5\n");
  }
  {
    std::ostringstream os;
    write_comparison_csv(os, ComparisonMetrics{});
    CHECK(os.str().rfind("metric,value,se\n", 0) == 0);
  }
  {
    std::ostringstream os;
    write_odds_csv(os, CauseSet({"a", "b"}), {});
    CHECK(os.str() == "country,predicted_j,predicted_k,gold,log_odds,spread\n");
  }
}

TEST_CASE("csv fields with separators or quotes are escaped on output") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_escape("two\nlines") == "\"two\nlines\"");

  // A country label with a comma survives a write/ingest cycle.
  LongFormatData data;
  data.causes = CauseSet({"a", "b"});
  data.countries = {"congo, dr"};
  data.counts.assign(1, CountMatrix(2));
  data.counts[0].set(0, 0, 3);
  data.counts[0].set(1, 1, 2);
  std::ostringstream os;
  write_counts_csv(os, data);
  LongFormatData back = ingest_counts(os.str());
  CHECK(back.countries == std::vector<std::string>{"congo, dr"});
  CHECK(back.counts[0].at(0, 0) == 3);
}
