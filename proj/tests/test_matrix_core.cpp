#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "miscal/matrix.hpp"
#include "miscal/rng.hpp"

using namespace miscal;

namespace {

BaseParams random_interior_params(Rng& rng, int C) {
  BaseParams p;
  p.accuracy.resize(C);
  p.pull.resize(C);
  for (int i = 0; i < C; ++i) p.accuracy[i] = rng.uniform(0.05, 0.95);
  std::vector<double> conc(C, 2.0);
  rng.dirichlet(conc, p.pull);
  return p;
}

MisclassMatrix random_stochastic(Rng& rng, int C) {
  std::vector<std::vector<double>> rows(C, std::vector<double>(C));
  std::vector<double> conc(C, 1.0);
  for (auto& r : rows) rng.dirichlet(conc, r);
  return MisclassMatrix::from_rows(rows);
}

}  // namespace

TEST_CASE("cause set rejects duplicates and resolves labels") {
  CauseSet cs({"stroke", "sepsis", "other"});
  CHECK(cs.size() == 3);
  CHECK(cs.index_of("sepsis") == 1);
  CHECK(cs.index_of("missing") == -1);
  CHECK_THROWS_AS(CauseSet({"a", "a"}), std::invalid_argument);
  CHECK_THROWS_AS(CauseSet({"a", ""}), std::invalid_argument);
}

TEST_CASE("count matrix bookkeeping") {
  CountMatrix t(3);
  t.set(0, 1, 4);
  t.add(0, 1, 2);
  t.set(2, 2, 5);
  CHECK(t.at(0, 1) == 6);
  CHECK(t.row_total(0) == 6);
  CHECK(t.total() == 11);
  CHECK_THROWS_AS(t.set(0, 0, -1), std::invalid_argument);
  CHECK_THROWS_AS(t.at(3, 0), std::out_of_range);
  CHECK_THROWS_AS(CountMatrix::from_rows({{1, 2}, {3}}), std::invalid_argument);
}

TEST_CASE("pool sums cells and rejects mixed dimensions") {
  CountMatrix a = CountMatrix::from_rows({{1, 2}, {3, 4}});
  CountMatrix b = CountMatrix::from_rows({{10, 0}, {0, 10}});
  std::vector<CountMatrix> ms{a, b};
  CountMatrix p = pool(ms);
  CHECK(p.at(0, 0) == 11);
  CHECK(p.at(0, 1) == 2);
  CHECK(p.at(1, 1) == 14);
  std::vector<CountMatrix> bad{a, CountMatrix(3)};
  CHECK_THROWS_AS(pool(bad), std::invalid_argument);
  CHECK_THROWS_AS(pool(std::span<const CountMatrix>{}), std::invalid_argument);
}

TEST_CASE("misclass matrix validates rows") {
  CHECK_THROWS_AS(MisclassMatrix::from_rows({{0.5, 0.4}, {0.1, 0.9}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(MisclassMatrix::from_rows({{1.2, -0.2}, {0.1, 0.9}}),
                  std::invalid_argument);
  MisclassMatrix ok = MisclassMatrix::from_rows({{0.25, 0.75}, {0.0, 1.0}});
  CHECK(ok.at(0, 1) == doctest::Approx(0.75));
}

TEST_CASE("base matrix matches hand-computed two-cause case") {
  // a = (0.6, 0.5), alpha = (0.2, 0.8):
  // row 1: 0.6 + 0.4*0.2 = 0.68, 0.4*0.8 = 0.32
  // row 2: 0.5*0.2 = 0.10, 0.5 + 0.5*0.8 = 0.90
  BaseParams p;
  p.accuracy = {0.6, 0.5};
  p.pull = {0.2, 0.8};
  MisclassMatrix m = build_base_matrix(p);
  CHECK(m.at(0, 0) == doctest::Approx(0.68).epsilon(1e-12));
  CHECK(m.at(0, 1) == doctest::Approx(0.32).epsilon(1e-12));
  CHECK(m.at(1, 0) == doctest::Approx(0.10).epsilon(1e-12));
  CHECK(m.at(1, 1) == doctest::Approx(0.90).epsilon(1e-12));
}

TEST_CASE("base matrix rows are stochastic for random interior parameters") {
  Rng rng(20260817, 1);
  for (int rep = 0; rep < 50; ++rep) {
    int C = 2 + static_cast<int>(rng.below(5));
    BaseParams p = random_interior_params(rng, C);
    MisclassMatrix m = build_base_matrix(p);
    for (int i = 0; i < C; ++i) {
      double sum = 0.0;
      for (int j = 0; j < C; ++j) sum += m.at(i, j);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(m.at(i, i) >= p.accuracy[i]);
    }
  }
}

TEST_CASE("base matrix validates inputs") {
  BaseParams p;
  p.accuracy = {0.5, 0.5};
  p.pull = {0.5, 0.6};
  CHECK_THROWS_AS(build_base_matrix(p), std::invalid_argument);
  p.pull = {0.5, 0.5};
  p.accuracy = {0.5, 1.5};
  CHECK_THROWS_AS(build_base_matrix(p), std::invalid_argument);
  p.accuracy = {0.5};
  CHECK_THROWS_AS(build_base_matrix(p), std::invalid_argument);
}

TEST_CASE("relative false positives of a shared attraction vector") {
  // alpha = (0.5, 0.3, 0.2): row 1 is (0.3, 0.2)/0.5 = (0.6, 0.4).
  std::vector<double> pull{0.5, 0.3, 0.2};
  auto rows = base_rel_fp(pull);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0][0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rows[0][1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rows[1][0] == doctest::Approx(0.5 / 0.7).epsilon(1e-12));
  CHECK(rows[1][1] == doctest::Approx(0.2 / 0.7).epsilon(1e-12));
  CHECK(rows[2][0] == doctest::Approx(0.5 / 0.8).epsilon(1e-12));
  CHECK(rows[2][1] == doctest::Approx(0.3 / 0.8).epsilon(1e-12));
  std::vector<double> degenerate{1.0, 0.0};
  CHECK_THROWS_AS(base_rel_fp(degenerate), std::invalid_argument);
}

TEST_CASE("rel_fp of a base matrix equals base_rel_fp of its pull") {
  Rng rng(20260817, 2);
  for (int rep = 0; rep < 20; ++rep) {
    int C = 3 + static_cast<int>(rng.below(4));
    BaseParams p = random_interior_params(rng, C);
    MisclassMatrix m = build_base_matrix(p);
    SensRelFP parts = decompose(m);
    auto expected = base_rel_fp(p.pull);
    for (int i = 0; i < C; ++i) {
      REQUIRE(!parts.degenerate[i]);
      for (int jj = 0; jj < C - 1; ++jj)
        CHECK(parts.rel_fp[i][jj] ==
              doctest::Approx(expected[i][jj]).epsilon(1e-10));
    }
  }
}

TEST_CASE("decompose and recompose round-trip") {
  Rng rng(20260817, 3);
  for (int rep = 0; rep < 50; ++rep) {
    int C = 2 + static_cast<int>(rng.below(5));
    MisclassMatrix m = random_stochastic(rng, C);
    SensRelFP parts = decompose(m);
    MisclassMatrix back = recompose(parts);
    for (int i = 0; i < C; ++i) {
      double qsum = 0.0;
      for (double q : parts.rel_fp[i]) qsum += q;
      CHECK(qsum == doctest::Approx(1.0).epsilon(1e-12));
      for (int j = 0; j < C; ++j)
        CHECK(back.at(i, j) == doctest::Approx(m.at(i, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("decompose flags rows without error mass") {
  MisclassMatrix m = MisclassMatrix::from_rows(
      {{1.0, 0.0, 0.0}, {0.1, 0.8, 0.1}, {0.0, 0.3, 0.7}});
  SensRelFP parts = decompose(m);
  CHECK(parts.degenerate[0]);
  CHECK(parts.rel_fp[0].empty());
  CHECK(!parts.degenerate[1]);
  CHECK(parts.rel_fp[2][0] == doctest::Approx(0.0));
  CHECK(parts.rel_fp[2][1] == doctest::Approx(1.0));
}

TEST_CASE("recompose rejects a flagged row with sensitivity below 1") {
  SensRelFP parts;
  parts.sensitivity = {0.9, 1.0};
  parts.rel_fp = {{}, {}};
  parts.degenerate = {true, true};
  CHECK_THROWS_AS(recompose(parts), std::invalid_argument);
  parts.sensitivity = {1.0, 1.0};
  MisclassMatrix id = recompose(parts);
  CHECK(id.at(0, 0) == 1.0);
  CHECK(id.at(0, 1) == 0.0);
  CHECK(id.at(1, 1) == 1.0);
}

TEST_CASE("odds table is flat on shared-attraction matrices") {
  Rng rng(20260817, 4);
  for (int rep = 0; rep < 20; ++rep) {
    int C = 3 + static_cast<int>(rng.below(4));
    MisclassMatrix m = build_base_matrix(random_interior_params(rng, C));
    OddsTable table = odds_table(m);
    CHECK(static_cast<int>(table.pairs.size()) == C * (C - 1) / 2);
    for (const auto& pair : table.pairs) {
      CHECK(static_cast<int>(pair.rows.size()) == C - 2);
      REQUIRE(pair.spread.has_value());
      CHECK(*pair.spread == doctest::Approx(0.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("odds table is empty for two causes") {
  MisclassMatrix m = MisclassMatrix::from_rows({{0.7, 0.3}, {0.2, 0.8}});
  CHECK(odds_table(m).pairs.empty());
}

TEST_CASE("odds table detects a non-base matrix") {
  // Row-specific error profiles: odds of column 2 vs 3 differ across rows.
  MisclassMatrix m = MisclassMatrix::from_rows({{0.8, 0.15, 0.05},
                                                {0.1, 0.8, 0.1},
                                                {0.3, 0.1, 0.6}});
  OddsTable table = odds_table(m);
  // Pair (1, 2): rows 0 has log(0.15/0.05) = log 3; pair (0, 1): row 2 has
  // log(0.3/0.1) = log 3.
  bool found = false;
  for (const auto& pair : table.pairs) {
    if (pair.j == 1 && pair.k == 2) {
      REQUIRE(pair.log_odds.size() == 1);
      REQUIRE(pair.log_odds[0].has_value());
      CHECK(*pair.log_odds[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("odds table from counts leaves empty cells unset") {
  // Column 1 (index 0) is never predicted: every pair touching it is unset.
  CountMatrix t = CountMatrix::from_rows(
      {{0, 10, 5}, {0, 20, 4}, {0, 6, 9}});
  OddsTable table = odds_table(t);
  for (const auto& pair : table.pairs) {
    if (pair.j == 0) {
      for (const auto& v : pair.log_odds) CHECK(!v.has_value());
      CHECK(!pair.spread.has_value());
    }
    if (pair.j == 1 && pair.k == 2) {
      REQUIRE(pair.log_odds.size() == 1);
      REQUIRE(pair.log_odds[0].has_value());
      CHECK(*pair.log_odds[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("odds table from counts with an empty gold row") {
  CountMatrix t = CountMatrix::from_rows(
      {{0, 0, 0}, {3, 20, 4}, {2, 6, 9}});
  OddsTable table = odds_table(t);
  for (const auto& pair : table.pairs) {
    if (pair.j == 1 && pair.k == 2) {
      // Only gold row 0 feeds this pair and it is empty.
      REQUIRE(pair.log_odds.size() == 1);
      CHECK(!pair.log_odds[0].has_value());
      CHECK(!pair.spread.has_value());
    }
  }
}

TEST_CASE("base parameters are recovered exactly from their matrix") {
  Rng rng(20260817, 5);
  for (int rep = 0; rep < 50; ++rep) {
    int C = 3 + static_cast<int>(rng.below(4));
    BaseParams p = random_interior_params(rng, C);
    MisclassMatrix m = build_base_matrix(p);
    auto rec = recover_base_params(m);
    REQUIRE(rec.has_value());
    for (int i = 0; i < C; ++i) {
      CHECK(rec->accuracy[i] == doctest::Approx(p.accuracy[i]).epsilon(1e-9));
      CHECK(rec->pull[i] == doctest::Approx(p.pull[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("recovery refuses matrices off the shared-attraction family") {
  MisclassMatrix m = MisclassMatrix::from_rows({{0.8, 0.15, 0.05},
                                                {0.1, 0.8, 0.1},
                                                {0.3, 0.1, 0.6}});
  CHECK(!recover_base_params(m).has_value());
  MisclassMatrix two = MisclassMatrix::from_rows({{0.7, 0.3}, {0.2, 0.8}});
  CHECK(!recover_base_params(two).has_value());
}

TEST_CASE("recovery needs the reference cells to be populated") {
  // alpha puts zero mass on the last cause, so the reference column is empty.
  BaseParams p;
  p.accuracy = {0.5, 0.5, 0.5};
  p.pull = {0.6, 0.4, 0.0};
  MisclassMatrix m = build_base_matrix(p);
  CHECK(!recover_base_params(m).has_value());
}
