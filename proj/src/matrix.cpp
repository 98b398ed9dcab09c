#include "miscal/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace miscal {

CauseSet::CauseSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw std::invalid_argument("CauseSet: empty label");
    if (!seen.insert(l).second)
      throw std::invalid_argument("CauseSet: duplicate label '" + l + "'");
  }
}

int CauseSet::index_of(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
}

CountMatrix::CountMatrix(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("CountMatrix: dim must be >= 1");
  cells_.assign(static_cast<std::size_t>(dim) * dim, 0);
}

CountMatrix CountMatrix::from_rows(
    const std::vector<std::vector<std::int64_t>>& rows) {
  CountMatrix m(static_cast<int>(rows.size()));
  for (int i = 0; i < m.dim_; ++i) {
    if (static_cast<int>(rows[i].size()) != m.dim_)
      throw std::invalid_argument("CountMatrix: ragged rows");
    for (int j = 0; j < m.dim_; ++j) m.set(i, j, rows[i][j]);
  }
  return m;
}

std::size_t CountMatrix::idx(int i, int j) const {
  if (i < 0 || i >= dim_ || j < 0 || j >= dim_)
    throw std::out_of_range("CountMatrix: index");
  return static_cast<std::size_t>(i) * dim_ + j;
}

void CountMatrix::set(int i, int j, std::int64_t v) {
  if (v < 0) throw std::invalid_argument("CountMatrix: negative count");
  cells_[idx(i, j)] = v;
}

void CountMatrix::add(int i, int j, std::int64_t v) {
  std::int64_t next = cells_[idx(i, j)] + v;
  if (next < 0) throw std::invalid_argument("CountMatrix: negative count");
  cells_[idx(i, j)] = next;
}

std::int64_t CountMatrix::row_total(int i) const {
  std::int64_t t = 0;
  for (int j = 0; j < dim_; ++j) t += at(i, j);
  return t;
}

std::int64_t CountMatrix::total() const {
  return std::accumulate(cells_.begin(), cells_.end(), std::int64_t{0});
}

CountMatrix pool(std::span<const CountMatrix> per_country) {
  if (per_country.empty()) throw std::invalid_argument("pool: no matrices");
  CountMatrix out(per_country.front().dim());
  for (const auto& m : per_country) {
    if (m.dim() != out.dim())
      throw std::invalid_argument("pool: dimension mismatch");
    for (int i = 0; i < out.dim(); ++i)
      for (int j = 0; j < out.dim(); ++j) out.add(i, j, m.at(i, j));
  }
  return out;
}

MisclassMatrix MisclassMatrix::from_rows(
    const std::vector<std::vector<double>>& rows) {
  MisclassMatrix m;
  m.dim_ = static_cast<int>(rows.size());
  if (m.dim_ < 1) throw std::invalid_argument("MisclassMatrix: dim must be >= 1");
  m.cells_.reserve(static_cast<std::size_t>(m.dim_) * m.dim_);
  for (int i = 0; i < m.dim_; ++i) {
    if (static_cast<int>(rows[i].size()) != m.dim_)
      throw std::invalid_argument("MisclassMatrix: ragged rows");
    double sum = 0.0;
    for (double p : rows[i]) {
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("MisclassMatrix: entry outside [0, 1]");
      sum += p;
      m.cells_.push_back(p);
    }
    if (std::abs(sum - 1.0) > kRowSumTol)
      throw std::invalid_argument("MisclassMatrix: row sum off by more than tolerance");
  }
  return m;
}

std::size_t MisclassMatrix::idx(int i, int j) const {
  if (i < 0 || i >= dim_ || j < 0 || j >= dim_)
    throw std::out_of_range("MisclassMatrix: index");
  return static_cast<std::size_t>(i) * dim_ + j;
}

void BaseParams::validate() const {
  if (accuracy.size() != pull.size() || accuracy.empty())
    throw std::invalid_argument("BaseParams: size mismatch");
  for (double a : accuracy)
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("BaseParams: accuracy outside [0, 1]");
  double sum = 0.0;
  for (double p : pull) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("BaseParams: pull outside [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kRowSumTol)
    throw std::invalid_argument("BaseParams: pull off the simplex");
}

MisclassMatrix build_base_matrix(const BaseParams& params) {
  params.validate();
  const int C = static_cast<int>(params.accuracy.size());
  std::vector<std::vector<double>> rows(C, std::vector<double>(C));
  for (int i = 0; i < C; ++i) {
    const double a = params.accuracy[i];
    for (int j = 0; j < C; ++j) rows[i][j] = (1.0 - a) * params.pull[j];
    rows[i][i] = a + (1.0 - a) * params.pull[i];
    // Renormalise away accumulated rounding so validation stays exact.
    double sum = std::accumulate(rows[i].begin(), rows[i].end(), 0.0);
    for (double& p : rows[i]) p /= sum;
  }
  return MisclassMatrix::from_rows(rows);
}

std::vector<std::vector<double>> base_rel_fp(std::span<const double> pull) {
  const int C = static_cast<int>(pull.size());
  if (C < 2) throw std::invalid_argument("base_rel_fp: need at least 2 causes");
  std::vector<std::vector<double>> rows(C);
  for (int i = 0; i < C; ++i) {
    const double denom = 1.0 - pull[i];
    if (!(denom > 0.0))
      throw std::invalid_argument("base_rel_fp: pull entry at 1 leaves an empty profile");
    rows[i].reserve(C - 1);
    for (int j = 0; j < C; ++j)
      if (j != i) rows[i].push_back(pull[j] / denom);
  }
  return rows;
}

SensRelFP decompose(const MisclassMatrix& m) {
  const int C = m.dim();
  SensRelFP parts;
  parts.sensitivity.resize(C);
  parts.rel_fp.resize(C);
  parts.degenerate.assign(C, false);
  for (int i = 0; i < C; ++i) {
    parts.sensitivity[i] = m.at(i, i);
    double off = 0.0;
    for (int j = 0; j < C; ++j)
      if (j != i) off += m.at(i, j);
    if (off <= 0.0) {
      parts.degenerate[i] = true;
      continue;
    }
    parts.rel_fp[i].reserve(C - 1);
    for (int j = 0; j < C; ++j)
      if (j != i) parts.rel_fp[i].push_back(m.at(i, j) / off);
  }
  return parts;
}

MisclassMatrix recompose(const SensRelFP& parts) {
  const int C = static_cast<int>(parts.sensitivity.size());
  if (static_cast<int>(parts.rel_fp.size()) != C ||
      static_cast<int>(parts.degenerate.size()) != C)
    throw std::invalid_argument("recompose: size mismatch");
  std::vector<std::vector<double>> rows(C, std::vector<double>(C, 0.0));
  for (int i = 0; i < C; ++i) {
    const double s = parts.sensitivity[i];
    if (!(s >= 0.0 && s <= 1.0))
      throw std::invalid_argument("recompose: sensitivity outside [0, 1]");
    rows[i][i] = s;
    if (parts.degenerate[i] || parts.rel_fp[i].empty()) {
      if (s != 1.0)
        throw std::invalid_argument(
            "recompose: row without a profile needs sensitivity 1");
      continue;
    }
    if (static_cast<int>(parts.rel_fp[i].size()) != C - 1)
      throw std::invalid_argument("recompose: profile row has wrong length");
    int jj = 0;
    for (int j = 0; j < C; ++j) {
      if (j == i) continue;
      rows[i][j] = (1.0 - s) * parts.rel_fp[i][jj++];
    }
  }
  return MisclassMatrix::from_rows(rows);
}

namespace {

template <class CellProb>
OddsTable odds_table_impl(int C, CellProb cell) {
  OddsTable table;
  if (C < 3) return table;
  for (int j = 0; j < C; ++j) {
    for (int k = j + 1; k < C; ++k) {
      OddsTable::Pair pair;
      pair.j = j;
      pair.k = k;
      for (int i = 0; i < C; ++i) {
        if (i == j || i == k) continue;
        pair.rows.push_back(i);
        double num = cell(i, j);
        double den = cell(i, k);
        if (num > 0.0 && den > 0.0)
          pair.log_odds.push_back(std::log(num / den));
        else
          pair.log_odds.push_back(std::nullopt);
      }
      double lo = 0.0, hi = 0.0;
      bool any = false;
      for (const auto& v : pair.log_odds) {
        if (!v) continue;
        if (!any) {
          lo = hi = *v;
          any = true;
        } else {
          lo = std::min(lo, *v);
          hi = std::max(hi, *v);
        }
      }
      if (any) pair.spread = hi - lo;
      table.pairs.push_back(std::move(pair));
    }
  }
  return table;
}

}  // namespace

OddsTable odds_table(const MisclassMatrix& m) {
  return odds_table_impl(m.dim(), [&](int i, int j) { return m.at(i, j); });
}

OddsTable odds_table(const CountMatrix& t) {
  std::vector<double> row_n(t.dim());
  for (int i = 0; i < t.dim(); ++i)
    row_n[i] = static_cast<double>(t.row_total(i));
  return odds_table_impl(t.dim(), [&](int i, int j) {
    return row_n[i] > 0.0 ? static_cast<double>(t.at(i, j)) / row_n[i] : 0.0;
  });
}

std::optional<BaseParams> recover_base_params(const MisclassMatrix& m) {
  const int C = m.dim();
  if (C < 3) return std::nullopt;
  const int ref = C - 1;
  // theta_j = alpha_j / alpha_ref, read off any gold row i outside {j, ref}.
  std::vector<double> theta(C);
  theta[ref] = 1.0;
  for (int j = 0; j < C; ++j) {
    if (j == ref) continue;
    int i = 0;
    while (i == j || i == ref) ++i;
    const double den = m.at(i, ref);
    if (!(den > 0.0)) return std::nullopt;
    theta[j] = m.at(i, j) / den;
  }
  double total = std::accumulate(theta.begin(), theta.end(), 0.0);
  BaseParams params;
  params.pull.resize(C);
  params.accuracy.resize(C);
  for (int j = 0; j < C; ++j) params.pull[j] = theta[j] / total;
  for (int i = 0; i < C; ++i) {
    const double alpha = params.pull[i];
    if (!(alpha < 1.0)) return std::nullopt;
    double a = (m.at(i, i) - alpha) / (1.0 - alpha);
    if (a < -1e-9 || a > 1.0 + 1e-9) return std::nullopt;
    params.accuracy[i] = std::clamp(a, 0.0, 1.0);
  }
  // Accept only if the candidate actually reproduces the input; this is what
  // rejects matrices whose odds vary across gold rows.
  MisclassMatrix rebuilt = build_base_matrix(params);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      if (std::abs(rebuilt.at(i, j) - m.at(i, j)) > 1e-9) return std::nullopt;
  return params;
}

}  // namespace miscal
