#ifndef MISCAL_MATRIX_HPP
#define MISCAL_MATRIX_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace miscal {

// Row sums of a misclassification matrix must match 1 within this tolerance.
inline constexpr double kRowSumTol = 1e-12;

// Ordered set of cause-of-death labels; the order fixes matrix indices for
// the lifetime of an analysis.
class CauseSet {
 public:
  CauseSet() = default;
  // Labels must be unique and non-empty.
  explicit CauseSet(std::vector<std::string> labels);

  int size() const { return static_cast<int>(labels_.size()); }
  const std::string& label(int i) const { return labels_.at(i); }
  const std::vector<std::string>& labels() const { return labels_; }
  // -1 when the label is absent.
  int index_of(const std::string& label) const;

  bool operator==(const CauseSet&) const = default;

 private:
  std::vector<std::string> labels_;
};

// C x C table of paired counts: rows index the gold-standard cause, columns
// the predicted cause.
class CountMatrix {
 public:
  CountMatrix() = default;
  explicit CountMatrix(int dim);
  static CountMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);

  int dim() const { return dim_; }
  std::int64_t at(int i, int j) const { return cells_[idx(i, j)]; }
  void set(int i, int j, std::int64_t v);
  void add(int i, int j, std::int64_t v);
  std::int64_t row_total(int i) const;
  std::int64_t total() const;

  bool operator==(const CountMatrix&) const = default;

 private:
  std::size_t idx(int i, int j) const;

  int dim_ = 0;
  std::vector<std::int64_t> cells_;
};

// Cell-wise sum; all matrices must share one dimension. Caller is
// responsible for having aligned every matrix to one CauseSet order.
CountMatrix pool(std::span<const CountMatrix> per_country);

// Row-stochastic C x C matrix: entry (i, j) is the probability that a death
// from gold cause i is assigned predicted cause j.
class MisclassMatrix {
 public:
  MisclassMatrix() = default;
  // Validates entries in [0, 1] and row sums within kRowSumTol of 1.
  static MisclassMatrix from_rows(const std::vector<std::vector<double>>& rows);

  int dim() const { return dim_; }
  double at(int i, int j) const { return cells_[idx(i, j)]; }
  const std::vector<double>& data() const { return cells_; }

 private:
  std::size_t idx(int i, int j) const;

  int dim_ = 0;
  std::vector<double> cells_;
};

// Intrinsic-accuracy / attraction parameterisation of a matrix whose rows
// share one attraction profile: cause i keeps its own label with
// probability a_i + (1 - a_i) * alpha_i and drifts to j with probability
// (1 - a_i) * alpha_j.
struct BaseParams {
  std::vector<double> accuracy;  // a_i in [0, 1]
  std::vector<double> pull;      // alpha on the simplex

  // Throws std::invalid_argument on size mismatch, out-of-range accuracy,
  // or pull off the simplex.
  void validate() const;
};

MisclassMatrix build_base_matrix(const BaseParams& params);

// Relative false-positive profile implied by a shared attraction vector:
// row i holds alpha_j / (1 - alpha_i) for j != i in ascending j order.
// Requires every alpha_i < 1.
std::vector<std::vector<double>> base_rel_fp(std::span<const double> pull);

// Sensitivity / relative-false-positive decomposition. rel_fp[i] holds the
// conditional error profile q_ij for j != i in ascending j order; rows with
// no off-diagonal mass are flagged degenerate and carry an empty profile.
struct SensRelFP {
  std::vector<double> sensitivity;
  std::vector<std::vector<double>> rel_fp;
  std::vector<bool> degenerate;
};

SensRelFP decompose(const MisclassMatrix& m);
// Inverse of decompose up to row-sum tolerance. A degenerate row must carry
// sensitivity 1; otherwise there is no profile to spread the error mass over.
MisclassMatrix recompose(const SensRelFP& parts);

// Log odds log(p_ij / p_ik) tabulated over gold rows i != j, k for each
// unordered column pair j < k. Under the shared-attraction model every
// in-pair entry is constant across i, so the per-pair spread (max - min)
// measures departure from that structure. Entries with an empty numerator
// or denominator are left unset; a pair with no usable entries has an
// unset spread. Needs at least three causes to be informative; for C == 2
// the table is empty.
struct OddsTable {
  struct Pair {
    int j = 0, k = 0;
    // One slot per gold row i != j, k, ascending i.
    std::vector<int> rows;
    std::vector<std::optional<double>> log_odds;
    std::optional<double> spread;
  };
  std::vector<Pair> pairs;
};

OddsTable odds_table(const MisclassMatrix& m);
// Plug-in version from raw counts: p_ij is estimated by t_ij / n_i, and
// entries touching an empty cell or row are left unset.
OddsTable odds_table(const CountMatrix& t);

// Exact inversion of build_base_matrix. Returns nullopt when the matrix
// does not carry the shared-attraction structure (odds vary across rows),
// when C < 3, or when a required cell is zero. Matrices produced by
// build_base_matrix from interior parameters always invert.
std::optional<BaseParams> recover_base_params(const MisclassMatrix& m);

}  // namespace miscal

#endif
