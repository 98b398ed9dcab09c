#ifndef MISCAL_DIAGNOSTICS_HPP
#define MISCAL_DIAGNOSTICS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "miscal/sampler.hpp"

namespace miscal {

// Convergence summary of one scalar across chains.  rhat is NaN when only
// one chain was run; constant sequences report rhat 1 and full-size ess.
struct ScalarDiagnostic {
  std::string name;
  double rhat = 0.0;
  double ess_bulk = 0.0;
  bool constant = false;
};

struct Diagnostics {
  std::vector<ScalarDiagnostic> params;
  double max_rhat = 0.0;   // NaN when unavailable
  double min_ess = 0.0;
  std::int64_t n_divergent = 0;
  double divergence_rate = 0.0;
  bool rhat_available = true;
  std::vector<std::string> warnings;
};

// Potential scale reduction on rank-normalised split chains.  draws holds
// n_chains contiguous blocks of equal length.
double split_rhat(std::span<const double> draws, int n_chains);

// Bulk effective sample size: rank-normalised split chains, autocovariances
// combined across chains, truncated by the initial monotone positive pair
// sequence.  Capped at the total number of draws.
double ess_bulk(std::span<const double> draws, int n_chains);

Diagnostics diagnose(const PosteriorDraws& draws);

}  // namespace miscal

#endif
