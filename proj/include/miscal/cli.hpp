#ifndef MISCAL_CLI_HPP
#define MISCAL_CLI_HPP

#include <string>
#include <vector>

#include "miscal/model.hpp"
#include "miscal/sampler.hpp"

namespace miscal {

// Process exit codes of the command-line front end.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // unexpected error
  kExitParse = 2,    // input data missing or malformed
  kExitConfig = 3,   // invalid configuration
  kExitSampler = 4,  // sampling failed
  kExitStrict = 5,   // --strict quality gate tripped
  kExitUsage = 64,   // unknown subcommand or malformed flags
};

// The --strict gate fails a fit whose convergence looks untrustworthy.
inline constexpr double kStrictMaxRhat = 1.01;
inline constexpr double kStrictMaxDivergenceRate = 0.01;

// Effective settings of one `fit` invocation: config-file fields merged
// with flag overrides.
struct RunConfig {
  Variant model = Variant::kHomogeneous;
  std::string input;
  std::string out_dir;  // empty: $MISCAL_OUT_DIR, then "."
  bool strict = false;
  bool dump_draws = false;
  std::vector<std::string> predict;  // unseen countries to extrapolate
  NutsConfig sampler;
  Hyperparams hyper;
};

// Front-end entry point; parses `argv[1]` as a subcommand and returns the
// process exit code. Never throws.
int cli_main(int argc, char** argv);

}  // namespace miscal

#endif
