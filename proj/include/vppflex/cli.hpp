#pragma once

#include <ostream>

namespace vppflex::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kStageError = 1;
inline constexpr int kUsage = 2;
inline constexpr int kParse = 3;
inline constexpr int kInfeasible = 4;

// Runs one subcommand (gmm-fit, linearize, pfr, tcf, cost, mc-verify,
// export-flex, demo). Failures are reported on `err` as one JSON line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vppflex::cli
