#pragma once

#include <iosfwd>

namespace moesim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInput = 3;
inline constexpr int kExitFailure = 4;

/// Runs one subcommand. Results go to the --out file when given, otherwise
/// to `out`; diagnostics ("moesim: [module] message") go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moesim::cli
