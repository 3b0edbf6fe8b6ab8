#pragma once

#include <iosfwd>

namespace concernsim {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Command-line entry point. Interactive input is read from `in`; reports go
/// to `out`, diagnostics to `err`. Never throws.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace concernsim
