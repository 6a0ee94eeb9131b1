#pragma once

#include <iosfwd>

namespace ciim::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsageError = 2;

// Entry point for `ciim simulate|score|train|serve|replay`. Data goes to
// `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ciim::cli
