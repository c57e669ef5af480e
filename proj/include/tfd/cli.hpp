#pragma once

#include <iosfwd>

namespace tfd {

inline constexpr const char* kVersion = "0.1.0";

/// Command-line entry point. Returns 0 on success, 1 on a usage error and 2
/// on a runtime or data error. Reports go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tfd
