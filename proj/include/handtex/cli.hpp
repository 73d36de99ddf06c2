#pragma once

#include <ostream>

namespace handtex {

/// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the rasterization cache directory.
inline constexpr const char* kCacheEnvVar = "HANDTEX_CACHE_DIR";

/// Subcommands: gen-data, fit-pca, train, render, eval, stats. Results and
/// progress go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace handtex
