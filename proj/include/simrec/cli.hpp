#pragma once

#include <string>
#include <vector>

namespace simrec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingInput = 3;
inline constexpr int kExitBackend = 4;
inline constexpr int kExitInternal = 5;

/// Dispatches one pipeline stage: ingest | distill | embed | train-sta |
/// train-rl | eval | trace | genworld | serve-env. Returns a process exit
/// status; failures emit one machine-parsable JSON error line on stderr.
int run_subcommand(const std::vector<std::string>& args);

}  // namespace simrec::cli
