#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace lensnvs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

const char* tool_version();

/// Parses and runs one command line (args excludes the program name).
/// Returns 0 on success, 1 on a usage error, 2 on a runtime or data error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Record of one invocation. Its text form is a valid --config file for the
/// same subcommand: every option with its resolved value, plus comments.
struct RunManifest {
  std::string subcommand;  // e.g. "dataset gen"
  std::string config;      // key=value lines, defaults included
  std::vector<std::pair<std::string, std::string>> inputs;  // path, content hash
  std::uint64_t seed = 0;

  std::string to_text() const;
};

/// FNV-1a 64 of a file's bytes, or of a directory's files (sorted relative
/// paths and contents), as 16 hex digits.
std::string hash_path(const std::filesystem::path& path);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Analytic vs finite-difference gradients for every op (relative error
/// < 1e-4) and for a tiny composed renderer (< 1e-3).
std::vector<CheckResult> gradient_suite();

/// Fast property checks: FFT vs direct convolution, Wiener round trip,
/// projection round trip, source-permutation invariance.
std::vector<CheckResult> invariant_suite();

}  // namespace lensnvs::cli
