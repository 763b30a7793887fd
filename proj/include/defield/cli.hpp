// Command-line pipeline. Kept in the library so tests can drive it in-process.
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "defield/registration.hpp"

namespace defield {

/// Settings shared by all subcommands. Each field is also a config-file key
/// and a `--key value` override.
struct PipelineConfig {
  RegistrationParams registration;
  int bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 0;
  std::optional<int> week_limit = 3;  ///< week pairs in the early column; empty means all
  std::vector<std::string> population;  ///< ids pooled for region statistics; empty means all
  std::vector<std::string> test;        ///< ids classified; empty means all
  std::filesystem::path out = ".";
  double confidence_level = 0.95;
  unsigned threads = 0;  ///< 0 picks the hardware concurrency

  /// Throws InvalidArgument on any out-of-range value.
  void validate() const;
};

/// Runs one invocation. `args` excludes the program name. Returns the exit
/// status; failures print a JSON error record on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace defield
