#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "curritune/common.hpp"

namespace curritune {

/// Reproducibility record written into every command's output directory:
/// the effective options, the seeds, and a digest for each input and output
/// file. One manifest.json per directory.
struct Manifest {
  std::string tool_version{kToolVersion};
  std::string command;
  std::vector<std::pair<std::string, std::string>> options;
  std::vector<std::pair<std::string, std::string>> seeds;
  std::vector<std::pair<std::string, std::string>> inputs;   // path -> digest
  std::vector<std::pair<std::string, std::string>> outputs;  // path -> digest

  void add_option(std::string name, std::string value);
  void add_seed(std::string name, std::uint64_t value);
  /// Digests the file at path and records it.
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);

  std::string to_json() const;
  /// Writes dir/manifest.json.
  void save_into(const std::filesystem::path& dir) const;
};

}  // namespace curritune
