#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dedgan/data.hpp"
#include "dedgan/training.hpp"

namespace dedgan {

/// Everything a command needs, read from an INI file with the sections
/// [data], [model], [train] and [eval]. Unknown sections or keys are errors.
struct RunConfig {
  std::string profile = "desk";

  std::string data_source = "synthetic";  // synthetic | directory
  std::filesystem::path manifest;
  SyntheticFaceConfig synthetic;
  std::uint64_t data_seed = 1;

  TrainConfig train;

  int bins = 9;
  int folds = 10;
  int pairs_per_class = 50;
  Index fid_dims = 64;
  int sweep_codes = 9;
  std::uint64_t z_seed = 7;
  std::vector<std::string> variants{"full", "minus-Dc", "minus-Dr", "minus-Da", "pose-classification"};
  std::filesystem::path oracle;
  int oracle_steps = 3000;

  /// Defaults of a named profile (desk: 32 px crops of 36 px sources; paper:
  /// 96 px crops of 100 px sources).
  static RunConfig defaults(const std::string& profile);
  /// Reads `path` over the defaults of `profile_override` (or of the file's
  /// [model] profile when the override is empty).
  static RunConfig load(const std::filesystem::path& path, const std::string& profile_override = "");
  void validate() const;
  /// Fully resolved INI text; load(to_ini()) reproduces this config.
  std::string to_ini() const;
};

/// Builds or ingests the dataset the config describes.
Dataset load_dataset(const RunConfig& config);

/// Entry point of the command-line tool. Exit codes: 0 success, 1 runtime or
/// numeric failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dedgan
