#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "aman/model_config.hpp"
#include "aman/trainer.hpp"

namespace aman {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInvariant = 3,
};

/// Settings of a `train` run, read from an INI file with [model], [train]
/// and [data] sections. Relative paths resolve against the file's directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path full_corpus;  // fully-annotated, seven source attributes
  std::filesystem::path weak_corpus;  // attributed records, e.g. from build-dataset
  std::filesystem::path image_dir;
  std::filesystem::path out_dir = "run";

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& ini_text, const std::filesystem::path& base_dir);
  std::string to_ini() const;
};

/// Finite-difference results per network block.
struct GradcheckSummary {
  Real mafn = 0.0;
  Real csan = 0.0;
  Real lgn = 0.0;
  std::size_t instances = 0;
  std::size_t coords = 0;
  double seconds = 0.0;

  Real worst() const;
};

struct GradcheckSettings {
  std::size_t instances = 100;
  std::uint64_t seed = 1;
  // Coordinates sampled per parameter tensor and block.
  std::size_t coords_per_param = 2;
  // Test hook forwarded to finite_diff_check.
  Real corrupt_analytic = 0.0;
};

// Runs the encoder, attention and decoder checks on random instances built
// with `cfg`'s widths over a 16x16 input.
GradcheckSummary run_gradcheck(const ModelConfig& cfg, const GradcheckSettings& settings);

// Entry point of the `aman` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aman
