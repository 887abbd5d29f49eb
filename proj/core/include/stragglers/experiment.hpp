#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stragglers/dataio.hpp"
#include "stragglers/dynamics.hpp"
#include "stragglers/stragglers.hpp"

namespace stragglers {

/// Configuration error that names the offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_path(field) {}
  std::string field_path;
};

enum class ExperimentKind {
  trajectory,
  optimizer_sweep,
  subsample_sweep,
  random_labels,
  prune_retrain,
  zscore,
  noisy_test,
  phi_scaling,
  arch_sweep,
  activation_sweep,
};

std::string to_string(ExperimentKind k);
ExperimentKind experiment_from_string(const std::string& s);

struct DatasetBlock {
  Source source = Source::mnist;
  std::filesystem::path dir = "data/mnist";
  std::int64_t count = 8192;
  std::int64_t chunk = 0;
  bool randomize_labels = false;
  std::uint64_t label_seed = 0;
  std::vector<double> noise_sigmas = {0.0};
  std::filesystem::path cache;  // optional dataset-cache path
};

struct ModelBlock {
  std::vector<std::int64_t> hidden = {20};
  Activation activation;
  InitConfig init;
};

struct RunBlock {
  int seeds = 20;
  std::uint64_t seed_root = 1;
  std::int64_t max_epochs = 5000;
  int zero_error_patience = 50;
  int metric_layer = 1;
  double min_prominence = 0.02;
  std::filesystem::path output_dir = "out";
  bool timestamped_output = true;
  int threads = 1;
  bool save_checkpoints = false;
  bool save_sidecars = true;
};

struct OptimizerSweepEntry {
  std::string label;
  OptimizerConfig config;
};

struct ExperimentParams {
  std::vector<OptimizerSweepEntry> optimizers;           // optimizer-sweep
  std::vector<std::int64_t> chunks = {0};                // subsample-sweep
  std::vector<double> error_grid;                        // prune-retrain, zscore
  bool at_inversion = true;                              // prune-retrain, zscore
  std::vector<PruneMode> modes = {PruneMode::straggler}; // prune-retrain
  int n_pairs = 20;                                      // zscore
  std::int64_t null_draws = 10000;                       // zscore
  std::vector<std::int64_t> sizes;                       // phi-scaling
  int fit_restarts = 10;                                 // phi-scaling
  std::vector<int> depths = {2, 4, 8};                   // arch-sweep
  std::vector<std::int64_t> widths = {10, 20, 40, 80};   // arch-sweep
  std::vector<ActivationKind> activations;               // activation-sweep
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::trajectory;
  DatasetBlock dataset;
  ModelBlock model;
  OptimizerConfig optimizer;
  RunBlock run;
  ExperimentParams params;

  /// Canonical serialization; parse(serialize(c)) == c.
  std::string serialize() const;
  /// Digest of the canonical form (stable under key reordering).
  std::string digest() const;

  static ExperimentConfig parse(const std::string& json_text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

struct CliOverrides {
  std::optional<int> threads;
  std::optional<std::uint64_t> seed_root;
  std::optional<std::filesystem::path> output_dir;
  bool deterministic = false;  // force the sequential path
};

struct RunOutcome {
  std::filesystem::path output_dir;
  int runs = 0;
  int unconverged = 0;
  std::vector<std::string> warnings;
};

/// Execute one experiment end to end, writing all artifacts under a fresh
/// directory inside run.output_dir.
RunOutcome run_experiment(ExperimentConfig config, const CliOverrides& overrides = {});

/// Aggregate every run manifest found under `dir` into a text report.
std::string summarize(const std::filesystem::path& dir);

/// Atomic text-file write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace stragglers
