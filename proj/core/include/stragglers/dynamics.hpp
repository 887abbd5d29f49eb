#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stragglers/dataset.hpp"
#include "stragglers/geometry.hpp"
#include "stragglers/network.hpp"
#include "stragglers/optim.hpp"

namespace stragglers {

struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fixed-size bitset over training-set positions.
class Bitset {
 public:
  Bitset() = default;
  explicit Bitset(std::int64_t size) : size_(size), words_((std::size_t(size) + 63) / 64, 0) {}

  void set(std::int64_t i) { words_[std::size_t(i) >> 6] |= 1ULL << (i & 63); }
  bool test(std::int64_t i) const { return (words_[std::size_t(i) >> 6] >> (i & 63)) & 1ULL; }
  std::int64_t count() const;
  std::int64_t size() const { return size_; }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }
  bool operator==(const Bitset&) const = default;

 private:
  std::int64_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct EpochRecord {
  int epoch = 0;
  double eps_tr = 0.0;
  double eps_test = 0.0;
  MetricTriple metrics;
  bool metrics_valid = true;  // false when the epoch hit a zero-norm representation
  Bitset misclassified;       // positions within the training set
};

struct TrajectoryLog {
  std::vector<EpochRecord> records;  // epochs 0..T, one per epoch
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::int64_t> source_index;  // training-set position -> source index
  std::int64_t train_count = 0;

  int last_epoch() const { return records.empty() ? -1 : records.back().epoch; }
};

/// Location and shape of one metric's extremum along the trajectory.
struct ExtremumInfo {
  int epoch = -1;
  double value = 0.0;
  double prominence = 0.0;
  bool qualified = false;  // interior extremum passing the prominence guard
  bool boundary = false;   // global extremum sits at the first/last record
};

struct InversionReport {
  ExtremumInfo r_plus;
  ExtremumInfo r_minus;
  ExtremumInfo d;
  double phi = 0.0;          // mean eps_tr over the three extremum epochs
  int straggler_epoch = -1;  // t* derived from R+ (recorded in run metadata)
  IndexSet stragglers;       // misclassified source indices at straggler_epoch
  bool converged = false;    // all three extrema qualified and interior
};

struct TrainOptions {
  std::int64_t max_epochs = 5000;
  int zero_error_patience = 50;  // stop after this many consecutive eps_tr == 0 epochs
  int metric_layer = 1;
};

struct TrainResult {
  MlpModel model;
  TrajectoryLog log;
};

/// Instrumented training: records eps_tr/eps_test, the metric triple, and
/// the misclassified set at epoch 0 (pre-update) and after every epoch.
TrainResult train(MlpModel model, const Dataset& train_set, const Dataset& test_set,
                  const OptimizerConfig& opt, const TrainOptions& topt);

/// Everything needed to reproduce one training run except the run seed.
struct RunSpec {
  std::vector<std::int64_t> arch;  // input, hidden..., 2
  Activation activation;
  InitConfig init;                 // seed field is overridden per run
  OptimizerConfig optimizer;       // shuffle_seed is derived per run
  TrainOptions train_options;
};

/// Train one run; init and shuffle seeds are derived from `seed`.
TrainResult run_training(const RunSpec& spec, const Dataset& train_set, const Dataset& test_set,
                         std::uint64_t seed);

/// First epoch at which the training error is <= eps; nullopt if never.
std::optional<int> epoch_at_error(const TrajectoryLog& log, double eps);

/// Prominence thresholds are fractions of the metric's attainable range on
/// the unit sphere (sqrt(2) for the radii, 2 for the distance).
InversionReport detect_inversion(const TrajectoryLog& log, double min_prominence_frac = 0.02);

struct CurvePoint {
  double eps_tr = 0.0;
  int epoch = 0;
  MetricTriple metrics;
};

/// Metric triple as a step function of training error: one point per
/// distinct achieved eps_tr level, resolved at its first crossing epoch.
std::vector<CurvePoint> reparameterize(const TrajectoryLog& log);

/// Misclassified source-index set at a given epoch.
IndexSet misclassified_at(const TrajectoryLog& log, int epoch);

void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path);
/// Reads back the CSV columns; misclassification sets live in the sidecar.
TrajectoryLog read_trajectory_csv(const std::filesystem::path& path);

/// Packed-bitset sidecar: per-epoch misclassification sets plus the
/// position -> source_index table.
void write_misclassified_sidecar(const TrajectoryLog& log, const std::filesystem::path& path);
void read_misclassified_sidecar(TrajectoryLog& log, const std::filesystem::path& path);

}  // namespace stragglers
