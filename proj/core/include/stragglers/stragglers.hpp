#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stragglers/dynamics.hpp"

namespace stragglers {

struct NotReachedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Where along a trajectory a misclassified set is taken: a fixed epoch, the
/// first epoch reaching a training-error level, or the run's own inversion.
struct SetTarget {
  enum class Kind { epoch, error_level, inversion };
  Kind kind = Kind::inversion;
  int epoch = 0;
  double eps = 0.0;

  static SetTarget at_epoch(int e) { return {Kind::epoch, e, 0.0}; }
  static SetTarget at_error(double eps) { return {Kind::error_level, 0, eps}; }
  static SetTarget at_inversion() { return {Kind::inversion, 0, 0.0}; }
};

/// Resolve a target to an epoch of this log. Throws NotReachedError when an
/// error level was never reached.
int resolve_target(const TrajectoryLog& log, const SetTarget& target,
                   double min_prominence_frac = 0.02);

IndexSet straggler_set(const TrajectoryLog& log, const SetTarget& target,
                       double min_prominence_frac = 0.02);

struct OverlapStats {
  std::vector<std::int64_t> m_samples;     // straggler-set overlap per run pair
  std::vector<std::int64_t> null_samples;  // overlaps of size-matched random subsets
  double m_mean = 0.0;
  double m_std = 0.0;
  double null_mean = 0.0;
  double null_std = 0.0;
  double analytic_null_mean = 0.0;  // mean over pairs of |S0||S1|/P
  double z = 0.0;                   // (<M> - <M-hat>) / sigma_M
  bool degenerate = false;          // sigma_M == 0
  double mean_set_size = 0.0;
};

/// Pair logs (0,1), (2,3), ... and compare their sets at `target`.
OverlapStats overlap_from_logs(std::span<const TrajectoryLog> logs, const SetTarget& target,
                               std::int64_t null_draws, std::uint64_t seed,
                               double min_prominence_frac = 0.02);

/// Train 2*n_pairs fresh runs and compare them (sequential; pre-train logs
/// and use overlap_from_logs to parallelize or share runs across targets).
OverlapStats overlap_experiment(const Dataset& train_set, const Dataset& test_set,
                                const RunSpec& spec, int n_pairs, const SetTarget& target,
                                std::int64_t null_draws, std::uint64_t seed_root);

struct ZScorePoint {
  SetTarget target;
  OverlapStats stats;
};

std::vector<ZScorePoint> zscore_curve(std::span<const TrajectoryLog> logs,
                                      std::span<const SetTarget> targets, std::int64_t null_draws,
                                      std::uint64_t seed, double min_prominence_frac = 0.02);

enum class PruneMode { straggler, random };

struct PruneCurvePoint {
  double eps_tr_target = 0.0;  // resolved training-error level of the removed set
  int removal_epoch = -1;
  std::int64_t removed_count = 0;
  PruneMode mode = PruneMode::straggler;
  MetricTriple final_metrics;             // at convergence of the retrained run
  bool final_metrics_valid = false;
  std::vector<double> eps_test_per_sigma;  // one entry per requested noise level
  double retrain_phi = 0.0;
  bool retrain_inversion_qualified = false;  // qualified interior R+ minimum found
  int retrain_epochs = 0;
  double retrain_final_eps_tr = 0.0;
  bool flagged_empty = false;  // nothing to remove at this target
};

/// Remove the base run's set at `target` (or a size-matched random set),
/// retrain from a fresh seed, and measure the retrained run.
PruneCurvePoint prune_retrain_point(const Dataset& train_set, const Dataset& test_set,
                                    const RunSpec& spec, const TrajectoryLog& base_log,
                                    const SetTarget& target, PruneMode mode,
                                    const std::vector<double>& noise_sigmas,
                                    std::uint64_t retrain_seed,
                                    double min_prominence_frac = 0.02);

/// Full grid: one base run, one retrained run per (grid point, mode).
std::vector<PruneCurvePoint> prune_retrain(const Dataset& train_set, const Dataset& test_set,
                                           const RunSpec& spec,
                                           const std::vector<double>& error_grid, PruneMode mode,
                                           const std::vector<double>& noise_sigmas,
                                           std::uint64_t seed_root,
                                           double min_prominence_frac = 0.02);

struct CenterOffsetStats {
  std::vector<double> straggler_distances;
  std::vector<double> rest_distances;
  double straggler_mean = 0.0;
  double rest_mean = 0.0;
  /// One-sided rank-sum p-value for straggler distances exceeding the rest.
  double p_value = 1.0;
};

/// Input-space distance of every example to its own 10-class centroid,
/// split into stragglers and the rest.
CenterOffsetStats class_center_offsets(const Dataset& ds, const IndexSet& stragglers);

/// Mean of the overlap of two uniform random subsets of sizes a and b in a
/// universe of size p.
inline double hypergeometric_mean(std::int64_t a, std::int64_t b, std::int64_t p) {
  return double(a) * double(b) / double(p);
}

/// One-sided Mann-Whitney rank-sum p-value (normal approximation with tie
/// correction) that `high` stochastically dominates `low`.
double rank_sum_p_greater(std::span<const double> high, std::span<const double> low);

}  // namespace stragglers
