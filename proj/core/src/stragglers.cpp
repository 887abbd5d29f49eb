#include "stragglers/stragglers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stragglers/dataio.hpp"
#include "stragglers/rng.hpp"

namespace stragglers {

int resolve_target(const TrajectoryLog& log, const SetTarget& target, double min_prominence_frac) {
  switch (target.kind) {
    case SetTarget::Kind::epoch:
      if (target.epoch < 0 || target.epoch > log.last_epoch())
        throw std::out_of_range("target epoch " + std::to_string(target.epoch) + " not in log");
      return target.epoch;
    case SetTarget::Kind::error_level: {
      const auto e = epoch_at_error(log, target.eps);
      if (!e)
        throw NotReachedError("training error never reached " + std::to_string(target.eps));
      return *e;
    }
    case SetTarget::Kind::inversion:
      return detect_inversion(log, min_prominence_frac).straggler_epoch;
  }
  throw std::logic_error("unreachable");
}

IndexSet straggler_set(const TrajectoryLog& log, const SetTarget& target,
                       double min_prominence_frac) {
  return misclassified_at(log, resolve_target(log, target, min_prominence_frac));
}

namespace {

double mean_of(const std::vector<std::int64_t>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (auto x : v) s += double(x);
  return s / double(v.size());
}

double std_of(const std::vector<std::int64_t>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (auto x : v) s += (double(x) - mean) * (double(x) - mean);
  return std::sqrt(s / double(v.size() - 1));
}

/// Overlap of two uniform random subsets of {0..p-1} with the given sizes.
/// Sizes are drawn in canonical order, so the result stream is invariant
/// under relabeling the two runs of a pair.
std::int64_t random_overlap(Rng& rng, std::int64_t p, std::int64_t size_a, std::int64_t size_b,
                            std::vector<std::uint8_t>& scratch) {
  if (size_a > size_b) std::swap(size_a, size_b);
  scratch.assign(std::size_t(p), 0);
  const auto a = rng.sample_without_replacement(p, size_a);
  for (auto i : a) scratch[std::size_t(i)] = 1;
  const auto b = rng.sample_without_replacement(p, size_b);
  std::int64_t m = 0;
  for (auto i : b) m += scratch[std::size_t(i)];
  return m;
}

}  // namespace

OverlapStats overlap_from_logs(std::span<const TrajectoryLog> logs, const SetTarget& target,
                               std::int64_t null_draws, std::uint64_t seed,
                               double min_prominence_frac) {
  if (logs.size() < 4 || logs.size() % 2 != 0)
    throw std::invalid_argument("overlap needs an even number of logs and at least 2 pairs");
  const std::int64_t p = logs.front().train_count;

  OverlapStats stats;
  std::vector<std::pair<std::int64_t, std::int64_t>> pair_sizes;
  double set_size_sum = 0.0;
  for (std::size_t k = 0; k + 1 < logs.size(); k += 2) {
    const IndexSet s0 = straggler_set(logs[k], target, min_prominence_frac);
    const IndexSet s1 = straggler_set(logs[k + 1], target, min_prominence_frac);
    stats.m_samples.push_back(std::int64_t(IndexSet::intersection_size(s0, s1)));
    pair_sizes.emplace_back(std::int64_t(s0.size()), std::int64_t(s1.size()));
    set_size_sum += 0.5 * double(s0.size() + s1.size());
  }
  stats.mean_set_size = set_size_sum / double(pair_sizes.size());

  Rng rng(seed);
  std::vector<std::uint8_t> scratch;
  stats.null_samples.reserve(std::size_t(null_draws));
  for (std::int64_t d = 0; d < null_draws; ++d) {
    const auto& [a, b] = pair_sizes[std::size_t(d) % pair_sizes.size()];
    stats.null_samples.push_back(random_overlap(rng, p, a, b, scratch));
  }

  stats.m_mean = mean_of(stats.m_samples);
  stats.m_std = std_of(stats.m_samples, stats.m_mean);
  stats.null_mean = mean_of(stats.null_samples);
  stats.null_std = std_of(stats.null_samples, stats.null_mean);
  double acc = 0.0;
  for (const auto& [a, b] : pair_sizes) acc += hypergeometric_mean(a, b, p);
  stats.analytic_null_mean = acc / double(pair_sizes.size());
  stats.degenerate = stats.m_std == 0.0;
  stats.z = stats.degenerate ? std::numeric_limits<double>::quiet_NaN()
                             : (stats.m_mean - stats.null_mean) / stats.m_std;
  return stats;
}

OverlapStats overlap_experiment(const Dataset& train_set, const Dataset& test_set,
                                const RunSpec& spec, int n_pairs, const SetTarget& target,
                                std::int64_t null_draws, std::uint64_t seed_root) {
  if (n_pairs < 2) throw std::invalid_argument("overlap_experiment: n_pairs must be >= 2");
  std::vector<TrajectoryLog> logs;
  logs.reserve(std::size_t(2 * n_pairs));
  for (int r = 0; r < 2 * n_pairs; ++r)
    logs.push_back(run_training(spec, train_set, test_set, seed_root + std::uint64_t(r)).log);
  return overlap_from_logs(logs, target, null_draws, derive_seed(seed_root, 0x6e756c6cULL));
}

std::vector<ZScorePoint> zscore_curve(std::span<const TrajectoryLog> logs,
                                      std::span<const SetTarget> targets, std::int64_t null_draws,
                                      std::uint64_t seed, double min_prominence_frac) {
  std::vector<ZScorePoint> curve;
  curve.reserve(targets.size());
  std::uint64_t k = 0;
  for (const auto& target : targets) {
    curve.push_back(
        {target, overlap_from_logs(logs, target, null_draws, derive_seed(seed, k++),
                                   min_prominence_frac)});
  }
  return curve;
}

PruneCurvePoint prune_retrain_point(const Dataset& train_set, const Dataset& test_set,
                                    const RunSpec& spec, const TrajectoryLog& base_log,
                                    const SetTarget& target, PruneMode mode,
                                    const std::vector<double>& noise_sigmas,
                                    std::uint64_t retrain_seed, double min_prominence_frac) {
  PruneCurvePoint point;
  point.mode = mode;
  point.removal_epoch = resolve_target(base_log, target, min_prominence_frac);
  const IndexSet base_set = misclassified_at(base_log, point.removal_epoch);
  point.eps_tr_target = double(base_set.size()) / double(base_log.train_count);
  point.removed_count = std::int64_t(base_set.size());

  IndexSet removed = base_set;
  if (mode == PruneMode::random) {
    // Size-matched uniform subset of the training set, fresh per point.
    Rng rng(derive_seed(retrain_seed, 0x726e64ULL));
    const auto positions =
        rng.sample_without_replacement(train_set.count(), std::int64_t(base_set.size()));
    std::vector<std::int64_t> members;
    members.reserve(positions.size());
    for (auto pos : positions) members.push_back(train_set.source_index[std::size_t(pos)]);
    removed = IndexSet(std::move(members));
  }

  if (removed.empty()) {
    point.flagged_empty = true;
    return point;
  }

  const Dataset pruned = prune(train_set, removed);
  TrainResult retrained = run_training(spec, pruned, test_set, retrain_seed);
  const TrajectoryLog& log = retrained.log;
  point.retrain_epochs = log.last_epoch();
  point.retrain_final_eps_tr = log.records.back().eps_tr;

  for (auto it = log.records.rbegin(); it != log.records.rend(); ++it) {
    if (it->metrics_valid) {
      point.final_metrics = it->metrics;
      point.final_metrics_valid = true;
      break;
    }
  }

  const InversionReport rep = detect_inversion(log, min_prominence_frac);
  point.retrain_phi = rep.phi;
  point.retrain_inversion_qualified =
      rep.r_plus.qualified && !rep.r_plus.boundary;

  point.eps_test_per_sigma.reserve(noise_sigmas.size());
  for (std::size_t k = 0; k < noise_sigmas.size(); ++k) {
    const double sigma = noise_sigmas[k];
    if (sigma == 0.0) {
      point.eps_test_per_sigma.push_back(log.records.back().eps_test);
      continue;
    }
    const Dataset noisy =
        add_noise(test_set, sigma, derive_seed(retrain_seed, 0x6e6f697365ULL + k));
    const Eigen::VectorXi pred = predict_batch(retrained.model, noisy.inputs);
    std::int64_t wrong = 0;
    for (Eigen::Index c = 0; c < pred.size(); ++c)
      if (pred[c] != noisy.labels[c]) ++wrong;
    point.eps_test_per_sigma.push_back(double(wrong) / double(pred.size()));
  }
  return point;
}

std::vector<PruneCurvePoint> prune_retrain(const Dataset& train_set, const Dataset& test_set,
                                           const RunSpec& spec,
                                           const std::vector<double>& error_grid, PruneMode mode,
                                           const std::vector<double>& noise_sigmas,
                                           std::uint64_t seed_root, double min_prominence_frac) {
  const TrainResult base = run_training(spec, train_set, test_set, seed_root);
  std::vector<PruneCurvePoint> points;
  points.reserve(error_grid.size());
  std::uint64_t k = 1;
  for (double eps : error_grid) {
    points.push_back(prune_retrain_point(train_set, test_set, spec, base.log,
                                         SetTarget::at_error(eps), mode, noise_sigmas,
                                         derive_seed(seed_root, k++), min_prominence_frac));
  }
  return points;
}

CenterOffsetStats class_center_offsets(const Dataset& ds, const IndexSet& stragglers) {
  if (ds.empty()) throw std::invalid_argument("class_center_offsets: empty dataset");

  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(ds.dim(), 10);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(10);
  for (std::int64_t c = 0; c < ds.count(); ++c) {
    centroids.col(ds.class_ids[std::size_t(c)]) += ds.inputs.col(c);
    counts[ds.class_ids[std::size_t(c)]] += 1.0;
  }
  for (int k = 0; k < 10; ++k)
    if (counts[k] > 0) centroids.col(k) /= counts[k];

  CenterOffsetStats stats;
  for (std::int64_t c = 0; c < ds.count(); ++c) {
    const double dist = (ds.inputs.col(c) - centroids.col(ds.class_ids[std::size_t(c)])).norm();
    if (stragglers.contains(ds.source_index[std::size_t(c)]))
      stats.straggler_distances.push_back(dist);
    else
      stats.rest_distances.push_back(dist);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  stats.straggler_mean = mean(stats.straggler_distances);
  stats.rest_mean = mean(stats.rest_distances);
  stats.p_value = stats.straggler_distances.empty()
                      ? 1.0
                      : rank_sum_p_greater(stats.straggler_distances, stats.rest_distances);
  return stats;
}

double rank_sum_p_greater(std::span<const double> high, std::span<const double> low) {
  const std::size_t n1 = high.size(), n2 = low.size();
  if (n1 == 0 || n2 == 0) return 1.0;

  struct Obs {
    double value;
    bool is_high;
  };
  std::vector<Obs> all;
  all.reserve(n1 + n2);
  for (double v : high) all.push_back({v, true});
  for (double v : low) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.value < b.value; });

  // Midranks with tie correction.
  double rank_sum_high = 0.0;
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i + 1;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double midrank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    const double t = double(j - i);
    tie_term += t * (t * t - 1.0);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].is_high) rank_sum_high += midrank;
    i = j;
  }

  const double n = double(n1 + n2);
  const double u = rank_sum_high - double(n1) * double(n1 + 1) / 2.0;
  const double mu = double(n1) * double(n2) / 2.0;
  const double var =
      double(n1) * double(n2) / 12.0 * (n + 1.0 - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  const double zstat = (u - mu - 0.5) / std::sqrt(var);  // continuity corrected
  return 0.5 * std::erfc(zstat / std::sqrt(2.0));
}

}  // namespace stragglers
