#include "stragglers/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "stragglers/rng.hpp"

namespace stragglers {

std::int64_t Bitset::count() const {
  std::int64_t n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

namespace {

EpochRecord make_record(int epoch, const ForwardPass& fp, const Dataset& train_set,
                        const Eigen::MatrixXd& test_logits, const Dataset& test_set,
                        int metric_layer) {
  EpochRecord rec;
  rec.epoch = epoch;

  const Eigen::Index p = train_set.count();
  rec.misclassified = Bitset(p);
  for (Eigen::Index c = 0; c < p; ++c) {
    if (predict_from_logits(fp.logits.col(c)) != train_set.labels[c]) rec.misclassified.set(c);
  }
  rec.eps_tr = double(rec.misclassified.count()) / double(p);

  std::int64_t test_wrong = 0;
  for (Eigen::Index c = 0; c < test_logits.cols(); ++c)
    if (predict_from_logits(test_logits.col(c)) != test_set.labels[c]) ++test_wrong;
  rec.eps_test = double(test_wrong) / double(test_logits.cols());

  try {
    const ClassManifolds cm =
        manifolds_from_hidden(fp.hidden[std::size_t(metric_layer - 1)], train_set.labels);
    rec.metrics = metric_triple(cm);
    rec.metrics_valid = true;
  } catch (const ZeroNormError&) {
    rec.metrics = MetricTriple{};
    rec.metrics_valid = false;
  }
  return rec;
}

}  // namespace

TrainResult train(MlpModel model, const Dataset& train_set, const Dataset& test_set,
                  const OptimizerConfig& opt, const TrainOptions& topt) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (test_set.empty()) throw std::invalid_argument("train: empty test set");
  if (topt.max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (topt.metric_layer < 1 || std::size_t(topt.metric_layer) > model.hidden_count())
    throw std::out_of_range("train: metric_layer out of range");
  opt.validate(train_set.count());

  TrainResult out;
  out.log.source_index = train_set.source_index;
  out.log.train_count = train_set.count();
  out.log.records.reserve(std::size_t(topt.max_epochs) + 1);

  OptimizerState state = init_state(model, opt);

  ForwardPass fp = forward(model, train_set.inputs);
  Eigen::MatrixXd test_logits = forward(model, test_set.inputs).logits;
  out.log.records.push_back(
      make_record(0, fp, train_set, test_logits, test_set, topt.metric_layer));

  int zero_streak = out.log.records.back().eps_tr == 0.0 ? 1 : 0;
  for (std::int64_t t = 1; t <= topt.max_epochs; ++t) {
    if (opt.full_batch()) {
      // The record's evaluation pass doubles as this epoch's gradient pass.
      ParamTensors g = gradients(model, train_set.inputs, train_set.labels, fp);
      if (opt.reduction == GradientReduction::mean) g.scale(1.0 / double(train_set.count()));
      apply_step(model, g, state, opt);
      state.epoch_count += 1;
    } else {
      run_epoch(model, train_set, state, opt);
    }

    fp = forward(model, train_set.inputs);
    if (!fp.logits.allFinite())
      throw TrainingDivergedError("non-finite logits at epoch " + std::to_string(t) +
                                  " (learning rate too large?)");
    test_logits = forward(model, test_set.inputs).logits;
    out.log.records.push_back(
        make_record(int(t), fp, train_set, test_logits, test_set, topt.metric_layer));

    if (out.log.records.back().eps_tr == 0.0) {
      if (++zero_streak >= topt.zero_error_patience) break;
    } else {
      zero_streak = 0;
    }
  }
  out.model = std::move(model);
  return out;
}

namespace {
constexpr std::uint64_t kInitSeedTag = 0x696e6974ULL;      // "init"
constexpr std::uint64_t kShuffleSeedTag = 0x7368756646ULL;  // "shufF"
}  // namespace

TrainResult run_training(const RunSpec& spec, const Dataset& train_set, const Dataset& test_set,
                         std::uint64_t seed) {
  InitConfig init_cfg = spec.init;
  init_cfg.seed = derive_seed(seed, kInitSeedTag);
  OptimizerConfig opt = spec.optimizer;
  opt.shuffle_seed = derive_seed(seed, kShuffleSeedTag);
  MlpModel model = init(spec.arch, spec.activation, init_cfg);
  TrainResult result = train(std::move(model), train_set, test_set, opt, spec.train_options);
  result.log.seed = seed;
  return result;
}

std::optional<int> epoch_at_error(const TrajectoryLog& log, double eps) {
  for (const auto& rec : log.records)
    if (rec.eps_tr <= eps) return rec.epoch;
  return std::nullopt;
}

namespace {

struct Series {
  std::vector<int> epochs;
  std::vector<double> values;
};

struct Run {
  std::size_t begin;  // first index of a run of equal values
  std::size_t end;    // one past last
  double value;
};

std::vector<Run> value_runs(const std::vector<double>& v) {
  std::vector<Run> runs;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i + 1;
    while (j < v.size() && v[j] == v[i]) ++j;
    runs.push_back({i, j, v[i]});
    i = j;
  }
  return runs;
}

double prominence_at(const std::vector<double>& v, std::size_t i) {
  double left = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= i; ++k) left = std::max(left, v[k]);
  double right = -std::numeric_limits<double>::infinity();
  for (std::size_t k = i; k < v.size(); ++k) right = std::max(right, v[k]);
  return std::min(left, right) - v[i];
}

/// Extremum of a series to be minimized. Candidates are interior local
/// minima (plateau handled, earliest index reported); the guard drops
/// candidates whose prominence is below `threshold`. Falls back to the
/// global minimum, flagged, when no candidate qualifies.
ExtremumInfo find_minimum(const Series& s, double threshold) {
  ExtremumInfo info;
  const auto& v = s.values;
  if (v.empty()) return info;

  const auto runs = value_runs(v);
  std::size_t global_run = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].value < runs[global_run].value) global_run = r;

  bool best_found = false;
  std::size_t best_idx = 0;
  for (std::size_t r = 1; r + 1 < runs.size(); ++r) {
    if (runs[r].value < runs[r - 1].value && runs[r].value < runs[r + 1].value) {
      const std::size_t idx = runs[r].begin;
      if (prominence_at(v, idx) < threshold) continue;
      if (!best_found || v[idx] < v[best_idx]) {
        best_found = true;
        best_idx = idx;
      }
    }
  }

  if (best_found) {
    info.qualified = true;
    info.epoch = s.epochs[best_idx];
    info.value = v[best_idx];
    info.prominence = prominence_at(v, best_idx);
    // A lower value at the first/last record means the log does not span
    // the true extremum.
    info.boundary = (global_run == 0 || global_run + 1 == runs.size()) &&
                    runs[global_run].value < info.value;
  } else {
    const std::size_t idx = runs[global_run].begin;
    info.qualified = false;
    info.epoch = s.epochs[idx];
    info.value = v[idx];
    info.prominence = prominence_at(v, idx);
    info.boundary = global_run == 0 || global_run + 1 == runs.size();
  }
  return info;
}

ExtremumInfo find_maximum(const Series& s, double threshold) {
  Series neg = s;
  for (auto& x : neg.values) x = -x;
  ExtremumInfo info = find_minimum(neg, threshold);
  info.value = -info.value;
  return info;
}

double eps_tr_at_epoch(const TrajectoryLog& log, int epoch) {
  for (const auto& rec : log.records)
    if (rec.epoch == epoch) return rec.eps_tr;
  throw std::out_of_range("no record at epoch " + std::to_string(epoch));
}

}  // namespace

InversionReport detect_inversion(const TrajectoryLog& log, double min_prominence_frac) {
  Series rp, rm, dd;
  for (const auto& rec : log.records) {
    if (!rec.metrics_valid) continue;
    rp.epochs.push_back(rec.epoch);
    rp.values.push_back(rec.metrics.r_plus);
    rm.epochs.push_back(rec.epoch);
    rm.values.push_back(rec.metrics.r_minus);
    dd.epochs.push_back(rec.epoch);
    dd.values.push_back(rec.metrics.d);
  }
  if (rp.values.size() < 3)
    throw std::invalid_argument("detect_inversion: need at least 3 valid records");

  InversionReport rep;
  const double radius_range = std::sqrt(2.0);  // attainable span of R on the unit sphere
  const double distance_range = 2.0;
  rep.r_plus = find_minimum(rp, min_prominence_frac * radius_range);
  rep.r_minus = find_minimum(rm, min_prominence_frac * radius_range);
  rep.d = find_maximum(dd, min_prominence_frac * distance_range);

  rep.phi = (eps_tr_at_epoch(log, rep.r_plus.epoch) + eps_tr_at_epoch(log, rep.r_minus.epoch) +
             eps_tr_at_epoch(log, rep.d.epoch)) /
            3.0;
  rep.straggler_epoch = rep.r_plus.epoch;
  rep.stragglers = misclassified_at(log, rep.straggler_epoch);
  rep.converged = rep.r_plus.qualified && rep.r_minus.qualified && rep.d.qualified &&
                  !rep.r_plus.boundary && !rep.r_minus.boundary && !rep.d.boundary;
  return rep;
}

std::vector<CurvePoint> reparameterize(const TrajectoryLog& log) {
  std::vector<double> levels;
  levels.reserve(log.records.size());
  for (const auto& rec : log.records) levels.push_back(rec.eps_tr);
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  std::vector<CurvePoint> curve;
  curve.reserve(levels.size());
  for (double eps : levels) {
    const auto epoch = epoch_at_error(log, eps);
    if (!epoch) continue;
    const auto& rec = log.records[std::size_t(*epoch - log.records.front().epoch)];
    if (!rec.metrics_valid) continue;
    curve.push_back({eps, *epoch, rec.metrics});
  }
  return curve;
}

IndexSet misclassified_at(const TrajectoryLog& log, int epoch) {
  for (const auto& rec : log.records) {
    if (rec.epoch != epoch) continue;
    std::vector<std::int64_t> members;
    for (std::int64_t i = 0; i < rec.misclassified.size(); ++i)
      if (rec.misclassified.test(i)) members.push_back(log.source_index[std::size_t(i)]);
    return IndexSet(std::move(members));
  }
  throw std::out_of_range("no record at epoch " + std::to_string(epoch));
}

void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,eps_tr,eps_test,r_plus,r_minus,d\n";
  char buf[512];
  for (const auto& rec : log.records) {
    const double rp = rec.metrics_valid ? rec.metrics.r_plus : std::nan("");
    const double rm = rec.metrics_valid ? rec.metrics.r_minus : std::nan("");
    const double d = rec.metrics_valid ? rec.metrics.d : std::nan("");
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", rec.epoch, rec.eps_tr,
                  rec.eps_test, rp, rm, d);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TrajectoryLog read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,eps_tr,eps_test,r_plus,r_minus,d")
    throw std::runtime_error("trajectory CSV: unexpected header in " + path.string());
  TrajectoryLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord rec;
    double rp, rm, d;
    if (std::sscanf(line.c_str(), "%d,%lg,%lg,%lg,%lg,%lg", &rec.epoch, &rec.eps_tr, &rec.eps_test,
                    &rp, &rm, &d) != 6)
      throw std::runtime_error("trajectory CSV: malformed row: " + line);
    rec.metrics = {rp, rm, d};
    rec.metrics_valid = std::isfinite(rp) && std::isfinite(rm) && std::isfinite(d);
    log.records.push_back(std::move(rec));
  }
  return log;
}

namespace {
constexpr char kSidecarMagic[] = "STRGLAB.MISCL.v1\n";
}

void write_misclassified_sidecar(const TrajectoryLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kSidecarMagic, sizeof(kSidecarMagic) - 1);
  const std::int64_t p = log.train_count;
  const std::int64_t n = std::int64_t(log.records.size());
  out.write(reinterpret_cast<const char*>(&p), sizeof(p));
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(log.source_index.data()),
            std::streamsize(sizeof(std::int64_t)) * std::int64_t(log.source_index.size()));
  for (const auto& rec : log.records) {
    const std::int32_t epoch = rec.epoch;
    out.write(reinterpret_cast<const char*>(&epoch), sizeof(epoch));
    out.write(reinterpret_cast<const char*>(rec.misclassified.words().data()),
              std::streamsize(sizeof(std::uint64_t)) * std::int64_t(rec.misclassified.words().size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void read_misclassified_sidecar(TrajectoryLog& log, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kSidecarMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSidecarMagic, sizeof(magic)) != 0)
    throw std::runtime_error("sidecar: bad header in " + path.string());
  std::int64_t p = 0, n = 0;
  in.read(reinterpret_cast<char*>(&p), sizeof(p));
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || p < 0 || n < 0) throw std::runtime_error("sidecar: corrupt counts");
  log.train_count = p;
  log.source_index.resize(std::size_t(p));
  in.read(reinterpret_cast<char*>(log.source_index.data()),
          std::streamsize(sizeof(std::int64_t)) * p);
  if (std::int64_t(log.records.size()) != n)
    throw std::runtime_error("sidecar: record count does not match trajectory");
  for (auto& rec : log.records) {
    std::int32_t epoch = 0;
    in.read(reinterpret_cast<char*>(&epoch), sizeof(epoch));
    if (epoch != rec.epoch) throw std::runtime_error("sidecar: epoch mismatch");
    rec.misclassified = Bitset(p);
    in.read(reinterpret_cast<char*>(rec.misclassified.words().data()),
            std::streamsize(sizeof(std::uint64_t)) * std::int64_t(rec.misclassified.words().size()));
    if (!in) throw std::runtime_error("sidecar: truncated");
  }
}

}  // namespace stragglers
