#include "stragglers/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include "stragglers/digest.hpp"
#include "stragglers/parallel.hpp"
#include "stragglers/rng.hpp"
#include "stragglers/scaling.hpp"

using nlohmann::json;

namespace stragglers {

namespace {
constexpr char kCodeVersion[] = "stragglerlab-0.1.0";
constexpr char kManifestFormat[] = "STRGLAB.MANIFEST.v1";
}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::trajectory: return "trajectory";
    case ExperimentKind::optimizer_sweep: return "optimizer-sweep";
    case ExperimentKind::subsample_sweep: return "subsample-sweep";
    case ExperimentKind::random_labels: return "random-labels";
    case ExperimentKind::prune_retrain: return "prune-retrain";
    case ExperimentKind::zscore: return "zscore";
    case ExperimentKind::noisy_test: return "noisy-test";
    case ExperimentKind::phi_scaling: return "phi-scaling";
    case ExperimentKind::arch_sweep: return "arch-sweep";
    case ExperimentKind::activation_sweep: return "activation-sweep";
  }
  return "?";
}

ExperimentKind experiment_from_string(const std::string& s) {
  static const std::map<std::string, ExperimentKind> kMap = {
      {"trajectory", ExperimentKind::trajectory},
      {"optimizer-sweep", ExperimentKind::optimizer_sweep},
      {"subsample-sweep", ExperimentKind::subsample_sweep},
      {"random-labels", ExperimentKind::random_labels},
      {"prune-retrain", ExperimentKind::prune_retrain},
      {"zscore", ExperimentKind::zscore},
      {"noisy-test", ExperimentKind::noisy_test},
      {"phi-scaling", ExperimentKind::phi_scaling},
      {"arch-sweep", ExperimentKind::arch_sweep},
      {"activation-sweep", ExperimentKind::activation_sweep},
  };
  const auto it = kMap.find(s);
  if (it == kMap.end()) throw ConfigError("experiment", "unknown experiment '" + s + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

void reject_unknown_keys(const json& obj, const std::string& path,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw ConfigError(path + "." + key, "unknown field");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

OptimizerConfig parse_optimizer(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown_keys(j, path,
                      {"variant", "learning_rate", "momentum", "weight_decay", "decay_biases",
                       "batch_size", "adam_beta1", "adam_beta2", "adam_eps", "reduction"});
  OptimizerConfig opt;
  try {
    opt.variant = optimizer_from_string(get_or<std::string>(j, path, "variant", "gd"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".variant", e.what());
  }
  opt.learning_rate = get_or<double>(j, path, "learning_rate", 0.2);
  opt.momentum = get_or<double>(j, path, "momentum", 0.5);
  opt.weight_decay = get_or<double>(j, path, "weight_decay", 0.01);
  opt.decay_biases = get_or<bool>(j, path, "decay_biases", true);
  opt.batch_size = get_or<std::int64_t>(j, path, "batch_size", 32);
  opt.adam_beta1 = get_or<double>(j, path, "adam_beta1", 0.9);
  opt.adam_beta2 = get_or<double>(j, path, "adam_beta2", 0.999);
  opt.adam_eps = get_or<double>(j, path, "adam_eps", 1e-8);
  const std::string red = get_or<std::string>(j, path, "reduction", "mean");
  if (red == "mean")
    opt.reduction = GradientReduction::mean;
  else if (red == "sum")
    opt.reduction = GradientReduction::sum;
  else
    throw ConfigError(path + ".reduction", "must be 'mean' or 'sum'");
  try {
    opt.validate(0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return opt;
}

json optimizer_to_json(const OptimizerConfig& o) {
  return json{{"variant", to_string(o.variant)},
              {"learning_rate", o.learning_rate},
              {"momentum", o.momentum},
              {"weight_decay", o.weight_decay},
              {"decay_biases", o.decay_biases},
              {"batch_size", o.batch_size},
              {"adam_beta1", o.adam_beta1},
              {"adam_beta2", o.adam_beta2},
              {"adam_eps", o.adam_eps},
              {"reduction", o.reduction == GradientReduction::mean ? "mean" : "sum"}};
}

std::string optimizer_label(const OptimizerConfig& o) {
  char buf[128];
  switch (o.variant) {
    case OptimizerVariant::gd:
      std::snprintf(buf, sizeof(buf), "gd_lr%g", o.learning_rate);
      break;
    case OptimizerVariant::gd_momentum:
      std::snprintf(buf, sizeof(buf), "momentum_mu%g_lr%g", o.momentum, o.learning_rate);
      break;
    case OptimizerVariant::gd_weight_decay:
      std::snprintf(buf, sizeof(buf), "wd_lambda%g_lr%g", o.weight_decay, o.learning_rate);
      break;
    case OptimizerVariant::sgd:
      std::snprintf(buf, sizeof(buf), "sgd_b%lld_lr%g", static_cast<long long>(o.batch_size),
                    o.learning_rate);
      break;
    case OptimizerVariant::adam:
      std::snprintf(buf, sizeof(buf), "adam_lr%g", o.learning_rate);
      break;
  }
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  reject_unknown_keys(j, "<root>", {"experiment", "dataset", "model", "optimizer", "run", "params"});

  ExperimentConfig cfg;
  if (!j.contains("experiment")) throw ConfigError("experiment", "required field missing");
  cfg.experiment = experiment_from_string(j.at("experiment").get<std::string>());

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    if (!d.is_object()) throw ConfigError("dataset", "expected an object");
    reject_unknown_keys(d, "dataset",
                        {"source", "dir", "count", "chunk", "randomize_labels", "label_seed",
                         "noise_sigmas", "cache"});
    try {
      cfg.dataset.source = source_from_string(get_or<std::string>(d, "dataset", "source", "mnist"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("dataset.source", e.what());
    }
    cfg.dataset.dir = get_or<std::string>(d, "dataset", "dir", "data/mnist");
    cfg.dataset.count = get_or<std::int64_t>(d, "dataset", "count", 8192);
    cfg.dataset.chunk = get_or<std::int64_t>(d, "dataset", "chunk", 0);
    cfg.dataset.randomize_labels = get_or<bool>(d, "dataset", "randomize_labels", false);
    cfg.dataset.label_seed = get_or<std::uint64_t>(d, "dataset", "label_seed", 0);
    cfg.dataset.noise_sigmas = get_or<std::vector<double>>(d, "dataset", "noise_sigmas", {0.0});
    cfg.dataset.cache = get_or<std::string>(d, "dataset", "cache", "");
    if (cfg.dataset.count < 2) throw ConfigError("dataset.count", "must be >= 2");
    if (cfg.dataset.chunk < 0) throw ConfigError("dataset.chunk", "must be >= 0");
    for (double s : cfg.dataset.noise_sigmas)
      if (s < 0.0) throw ConfigError("dataset.noise_sigmas", "sigma must be >= 0");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    if (!m.is_object()) throw ConfigError("model", "expected an object");
    reject_unknown_keys(m, "model",
                        {"hidden", "activation", "leaky_slope", "init_scheme", "variance_scale"});
    cfg.model.hidden = get_or<std::vector<std::int64_t>>(m, "model", "hidden", {20});
    if (cfg.model.hidden.empty()) throw ConfigError("model.hidden", "need at least one hidden layer");
    for (auto h : cfg.model.hidden)
      if (h < 1) throw ConfigError("model.hidden", "layer sizes must be >= 1");
    try {
      cfg.model.activation.kind =
          activation_from_string(get_or<std::string>(m, "model", "activation", "tanh"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("model.activation", e.what());
    }
    cfg.model.activation.leaky_slope = get_or<double>(m, "model", "leaky_slope", 0.1);
    try {
      cfg.model.init.scheme =
          init_scheme_from_string(get_or<std::string>(m, "model", "init_scheme", "uniform_fanin"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("model.init_scheme", e.what());
    }
    cfg.model.init.variance_scale = get_or<double>(m, "model", "variance_scale", 1.0);
    if (cfg.model.init.variance_scale < 0.0)
      throw ConfigError("model.variance_scale", "must be >= 0");
  }

  if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j.at("optimizer"), "optimizer");

  if (j.contains("run")) {
    const json& r = j.at("run");
    if (!r.is_object()) throw ConfigError("run", "expected an object");
    reject_unknown_keys(r, "run",
                        {"seeds", "seed_root", "max_epochs", "zero_error_patience", "metric_layer",
                         "min_prominence", "output_dir", "timestamped_output", "threads",
                         "save_checkpoints", "save_sidecars"});
    cfg.run.seeds = get_or<int>(r, "run", "seeds", 20);
    cfg.run.seed_root = get_or<std::uint64_t>(r, "run", "seed_root", 1);
    cfg.run.max_epochs = get_or<std::int64_t>(r, "run", "max_epochs", 5000);
    cfg.run.zero_error_patience = get_or<int>(r, "run", "zero_error_patience", 50);
    cfg.run.metric_layer = get_or<int>(r, "run", "metric_layer", 1);
    cfg.run.min_prominence = get_or<double>(r, "run", "min_prominence", 0.02);
    cfg.run.output_dir = get_or<std::string>(r, "run", "output_dir", "out");
    cfg.run.timestamped_output = get_or<bool>(r, "run", "timestamped_output", true);
    cfg.run.threads = get_or<int>(r, "run", "threads", 1);
    cfg.run.save_checkpoints = get_or<bool>(r, "run", "save_checkpoints", false);
    cfg.run.save_sidecars = get_or<bool>(r, "run", "save_sidecars", true);
    if (cfg.run.seeds < 1) throw ConfigError("run.seeds", "must be >= 1");
    if (cfg.run.max_epochs < 1) throw ConfigError("run.max_epochs", "must be >= 1");
    if (cfg.run.zero_error_patience < 1) throw ConfigError("run.zero_error_patience", "must be >= 1");
    if (cfg.run.metric_layer < 1) throw ConfigError("run.metric_layer", "must be >= 1");
    if (cfg.run.min_prominence < 0) throw ConfigError("run.min_prominence", "must be >= 0");
    if (cfg.run.threads < 1) throw ConfigError("run.threads", "must be >= 1");
  }

  if (j.contains("params")) {
    const json& p = j.at("params");
    if (!p.is_object()) throw ConfigError("params", "expected an object");
    reject_unknown_keys(p, "params",
                        {"optimizers", "chunks", "error_grid", "at_inversion", "modes", "n_pairs",
                         "null_draws", "sizes", "fit_restarts", "depths", "widths", "activations"});
    if (p.contains("optimizers")) {
      if (!p.at("optimizers").is_array()) throw ConfigError("params.optimizers", "expected array");
      int idx = 0;
      for (const auto& entry : p.at("optimizers")) {
        const std::string path = "params.optimizers[" + std::to_string(idx++) + "]";
        OptimizerSweepEntry e;
        e.config = parse_optimizer(entry, path);
        e.label = optimizer_label(e.config);
        cfg.params.optimizers.push_back(std::move(e));
      }
    }
    cfg.params.chunks = get_or<std::vector<std::int64_t>>(p, "params", "chunks", {0});
    cfg.params.error_grid = get_or<std::vector<double>>(p, "params", "error_grid", {});
    cfg.params.at_inversion = get_or<bool>(p, "params", "at_inversion", true);
    if (p.contains("modes")) {
      cfg.params.modes.clear();
      for (const auto& m : p.at("modes")) {
        const std::string s = m.get<std::string>();
        if (s == "straggler")
          cfg.params.modes.push_back(PruneMode::straggler);
        else if (s == "random")
          cfg.params.modes.push_back(PruneMode::random);
        else
          throw ConfigError("params.modes", "must be 'straggler' or 'random', got '" + s + "'");
      }
    }
    cfg.params.n_pairs = get_or<int>(p, "params", "n_pairs", 20);
    cfg.params.null_draws = get_or<std::int64_t>(p, "params", "null_draws", 10000);
    cfg.params.sizes = get_or<std::vector<std::int64_t>>(p, "params", "sizes", {});
    cfg.params.fit_restarts = get_or<int>(p, "params", "fit_restarts", 10);
    cfg.params.depths = get_or<std::vector<int>>(p, "params", "depths", {2, 4, 8});
    cfg.params.widths = get_or<std::vector<std::int64_t>>(p, "params", "widths", {10, 20, 40, 80});
    if (p.contains("activations")) {
      for (const auto& a : p.at("activations")) {
        try {
          cfg.params.activations.push_back(activation_from_string(a.get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError("params.activations", e.what());
        }
      }
    }
    if (p.contains("n_pairs") && cfg.params.n_pairs < 2)
      throw ConfigError("params.n_pairs", "must be >= 2");
  }
  return cfg;
}

std::string ExperimentConfig::serialize() const {
  json j;
  j["experiment"] = to_string(experiment);
  j["dataset"] = {{"source", to_string(dataset.source)},
                  {"dir", dataset.dir.generic_string()},
                  {"count", dataset.count},
                  {"chunk", dataset.chunk},
                  {"randomize_labels", dataset.randomize_labels},
                  {"label_seed", dataset.label_seed},
                  {"noise_sigmas", dataset.noise_sigmas},
                  {"cache", dataset.cache.generic_string()}};
  j["model"] = {{"hidden", model.hidden},
                {"activation", to_string(model.activation.kind)},
                {"leaky_slope", model.activation.leaky_slope},
                {"init_scheme", to_string(model.init.scheme)},
                {"variance_scale", model.init.variance_scale}};
  j["optimizer"] = optimizer_to_json(optimizer);
  j["run"] = {{"seeds", run.seeds},
              {"seed_root", run.seed_root},
              {"max_epochs", run.max_epochs},
              {"zero_error_patience", run.zero_error_patience},
              {"metric_layer", run.metric_layer},
              {"min_prominence", run.min_prominence},
              {"output_dir", run.output_dir.generic_string()},
              {"timestamped_output", run.timestamped_output},
              {"threads", run.threads},
              {"save_checkpoints", run.save_checkpoints},
              {"save_sidecars", run.save_sidecars}};
  json p;
  if (!params.optimizers.empty()) {
    p["optimizers"] = json::array();
    for (const auto& e : params.optimizers) p["optimizers"].push_back(optimizer_to_json(e.config));
  }
  p["chunks"] = params.chunks;
  p["error_grid"] = params.error_grid;
  p["at_inversion"] = params.at_inversion;
  p["modes"] = json::array();
  for (auto m : params.modes) p["modes"].push_back(m == PruneMode::straggler ? "straggler" : "random");
  p["n_pairs"] = params.n_pairs;
  p["null_draws"] = params.null_draws;
  p["sizes"] = params.sizes;
  p["fit_restarts"] = params.fit_restarts;
  p["depths"] = params.depths;
  p["widths"] = params.widths;
  p["activations"] = json::array();
  for (auto a : params.activations) p["activations"].push_back(to_string(a));
  j["params"] = p;
  return j.dump(2) + "\n";
}

std::string ExperimentConfig::digest() const {
  const std::string canon = serialize();
  return fnv1a_hex(canon.data(), canon.size());
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct DataBundle {
  Dataset train_set;
  Dataset test_set;
  RawDataset train_raw;  // kept for subsample/size sweeps
  std::string train_digest;
};

DataBundle load_data(const ExperimentConfig& cfg) {
  DataBundle bundle;
  const auto& d = cfg.dataset;
  if (!d.cache.empty() && std::filesystem::exists(d.cache)) {
    bundle.train_set = read_dataset_cache(d.cache);
    const RawDataset test_raw = load_raw(d.source, Split::test, d.dir);
    bundle.test_set = standardize(test_raw);
    bundle.train_digest = dataset_digest(bundle.train_set);
    return bundle;
  }

  bundle.train_raw = load_raw(d.source, Split::train, d.dir);
  const RawDataset test_raw = load_raw(d.source, Split::test, d.dir);
  bundle.train_set = standardize(subsample(bundle.train_raw, d.count, d.chunk));
  if (d.randomize_labels) {
    const std::uint64_t seed =
        d.label_seed != 0 ? d.label_seed : derive_seed(cfg.run.seed_root, 0x6c61626c73ULL);
    bundle.train_set = randomize_labels(bundle.train_set, seed);
  }
  // Test sets are standardized with their own statistics.
  bundle.test_set = standardize(test_raw);
  bundle.train_digest = dataset_digest(bundle.train_set);
  if (!d.cache.empty()) write_dataset_cache(bundle.train_set, d.cache);
  return bundle;
}

RunSpec make_spec(const ExperimentConfig& cfg, std::int64_t input_dim) {
  RunSpec spec;
  spec.arch.push_back(input_dim);
  for (auto h : cfg.model.hidden) spec.arch.push_back(h);
  spec.arch.push_back(2);
  spec.activation = cfg.model.activation;
  spec.init = cfg.model.init;
  spec.optimizer = cfg.optimizer;
  spec.train_options.max_epochs = cfg.run.max_epochs;
  spec.train_options.zero_error_patience = cfg.run.zero_error_patience;
  spec.train_options.metric_layer = cfg.run.metric_layer;
  return spec;
}

std::filesystem::path make_output_dir(const ExperimentConfig& cfg) {
  std::string name = to_string(cfg.experiment) + "-" + cfg.digest().substr(0, 8);
  if (cfg.run.timestamped_output) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&t));
    name += std::string("-") + stamp;
  }
  std::filesystem::path dir = cfg.run.output_dir / name;
  std::filesystem::create_directories(dir);
  return dir;
}

json run_manifest(const ExperimentConfig& cfg, const std::string& train_digest,
                  const RunSpec& spec, std::uint64_t seed, const TrajectoryLog& log,
                  const InversionReport& rep, const std::string& label) {
  json j;
  j["format"] = kManifestFormat;
  j["code_version"] = kCodeVersion;
  j["experiment"] = to_string(cfg.experiment);
  j["label"] = label;
  j["config_digest"] = cfg.digest();
  j["seed"] = seed;
  j["dataset"] = {{"source", to_string(cfg.dataset.source)},
                  {"count", log.train_count},
                  {"digest", train_digest}};
  j["arch"] = spec.arch;
  j["activation"] = to_string(spec.activation.kind);
  j["init"] = {{"scheme", to_string(spec.init.scheme)},
               {"variance_scale", spec.init.variance_scale}};
  j["optimizer"] = optimizer_to_json(spec.optimizer);
  j["stop_rule"] = {{"max_epochs", spec.train_options.max_epochs},
                    {"zero_error_patience", spec.train_options.zero_error_patience}};
  j["results"] = {{"epochs", log.last_epoch()},
                  {"final_eps_tr", log.records.back().eps_tr},
                  {"final_eps_test", log.records.back().eps_test},
                  {"phi", rep.phi},
                  {"t_star_rplus", rep.r_plus.epoch},
                  {"t_star_rminus", rep.r_minus.epoch},
                  {"t_star_d", rep.d.epoch},
                  {"n_stragglers", rep.stragglers.size()},
                  {"converged", rep.converged}};
  return j;
}

std::string straggler_list_text(const IndexSet& set) {
  std::string text;
  for (auto idx : set.members()) text += std::to_string(idx) + "\n";
  return text;
}

struct TrainedRun {
  std::uint64_t seed = 0;
  TrajectoryLog log;
  InversionReport report;
  MlpModel model;
};

/// Train `n` runs with sequential seeds; results are placed by index, so
/// the outcome is independent of the thread count.
std::vector<TrainedRun> train_batch(const RunSpec& spec, const Dataset& train_set,
                                    const Dataset& test_set, int n, std::uint64_t seed_root,
                                    double min_prominence, int threads) {
  std::vector<TrainedRun> runs(static_cast<std::size_t>(n));
  parallel_runs(n, threads, [&](std::int64_t i) {
    TrainedRun& r = runs[std::size_t(i)];
    r.seed = seed_root + std::uint64_t(i);
    TrainResult res = run_training(spec, train_set, test_set, r.seed);
    r.report = detect_inversion(res.log, min_prominence);
    r.log = std::move(res.log);
    r.model = std::move(res.model);
  });
  return runs;
}

void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                   const std::string& train_digest, const RunSpec& spec, const TrainedRun& run,
                   const std::string& label) {
  std::filesystem::create_directories(dir);
  write_trajectory_csv(run.log, dir / "trajectory.csv");
  if (cfg.run.save_sidecars) write_misclassified_sidecar(run.log, dir / "misclassified.bin");
  if (cfg.run.save_checkpoints) save_model(run.model, dir / "model.bin");
  write_file_atomic(dir / "manifest.json",
                    run_manifest(cfg, train_digest, spec, run.seed, run.log, run.report, label)
                            .dump(2) +
                        "\n");
  write_file_atomic(dir / ("stragglers_" + train_digest.substr(0, 8) + "_tstar.txt"),
                    straggler_list_text(run.report.stragglers));
}

std::string inversion_csv_header() {
  return "label,run,seed,epochs,final_eps_tr,final_eps_test,t_star_rplus,t_star_rminus,t_star_d,"
         "prom_rplus,prom_rminus,prom_d,qualified,boundary,phi,n_stragglers\n";
}

std::string inversion_csv_row(const std::string& label, int run_idx, const TrainedRun& run) {
  const InversionReport& rep = run.report;
  std::string row = label + "," + std::to_string(run_idx) + "," + std::to_string(run.seed) + "," +
                    std::to_string(run.log.last_epoch()) + "," +
                    format_double(run.log.records.back().eps_tr) + "," +
                    format_double(run.log.records.back().eps_test) + "," +
                    std::to_string(rep.r_plus.epoch) + "," + std::to_string(rep.r_minus.epoch) +
                    "," + std::to_string(rep.d.epoch) + "," + format_double(rep.r_plus.prominence) +
                    "," + format_double(rep.r_minus.prominence) + "," +
                    format_double(rep.d.prominence) + ",";
  const bool qualified = rep.r_plus.qualified && rep.r_minus.qualified && rep.d.qualified;
  const bool boundary = rep.r_plus.boundary || rep.r_minus.boundary || rep.d.boundary;
  row += std::string(qualified ? "1" : "0") + "," + (boundary ? "1" : "0") + "," +
         format_double(rep.phi) + "," + std::to_string(rep.stragglers.size()) + "\n";
  return row;
}

// --- experiment bodies ------------------------------------------------------

RunOutcome run_trajectory_family(const ExperimentConfig& cfg, const DataBundle& data,
                                 const std::filesystem::path& out_dir) {
  const RunSpec spec = make_spec(cfg, data.train_set.dim());
  RunOutcome outcome;
  outcome.output_dir = out_dir;

  const auto runs = train_batch(spec, data.train_set, data.test_set, cfg.run.seeds,
                                cfg.run.seed_root, cfg.run.min_prominence, cfg.run.threads);
  std::string csv = inversion_csv_header();
  for (int i = 0; i < int(runs.size()); ++i) {
    char label[32];
    std::snprintf(label, sizeof(label), "run_%04d", i);
    write_run_dir(out_dir / "runs" / label, cfg, data.train_digest, spec, runs[std::size_t(i)],
                  label);
    csv += inversion_csv_row(to_string(cfg.experiment), i, runs[std::size_t(i)]);
    outcome.runs += 1;
    if (!runs[std::size_t(i)].report.converged) {
      outcome.unconverged += 1;
      outcome.warnings.push_back(std::string(label) + ": no qualified interior inversion");
    }
  }
  write_file_atomic(out_dir / "inversions.csv", csv);
  return outcome;
}

RunOutcome run_optimizer_sweep(const ExperimentConfig& cfg, const DataBundle& data,
                               const std::filesystem::path& out_dir) {
  if (cfg.params.optimizers.empty())
    throw ConfigError("params.optimizers", "optimizer-sweep needs at least one entry");
  RunOutcome outcome;
  outcome.output_dir = out_dir;
  std::string csv = inversion_csv_header();
  std::uint64_t block = 0;
  for (const auto& entry : cfg.params.optimizers) {
    RunSpec spec = make_spec(cfg, data.train_set.dim());
    spec.optimizer = entry.config;
    const auto runs = train_batch(spec, data.train_set, data.test_set, cfg.run.seeds,
                                  derive_seed(cfg.run.seed_root, block++), cfg.run.min_prominence,
                                  cfg.run.threads);
    for (int i = 0; i < int(runs.size()); ++i) {
      char label[64];
      std::snprintf(label, sizeof(label), "%s/run_%04d", entry.label.c_str(), i);
      write_run_dir(out_dir / "runs" / label, cfg, data.train_digest, spec, runs[std::size_t(i)],
                    entry.label);
      csv += inversion_csv_row(entry.label, i, runs[std::size_t(i)]);
      outcome.runs += 1;
      if (!runs[std::size_t(i)].report.converged) {
        outcome.unconverged += 1;
        outcome.warnings.push_back(std::string(label) + ": no qualified interior inversion");
      }
    }
  }
  write_file_atomic(out_dir / "sweep.csv", csv);
  return outcome;
}

RunOutcome run_subsample_sweep(const ExperimentConfig& cfg, const DataBundle& data,
                               const std::filesystem::path& out_dir) {
  RunOutcome outcome;
  outcome.output_dir = out_dir;
  std::string csv = inversion_csv_header();
  std::uint64_t block = 0;
  for (auto chunk : cfg.params.chunks) {
    const Dataset train_set = standardize(subsample(data.train_raw, cfg.dataset.count, chunk));
    const std::string digest = dataset_digest(train_set);
    const RunSpec spec = make_spec(cfg, train_set.dim());
    const auto runs = train_batch(spec, train_set, data.test_set, cfg.run.seeds,
                                  derive_seed(cfg.run.seed_root, block++), cfg.run.min_prominence,
                                  cfg.run.threads);
    const std::string chunk_label = "chunk" + std::to_string(chunk);

    // Mean reparameterized curve over runs, on a fixed error grid.
    std::string curve = "eps_tr,n_runs,r_plus,r_minus,d\n";
    for (int g = 100; g >= 0; --g) {
      const double eps = double(g) / 200.0;  // 0.500 ... 0.000
      double rp = 0, rm = 0, dd = 0;
      int n = 0;
      for (const auto& run : runs) {
        const auto epoch = epoch_at_error(run.log, eps);
        if (!epoch) continue;
        const auto& rec = run.log.records[std::size_t(*epoch)];
        if (!rec.metrics_valid) continue;
        rp += rec.metrics.r_plus;
        rm += rec.metrics.r_minus;
        dd += rec.metrics.d;
        ++n;
      }
      if (n == 0) continue;
      curve += format_double(eps) + "," + std::to_string(n) + "," + format_double(rp / n) + "," +
               format_double(rm / n) + "," + format_double(dd / n) + "\n";
    }
    write_file_atomic(out_dir / ("curve_" + chunk_label + ".csv"), curve);

    for (int i = 0; i < int(runs.size()); ++i) {
      char label[64];
      std::snprintf(label, sizeof(label), "%s/run_%04d", chunk_label.c_str(), i);
      write_run_dir(out_dir / "runs" / label, cfg, digest, spec, runs[std::size_t(i)], chunk_label);
      csv += inversion_csv_row(chunk_label, i, runs[std::size_t(i)]);
      outcome.runs += 1;
      if (!runs[std::size_t(i)].report.converged) outcome.unconverged += 1;
    }
  }
  write_file_atomic(out_dir / "inversions.csv", csv);
  return outcome;
}

RunOutcome run_prune_retrain(const ExperimentConfig& cfg, const DataBundle& data,
                             const std::filesystem::path& out_dir) {
  const RunSpec spec = make_spec(cfg, data.train_set.dim());
  RunOutcome outcome;
  outcome.output_dir = out_dir;

  const auto base_runs = train_batch(spec, data.train_set, data.test_set, cfg.run.seeds,
                                     cfg.run.seed_root, cfg.run.min_prominence, cfg.run.threads);

  std::vector<std::pair<std::string, SetTarget>> targets;
  if (cfg.params.at_inversion) targets.emplace_back("tstar", SetTarget::at_inversion());
  for (double eps : cfg.params.error_grid) {
    char label[32];
    std::snprintf(label, sizeof(label), "eps%.4f", eps);
    targets.emplace_back(label, SetTarget::at_error(eps));
  }
  if (targets.empty()) throw ConfigError("params", "no prune targets (grid empty, at_inversion off)");

  struct Job {
    std::size_t base;
    std::size_t target;
    PruneMode mode;
    PruneCurvePoint point;
    bool failed = false;
    std::string error;
  };
  std::vector<Job> jobs;
  for (std::size_t b = 0; b < base_runs.size(); ++b)
    for (std::size_t t = 0; t < targets.size(); ++t)
      for (auto mode : cfg.params.modes) jobs.push_back({b, t, mode, {}, false, {}});

  parallel_runs(std::int64_t(jobs.size()), cfg.run.threads, [&](std::int64_t ji) {
    Job& job = jobs[std::size_t(ji)];
    const std::uint64_t retrain_seed =
        derive_seed(cfg.run.seed_root, 0xbeef0000ULL + std::uint64_t(ji));
    try {
      job.point = prune_retrain_point(data.train_set, data.test_set, spec,
                                      base_runs[job.base].log, targets[job.target].second,
                                      job.mode, cfg.dataset.noise_sigmas, retrain_seed,
                                      cfg.run.min_prominence);
    } catch (const NotReachedError& e) {
      job.failed = true;
      job.error = e.what();
    }
  });

  std::string csv =
      "mode,target,base_run,eps_target,removal_epoch,removed,retrain_epochs,retrain_final_eps_tr,"
      "inversion_qualified,retrain_phi,r_plus,r_minus,d";
  for (double s : cfg.dataset.noise_sigmas) csv += ",eps_test_sigma" + format_double(s);
  csv += "\n";
  for (const auto& job : jobs) {
    if (job.failed) {
      outcome.warnings.push_back("prune target " + targets[job.target].first + ": " + job.error);
      continue;
    }
    const auto& pt = job.point;
    if (pt.flagged_empty) {
      outcome.warnings.push_back("prune target " + targets[job.target].first +
                                 ": empty removal set (no-op point)");
      continue;
    }
    csv += std::string(pt.mode == PruneMode::straggler ? "straggler" : "random") + "," +
           targets[job.target].first + "," + std::to_string(job.base) + "," +
           format_double(pt.eps_tr_target) + "," + std::to_string(pt.removal_epoch) + "," +
           std::to_string(pt.removed_count) + "," + std::to_string(pt.retrain_epochs) + "," +
           format_double(pt.retrain_final_eps_tr) + "," +
           (pt.retrain_inversion_qualified ? "1" : "0") + "," + format_double(pt.retrain_phi) +
           "," + format_double(pt.final_metrics.r_plus) + "," +
           format_double(pt.final_metrics.r_minus) + "," + format_double(pt.final_metrics.d);
    for (double v : pt.eps_test_per_sigma) csv += "," + format_double(v);
    csv += "\n";
    outcome.runs += 1;
  }
  write_file_atomic(out_dir / "prune_curve.csv", csv);

  // Straggler lists for the base runs.
  for (std::size_t b = 0; b < base_runs.size(); ++b) {
    char name[96];
    std::snprintf(name, sizeof(name), "stragglers_%s_run%04zu_tstar.txt",
                  data.train_digest.substr(0, 8).c_str(), b);
    write_file_atomic(out_dir / name, straggler_list_text(base_runs[b].report.stragglers));
  }
  return outcome;
}

RunOutcome run_zscore(const ExperimentConfig& cfg, const DataBundle& data,
                      const std::filesystem::path& out_dir) {
  const RunSpec spec = make_spec(cfg, data.train_set.dim());
  RunOutcome outcome;
  outcome.output_dir = out_dir;

  const int n_runs = 2 * cfg.params.n_pairs;
  const auto runs = train_batch(spec, data.train_set, data.test_set, n_runs, cfg.run.seed_root,
                                cfg.run.min_prominence, cfg.run.threads);
  std::vector<TrajectoryLog> logs;
  logs.reserve(runs.size());
  for (const auto& r : runs) logs.push_back(r.log);
  outcome.runs = n_runs;

  std::vector<std::pair<std::string, SetTarget>> targets;
  if (cfg.params.at_inversion) targets.emplace_back("tstar", SetTarget::at_inversion());
  for (double eps : cfg.params.error_grid) {
    char label[32];
    std::snprintf(label, sizeof(label), "eps%.4f", eps);
    targets.emplace_back(label, SetTarget::at_error(eps));
  }

  std::string csv =
      "target,eps,z,m_mean,m_std,null_mean,null_std,analytic_null_mean,mean_set_size,degenerate\n";
  std::uint64_t k = 0;
  for (const auto& [label, target] : targets) {
    try {
      const OverlapStats stats =
          overlap_from_logs(logs, target, cfg.params.null_draws,
                            derive_seed(cfg.run.seed_root, 0x7a00 + k++), cfg.run.min_prominence);
      const double eps_val = target.kind == SetTarget::Kind::error_level
                                 ? target.eps
                                 : stats.mean_set_size / double(data.train_set.count());
      csv += label + "," + format_double(eps_val) + "," + format_double(stats.z) + "," +
             format_double(stats.m_mean) + "," + format_double(stats.m_std) + "," +
             format_double(stats.null_mean) + "," + format_double(stats.null_std) + "," +
             format_double(stats.analytic_null_mean) + "," + format_double(stats.mean_set_size) +
             "," + (stats.degenerate ? "1" : "0") + "\n";
    } catch (const NotReachedError& e) {
      outcome.warnings.push_back("zscore target " + label + ": " + e.what());
    }
  }
  write_file_atomic(out_dir / "zscore.csv", csv);
  return outcome;
}

RunOutcome run_phi_scaling(const ExperimentConfig& cfg, const DataBundle& data,
                           const std::filesystem::path& out_dir) {
  if (cfg.params.sizes.size() < 3)
    throw ConfigError("params.sizes", "phi-scaling needs at least 3 sizes");
  RunOutcome outcome;
  outcome.output_dir = out_dir;

  const RunSpec spec = make_spec(cfg, data.train_raw.dim());
  const PhiVsSizeResult res =
      phi_vs_size(data.train_raw, data.test_set, cfg.params.sizes, spec, cfg.run.seeds,
                  cfg.run.seed_root, cfg.run.min_prominence, cfg.run.threads);
  outcome.runs = int(res.per_run_phi.size()) + res.unconverged_runs;
  outcome.unconverged = res.unconverged_runs;
  if (res.unconverged_runs > 0)
    outcome.warnings.push_back(std::to_string(res.unconverged_runs) +
                               " unconverged runs excluded from the fit");

  std::string csv = "P,phi,sigma_phi,n_runs\n";
  for (const auto& pt : res.points)
    csv += format_double(pt.p) + "," + format_double(pt.phi) + "," + format_double(pt.sigma_phi) +
           "," + std::to_string(pt.n_runs) + "\n";
  write_file_atomic(out_dir / "phi_vs_size.csv", csv);

  const ScalingFit fit =
      fit_phi(res.points, derive_seed(cfg.run.seed_root, 0xf17ULL), cfg.params.fit_restarts);
  write_fit_report(fit, res.points, out_dir / "fit_report.txt");
  if (fit.degenerate) outcome.warnings.push_back("scaling fit degenerate: all phi equal");
  return outcome;
}

RunOutcome run_arch_sweep(const ExperimentConfig& cfg, const DataBundle& data,
                          const std::filesystem::path& out_dir) {
  RunOutcome outcome;
  outcome.output_dir = out_dir;
  std::string csv = "depth,width,parameters,run,seed,phi,converged\n";
  std::uint64_t block = 0;
  for (int depth : cfg.params.depths) {
    if (depth < 2) throw ConfigError("params.depths", "depth must be >= 2 (layers of weights)");
    for (auto width : cfg.params.widths) {
      ExperimentConfig sub = cfg;
      sub.model.hidden.assign(std::size_t(depth - 1), width);
      const RunSpec spec = make_spec(sub, data.train_set.dim());
      const std::int64_t n_params =
          init(spec.arch, spec.activation, spec.init).parameter_count();
      const auto runs = train_batch(spec, data.train_set, data.test_set, cfg.run.seeds,
                                    derive_seed(cfg.run.seed_root, block++),
                                    cfg.run.min_prominence, cfg.run.threads);
      for (int i = 0; i < int(runs.size()); ++i) {
        const auto& r = runs[std::size_t(i)];
        csv += std::to_string(depth) + "," + std::to_string(width) + "," +
               std::to_string(n_params) + "," + std::to_string(i) + "," +
               std::to_string(r.seed) + "," + format_double(r.report.phi) + "," +
               (r.report.converged ? "1" : "0") + "\n";
        outcome.runs += 1;
        if (!r.report.converged) outcome.unconverged += 1;
      }
    }
  }
  write_file_atomic(out_dir / "arch_sweep.csv", csv);
  return outcome;
}

RunOutcome run_activation_sweep(const ExperimentConfig& cfg, const DataBundle& data,
                                const std::filesystem::path& out_dir) {
  std::vector<ActivationKind> acts = cfg.params.activations;
  if (acts.empty())
    acts = {ActivationKind::tanh, ActivationKind::relu, ActivationKind::leaky_relu,
            ActivationKind::silu, ActivationKind::identity};
  RunOutcome outcome;
  outcome.output_dir = out_dir;
  std::string csv = "activation,run,seed,phi,t_star_rplus,converged\n";
  std::string summary = "activation,n_runs,phi_mean,phi_std,unconverged\n";
  std::uint64_t block = 0;
  for (auto act : acts) {
    ExperimentConfig sub = cfg;
    sub.model.activation.kind = act;
    const RunSpec spec = make_spec(sub, data.train_set.dim());
    const auto runs = train_batch(spec, data.train_set, data.test_set, cfg.run.seeds,
                                  derive_seed(cfg.run.seed_root, block++), cfg.run.min_prominence,
                                  cfg.run.threads);
    std::vector<double> phis;
    int bad = 0;
    for (int i = 0; i < int(runs.size()); ++i) {
      const auto& r = runs[std::size_t(i)];
      csv += to_string(act) + "," + std::to_string(i) + "," + std::to_string(r.seed) + "," +
             format_double(r.report.phi) + "," + std::to_string(r.report.r_plus.epoch) + "," +
             (r.report.converged ? "1" : "0") + "\n";
      outcome.runs += 1;
      if (r.report.converged)
        phis.push_back(r.report.phi);
      else
        ++bad;
    }
    outcome.unconverged += bad;
    double mean = 0, sd = 0;
    for (double v : phis) mean += v;
    if (!phis.empty()) mean /= double(phis.size());
    if (phis.size() > 1) {
      for (double v : phis) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / double(phis.size() - 1));
    }
    summary += to_string(act) + "," + std::to_string(phis.size()) + "," + format_double(mean) +
               "," + format_double(sd) + "," + std::to_string(bad) + "\n";
  }
  write_file_atomic(out_dir / "activation_sweep.csv", csv);
  write_file_atomic(out_dir / "activation_summary.csv", summary);
  return outcome;
}

}  // namespace

RunOutcome run_experiment(ExperimentConfig config, const CliOverrides& overrides) {
  if (overrides.threads) config.run.threads = *overrides.threads;
  if (overrides.deterministic) config.run.threads = 1;
  if (overrides.seed_root) config.run.seed_root = *overrides.seed_root;
  if (overrides.output_dir) config.run.output_dir = *overrides.output_dir;
  if (config.experiment == ExperimentKind::random_labels) config.dataset.randomize_labels = true;
  if (config.experiment == ExperimentKind::noisy_test && config.params.modes.size() < 2)
    config.params.modes = {PruneMode::straggler, PruneMode::random};

  const DataBundle data = load_data(config);
  const std::filesystem::path out_dir = make_output_dir(config);
  write_file_atomic(out_dir / "config.json", config.serialize());

  RunOutcome outcome;
  switch (config.experiment) {
    case ExperimentKind::trajectory:
    case ExperimentKind::random_labels:
      outcome = run_trajectory_family(config, data, out_dir);
      break;
    case ExperimentKind::optimizer_sweep:
      outcome = run_optimizer_sweep(config, data, out_dir);
      break;
    case ExperimentKind::subsample_sweep:
      outcome = run_subsample_sweep(config, data, out_dir);
      break;
    case ExperimentKind::prune_retrain:
    case ExperimentKind::noisy_test:
      outcome = run_prune_retrain(config, data, out_dir);
      break;
    case ExperimentKind::zscore:
      outcome = run_zscore(config, data, out_dir);
      break;
    case ExperimentKind::phi_scaling:
      outcome = run_phi_scaling(config, data, out_dir);
      break;
    case ExperimentKind::arch_sweep:
      outcome = run_arch_sweep(config, data, out_dir);
      break;
    case ExperimentKind::activation_sweep:
      outcome = run_activation_sweep(config, data, out_dir);
      break;
  }
  outcome.output_dir = out_dir;
  return outcome;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

namespace {

struct GroupStats {
  std::string experiment;
  std::string dataset;
  std::vector<double> phis;
  std::vector<double> t_stars;
  std::vector<double> final_eps_test;
  int runs = 0;
  int unconverged = 0;
};

std::string mean_std(const std::vector<double>& v) {
  if (v.empty()) return "n/a";
  double mean = 0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  if (v.size() == 1) return format_double(mean) + " +- n/a";
  double sd = 0;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / double(v.size() - 1));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.6g +- %.3g", mean, sd);
  return buf;
}

}  // namespace

std::string summarize(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir))
    throw std::runtime_error("summarize: no such directory: " + dir.string());

  std::map<std::string, GroupStats> groups;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "manifest.json") continue;
    std::ifstream in(entry.path());
    json j;
    try {
      in >> j;
    } catch (const json::exception&) {
      continue;
    }
    if (!j.contains("config_digest") || !j.contains("results")) continue;
    GroupStats& g = groups[j["config_digest"].get<std::string>()];
    g.experiment = j.value("experiment", "?");
    if (j.contains("dataset"))
      g.dataset = j["dataset"].value("source", "?") + " P=" +
                  std::to_string(j["dataset"].value("count", std::int64_t(0)));
    const json& r = j["results"];
    g.runs += 1;
    if (!r.value("converged", false)) g.unconverged += 1;
    if (r.contains("phi")) g.phis.push_back(r["phi"].get<double>());
    if (r.contains("t_star_rplus")) g.t_stars.push_back(double(r["t_star_rplus"].get<int>()));
    if (r.contains("final_eps_test")) g.final_eps_test.push_back(r["final_eps_test"].get<double>());
  }

  if (groups.empty())
    throw std::runtime_error("summarize: no run manifests found under " + dir.string());

  std::string report;
  for (const auto& [digest, g] : groups) {
    report += "config " + digest + "  (" + g.experiment + ", " + g.dataset + ")\n";
    report += "  runs:        " + std::to_string(g.runs) + "\n";
    report += "  phi:         " + mean_std(g.phis) + "\n";
    report += "  t*(R+):      " + mean_std(g.t_stars) + "\n";
    report += "  eps_test(T): " + mean_std(g.final_eps_test) + "\n";
    report += "  unconverged: " + std::to_string(g.unconverged) + "\n";
  }
  return report;
}

}  // namespace stragglers
