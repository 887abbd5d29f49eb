#include "stragglers/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stragglers/rng.hpp"

namespace stragglers {

std::string to_string(OptimizerVariant v) {
  switch (v) {
    case OptimizerVariant::gd: return "gd";
    case OptimizerVariant::gd_momentum: return "gd_momentum";
    case OptimizerVariant::gd_weight_decay: return "gd_weight_decay";
    case OptimizerVariant::sgd: return "sgd";
    case OptimizerVariant::adam: return "adam";
  }
  return "?";
}

OptimizerVariant optimizer_from_string(const std::string& s) {
  if (s == "gd") return OptimizerVariant::gd;
  if (s == "gd_momentum") return OptimizerVariant::gd_momentum;
  if (s == "gd_weight_decay") return OptimizerVariant::gd_weight_decay;
  if (s == "sgd") return OptimizerVariant::sgd;
  if (s == "adam") return OptimizerVariant::adam;
  throw std::invalid_argument("unknown optimizer variant: " + s);
}

void OptimizerConfig::validate(std::int64_t dataset_size) const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (variant == OptimizerVariant::sgd &&
      (batch_size < 1 || (dataset_size > 0 && batch_size > dataset_size)))
    throw std::invalid_argument("batch_size must be in [1, P]");
}

OptimizerState init_state(const MlpModel& m, const OptimizerConfig& cfg) {
  OptimizerState st;
  if (cfg.variant == OptimizerVariant::gd_momentum) st.velocity = ParamTensors::zeros_like(m);
  if (cfg.variant == OptimizerVariant::adam) {
    st.moment1 = ParamTensors::zeros_like(m);
    st.moment2 = ParamTensors::zeros_like(m);
  }
  st.initialized = true;
  return st;
}

namespace {

void check_shapes(const MlpModel& m, const ParamTensors& g) {
  if (g.layers.size() != m.layers.size())
    throw std::invalid_argument("gradient/model layer count mismatch");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (g.layers[l].weight.rows() != m.layers[l].weight.rows() ||
        g.layers[l].weight.cols() != m.layers[l].weight.cols() ||
        g.layers[l].bias.size() != m.layers[l].bias.size())
      throw std::invalid_argument("gradient/model shape mismatch at layer " + std::to_string(l));
  }
}

}  // namespace

void apply_step(MlpModel& m, const ParamTensors& grads, OptimizerState& state,
                const OptimizerConfig& cfg) {
  check_shapes(m, grads);
  if (!state.initialized) throw std::invalid_argument("optimizer state not initialized");
  const double eta = cfg.learning_rate;

  switch (cfg.variant) {
    case OptimizerVariant::gd:
    case OptimizerVariant::sgd:
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        m.layers[l].weight -= eta * grads.layers[l].weight;
        m.layers[l].bias -= eta * grads.layers[l].bias;
      }
      break;
    case OptimizerVariant::gd_momentum:
      if (state.velocity.layers.size() != m.layers.size())
        throw std::invalid_argument("momentum state not initialized for this model");
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& v = state.velocity.layers[l];
        v.weight = cfg.momentum * v.weight + grads.layers[l].weight;
        v.bias = cfg.momentum * v.bias + grads.layers[l].bias;
        m.layers[l].weight -= eta * v.weight;
        m.layers[l].bias -= eta * v.bias;
      }
      break;
    case OptimizerVariant::gd_weight_decay:
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        m.layers[l].weight -= eta * (grads.layers[l].weight + cfg.weight_decay * m.layers[l].weight);
        if (cfg.decay_biases)
          m.layers[l].bias -= eta * (grads.layers[l].bias + cfg.weight_decay * m.layers[l].bias);
        else
          m.layers[l].bias -= eta * grads.layers[l].bias;
      }
      break;
    case OptimizerVariant::adam: {
      if (state.moment1.layers.size() != m.layers.size())
        throw std::invalid_argument("adam state not initialized for this model");
      state.step_count += 1;
      const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, double(state.step_count));
      const double c2 = 1.0 - std::pow(b2, double(state.step_count));
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& m1 = state.moment1.layers[l];
        auto& m2 = state.moment2.layers[l];
        m1.weight = b1 * m1.weight + (1.0 - b1) * grads.layers[l].weight;
        m1.bias = b1 * m1.bias + (1.0 - b1) * grads.layers[l].bias;
        m2.weight.array() =
            b2 * m2.weight.array() + (1.0 - b2) * grads.layers[l].weight.array().square();
        m2.bias.array() = b2 * m2.bias.array() + (1.0 - b2) * grads.layers[l].bias.array().square();
        m.layers[l].weight.array() -=
            eta * (m1.weight.array() / c1) / ((m2.weight.array() / c2).sqrt() + cfg.adam_eps);
        m.layers[l].bias.array() -=
            eta * (m1.bias.array() / c1) / ((m2.bias.array() / c2).sqrt() + cfg.adam_eps);
      }
      break;
    }
  }
}

EpochStats run_epoch(MlpModel& m, const Dataset& data, OptimizerState& state,
                     const OptimizerConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("run_epoch: empty dataset");
  cfg.validate(data.count());
  EpochStats stats;

  if (cfg.full_batch()) {
    ParamTensors g = gradients(m, data.inputs, data.labels);
    if (cfg.reduction == GradientReduction::mean) g.scale(1.0 / double(data.count()));
    apply_step(m, g, state, cfg);
    stats.steps = 1;
  } else {
    const std::int64_t p = data.count();
    std::vector<std::int64_t> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.shuffle_seed, std::uint64_t(state.epoch_count)));
    rng.shuffle(order);

    Eigen::MatrixXd xb(data.dim(), cfg.batch_size);
    Eigen::VectorXi yb(cfg.batch_size);
    std::vector<std::int64_t> batch;
    batch.reserve(std::size_t(cfg.batch_size));
    for (std::int64_t start = 0; start < p; start += cfg.batch_size) {
      const std::int64_t b = std::min(cfg.batch_size, p - start);
      batch.assign(order.begin() + start, order.begin() + start + b);
      std::sort(batch.begin(), batch.end());  // canonical summation order
      for (std::int64_t i = 0; i < b; ++i) {
        xb.col(i) = data.inputs.col(batch[std::size_t(i)]);
        yb[i] = data.labels[batch[std::size_t(i)]];
      }
      ParamTensors g = gradients(m, xb.leftCols(b), yb.head(b));
      if (cfg.reduction == GradientReduction::mean) g.scale(1.0 / double(b));
      apply_step(m, g, state, cfg);
      ++stats.steps;
    }
  }
  state.epoch_count += 1;
  return stats;
}

}  // namespace stragglers
