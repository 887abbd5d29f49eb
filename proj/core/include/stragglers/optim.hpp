#pragma once

#include <cstdint>
#include <string>

#include "stragglers/network.hpp"

namespace stragglers {

enum class OptimizerVariant { gd, gd_momentum, gd_weight_decay, sgd, adam };

std::string to_string(OptimizerVariant v);
OptimizerVariant optimizer_from_string(const std::string& s);

/// How minibatch gradients are scaled before a step. The loss itself is a
/// sum over examples; `mean` divides its gradient by the batch size, which
/// is the convention the learning rates here are calibrated against.
enum class GradientReduction { mean, sum };

struct OptimizerConfig {
  OptimizerVariant variant = OptimizerVariant::gd;
  double learning_rate = 0.2;
  double momentum = 0.5;        // gd_momentum
  double weight_decay = 0.01;   // gd_weight_decay
  bool decay_biases = true;
  std::int64_t batch_size = 32;  // sgd
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t shuffle_seed = 0;  // sgd
  GradientReduction reduction = GradientReduction::mean;

  void validate(std::int64_t dataset_size) const;
  bool full_batch() const { return variant != OptimizerVariant::sgd; }
};

struct OptimizerState {
  ParamTensors velocity;       // gd_momentum
  ParamTensors moment1;        // adam
  ParamTensors moment2;        // adam
  std::int64_t step_count = 0;
  std::int64_t epoch_count = 0;
  bool initialized = false;
};

OptimizerState init_state(const MlpModel& m, const OptimizerConfig& cfg);

/// One parameter update from an already-reduced gradient.
void apply_step(MlpModel& m, const ParamTensors& grads, OptimizerState& state,
                const OptimizerConfig& cfg);

struct EpochStats {
  std::int64_t steps = 0;
};

/// One full pass over the dataset: a single whole-set step for the
/// full-batch variants, one step per minibatch for sgd. Minibatch index
/// sets are re-shuffled per epoch from shuffle_seed and the epoch counter;
/// each minibatch gradient is summed in ascending index order, so a batch
/// covering the whole set reproduces plain gd bitwise.
EpochStats run_epoch(MlpModel& m, const Dataset& data, OptimizerState& state,
                     const OptimizerConfig& cfg);

}  // namespace stragglers
