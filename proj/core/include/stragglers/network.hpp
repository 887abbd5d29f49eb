#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stragglers/dataset.hpp"

namespace stragglers {

enum class ActivationKind { tanh, relu, leaky_relu, silu, identity };

std::string to_string(ActivationKind k);
ActivationKind activation_from_string(const std::string& s);

struct Activation {
  ActivationKind kind = ActivationKind::tanh;
  double leaky_slope = 0.1;

  void apply(Eigen::MatrixXd& z) const;                   // in place
  /// Elementwise derivative given pre-activation z and activation a.
  Eigen::MatrixXd derivative(const Eigen::MatrixXd& z, const Eigen::MatrixXd& a) const;
};

/// One affine layer: y = W x + b, W is fan_out x fan_in.
struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

enum class InitScheme { uniform_fanin, he, xavier };

InitScheme init_scheme_from_string(const std::string& s);
std::string to_string(InitScheme s);

struct InitConfig {
  InitScheme scheme = InitScheme::uniform_fanin;
  double variance_scale = 1.0;  // multiplier on the default range
  std::uint64_t seed = 0;
};

/// Fully connected classifier. Hidden layers share one activation; the
/// output layer is affine (2 logits: index 0 <-> label +1, index 1 <-> -1).
struct MlpModel {
  std::vector<Layer> layers;
  Activation activation;

  std::int64_t input_dim() const { return layers.front().weight.cols(); }
  std::int64_t output_dim() const { return layers.back().weight.rows(); }
  std::size_t depth() const { return layers.size(); }
  std::size_t hidden_count() const { return layers.size() - 1; }
  std::int64_t parameter_count() const;
};

/// Gradient (or any other per-parameter quantity) shaped like a model.
struct ParamTensors {
  std::vector<Layer> layers;

  static ParamTensors zeros_like(const MlpModel& m);
  void scale(double s);
};

MlpModel init(const std::vector<std::int64_t>& arch, const Activation& act, const InitConfig& cfg);

/// Per-layer pre-activations, activations, and output logits for a batch
/// (one column per example).
struct ForwardPass {
  std::vector<Eigen::MatrixXd> pre;     // z_l, one per hidden layer
  std::vector<Eigen::MatrixXd> hidden;  // a_l = sigma(z_l)
  Eigen::MatrixXd logits;               // 2 x B
};

ForwardPass forward(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x);

inline int class_index_of_label(int label) { return label > 0 ? 0 : 1; }
inline int label_of_class_index(Eigen::Index idx) { return idx == 0 ? +1 : -1; }

/// argmax over the two logits; ties resolve to label +1.
int predict_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits);
int predict(const MlpModel& m, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXi predict_batch(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Sum over examples of -log softmax(logits)[true class].
double loss_from_logits(const Eigen::Ref<const Eigen::MatrixXd>& logits,
                        const Eigen::Ref<const Eigen::VectorXi>& labels);
double loss(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
            const Eigen::Ref<const Eigen::VectorXi>& labels);

/// Exact dL/dtheta of the sum-reduced loss above.
ParamTensors gradients(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXi>& labels);
/// Same, reusing an existing forward pass on x.
ParamTensors gradients(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXi>& labels, const ForwardPass& fp);

/// Activations of hidden layer `layer` (1-based; 1 = first hidden layer).
Eigen::VectorXd hidden_representation(const MlpModel& m,
                                      const Eigen::Ref<const Eigen::VectorXd>& x, int layer = 1);

/// Versioned binary checkpoint: architecture, activation, all parameters.
void save_model(const MlpModel& m, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace stragglers
