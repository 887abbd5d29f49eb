#include "stragglers/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "stragglers/rng.hpp"

namespace stragglers {

std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::silu: return "silu";
    case ActivationKind::identity: return "identity";
  }
  return "?";
}

ActivationKind activation_from_string(const std::string& s) {
  if (s == "tanh") return ActivationKind::tanh;
  if (s == "relu") return ActivationKind::relu;
  if (s == "leaky_relu") return ActivationKind::leaky_relu;
  if (s == "silu") return ActivationKind::silu;
  if (s == "identity") return ActivationKind::identity;
  throw std::invalid_argument("unknown activation: " + s);
}

void Activation::apply(Eigen::MatrixXd& z) const {
  switch (kind) {
    case ActivationKind::tanh:
      z = z.array().tanh();
      break;
    case ActivationKind::relu:
      z = z.array().max(0.0);
      break;
    case ActivationKind::leaky_relu: {
      const double s = leaky_slope;
      z = z.array().max(z.array() * s);
      break;
    }
    case ActivationKind::silu:
      z = z.array() / (1.0 + (-z.array()).exp());
      break;
    case ActivationKind::identity:
      break;
  }
}

Eigen::MatrixXd Activation::derivative(const Eigen::MatrixXd& z, const Eigen::MatrixXd& a) const {
  switch (kind) {
    case ActivationKind::tanh:
      return 1.0 - a.array().square();
    case ActivationKind::relu:
      return (z.array() > 0.0).cast<double>();
    case ActivationKind::leaky_relu:
      return (z.array() > 0.0).select(Eigen::MatrixXd::Constant(z.rows(), z.cols(), 1.0),
                                      Eigen::MatrixXd::Constant(z.rows(), z.cols(), leaky_slope));
    case ActivationKind::silu: {
      const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-z.array()).exp());
      return sig * (1.0 + z.array() * (1.0 - sig));
    }
    case ActivationKind::identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  }
  return Eigen::MatrixXd();
}

InitScheme init_scheme_from_string(const std::string& s) {
  if (s == "uniform_fanin") return InitScheme::uniform_fanin;
  if (s == "he") return InitScheme::he;
  if (s == "xavier") return InitScheme::xavier;
  throw std::invalid_argument("unknown init scheme: " + s);
}

std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::uniform_fanin: return "uniform_fanin";
    case InitScheme::he: return "he";
    case InitScheme::xavier: return "xavier";
  }
  return "?";
}

std::int64_t MlpModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

ParamTensors ParamTensors::zeros_like(const MlpModel& m) {
  ParamTensors g;
  g.layers.reserve(m.layers.size());
  for (const auto& l : m.layers)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  return g;
}

void ParamTensors::scale(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
}

MlpModel init(const std::vector<std::int64_t>& arch, const Activation& act, const InitConfig& cfg) {
  if (arch.size() < 3)
    throw std::invalid_argument("architecture needs input, at least one hidden, and output sizes");
  for (auto d : arch)
    if (d < 1) throw std::invalid_argument("layer sizes must be >= 1");
  if (arch.back() != 2) throw std::invalid_argument("output layer must have 2 units");
  if (cfg.variance_scale < 0.0) throw std::invalid_argument("variance_scale must be >= 0");

  MlpModel m;
  m.activation = act;
  Rng rng(cfg.seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const std::int64_t fan_in = arch[l];
    const std::int64_t fan_out = arch[l + 1];
    Layer layer;
    layer.weight.resize(fan_out, fan_in);
    layer.bias.resize(fan_out);
    double lo = 0, hi = 0, sigma = 0;
    bool gaussian = false;
    switch (cfg.scheme) {
      case InitScheme::uniform_fanin:
        // weights and biases ~ U(-g/sqrt(n), g/sqrt(n)), n = layer fan-in
        hi = cfg.variance_scale / std::sqrt(double(fan_in));
        lo = -hi;
        break;
      case InitScheme::he:
        gaussian = true;
        sigma = cfg.variance_scale * std::sqrt(2.0 / double(fan_in));
        break;
      case InitScheme::xavier:
        hi = cfg.variance_scale * std::sqrt(6.0 / double(fan_in + fan_out));
        lo = -hi;
        break;
    }
    // Row-major fill so the draw order matches the (unit, input) loop nest.
    for (std::int64_t r = 0; r < fan_out; ++r)
      for (std::int64_t c = 0; c < fan_in; ++c)
        layer.weight(r, c) = gaussian ? sigma * rng.normal() : rng.uniform(lo, hi);
    for (std::int64_t r = 0; r < fan_out; ++r)
      layer.bias(r) = gaussian ? sigma * rng.normal() : rng.uniform(lo, hi);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

ForwardPass forward(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.rows() != m.input_dim())
    throw std::invalid_argument("forward: input has dim " + std::to_string(x.rows()) +
                                ", model expects " + std::to_string(m.input_dim()));
  ForwardPass fp;
  const std::size_t h = m.hidden_count();
  fp.pre.reserve(h);
  fp.hidden.reserve(h);
  for (std::size_t l = 0; l < h; ++l) {
    Eigen::MatrixXd z =
        l == 0 ? Eigen::MatrixXd((m.layers[l].weight * x).colwise() + m.layers[l].bias)
               : Eigen::MatrixXd((m.layers[l].weight * fp.hidden.back()).colwise() +
                                 m.layers[l].bias);
    fp.pre.push_back(z);
    m.activation.apply(z);
    fp.hidden.push_back(std::move(z));
  }
  fp.logits = (m.layers.back().weight * fp.hidden.back()).colwise() + m.layers.back().bias;
  return fp;
}

int predict_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  // index 0 wins ties, i.e. the predictor is biased to +1 on exact equality
  return logits(1) > logits(0) ? -1 : +1;
}

int predict(const MlpModel& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const ForwardPass fp = forward(m, x);
  return predict_from_logits(fp.logits.col(0));
}

Eigen::VectorXi predict_batch(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const ForwardPass fp = forward(m, x);
  Eigen::VectorXi out(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) out[c] = predict_from_logits(fp.logits.col(c));
  return out;
}

double loss_from_logits(const Eigen::Ref<const Eigen::MatrixXd>& logits,
                        const Eigen::Ref<const Eigen::VectorXi>& labels) {
  if (logits.cols() == 0) throw std::invalid_argument("loss: empty batch");
  if (logits.cols() != labels.size())
    throw std::invalid_argument("loss: logits/labels size mismatch");
  double total = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    const double lse = mx + std::log((logits.col(c).array() - mx).exp().sum());
    total += lse - logits(class_index_of_label(labels[c]), c);
  }
  return total;
}

double loss(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
            const Eigen::Ref<const Eigen::VectorXi>& labels) {
  return loss_from_logits(forward(m, x).logits, labels);
}

ParamTensors gradients(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXi>& labels) {
  return gradients(m, x, labels, forward(m, x));
}

ParamTensors gradients(const MlpModel& m, const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::VectorXi>& labels, const ForwardPass& fp) {
  if (x.cols() == 0) throw std::invalid_argument("gradients: empty batch");
  if (x.cols() != labels.size())
    throw std::invalid_argument("gradients: batch/labels size mismatch");

  const std::size_t L = m.layers.size();
  ParamTensors g;
  g.layers.resize(L);

  // dL/dlogits = softmax - onehot(true class), per column
  Eigen::MatrixXd delta(fp.logits.rows(), fp.logits.cols());
  for (Eigen::Index c = 0; c < fp.logits.cols(); ++c) {
    const double mx = fp.logits.col(c).maxCoeff();
    Eigen::VectorXd e = (fp.logits.col(c).array() - mx).exp();
    delta.col(c) = e / e.sum();
    delta(class_index_of_label(labels[c]), c) -= 1.0;
  }

  for (std::size_t l = L; l-- > 0;) {
    if (l == 0)
      g.layers[l].weight.noalias() = delta * x.transpose();
    else
      g.layers[l].weight.noalias() = delta * fp.hidden[l - 1].transpose();
    g.layers[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = m.layers[l].weight.transpose() * delta;
      delta = back.cwiseProduct(m.activation.derivative(fp.pre[l - 1], fp.hidden[l - 1]));
    }
  }
  return g;
}

Eigen::VectorXd hidden_representation(const MlpModel& m,
                                      const Eigen::Ref<const Eigen::VectorXd>& x, int layer) {
  if (layer < 1 || std::size_t(layer) > m.hidden_count())
    throw std::out_of_range("hidden layer " + std::to_string(layer) + " out of range 1.." +
                            std::to_string(m.hidden_count()));
  const ForwardPass fp = forward(m, x);
  return fp.hidden[std::size_t(layer - 1)].col(0);
}

namespace {
constexpr char kModelMagic[] = "STRGLAB.MLP.v1\n";
}

void save_model(const MlpModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic) - 1);
  const std::uint32_t kind = std::uint32_t(m.activation.kind);
  out.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
  out.write(reinterpret_cast<const char*>(&m.activation.leaky_slope), sizeof(double));
  const std::uint32_t depth = std::uint32_t(m.layers.size());
  out.write(reinterpret_cast<const char*>(&depth), sizeof(depth));
  for (const auto& l : m.layers) {
    const std::int64_t rows = l.weight.rows(), cols = l.weight.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  }
  for (const auto& l : m.layers) {
    out.write(reinterpret_cast<const char*>(l.weight.data()),
              std::streamsize(sizeof(double)) * l.weight.size());
    out.write(reinterpret_cast<const char*>(l.bias.data()),
              std::streamsize(sizeof(double)) * l.bias.size());
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[sizeof(kModelMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw std::runtime_error("model checkpoint: bad header in " + path.string());
  MlpModel m;
  std::uint32_t kind = 0, depth = 0;
  in.read(reinterpret_cast<char*>(&kind), sizeof(kind));
  in.read(reinterpret_cast<char*>(&m.activation.leaky_slope), sizeof(double));
  in.read(reinterpret_cast<char*>(&depth), sizeof(depth));
  if (!in || kind > std::uint32_t(ActivationKind::identity) || depth == 0 || depth > 1024)
    throw std::runtime_error("model checkpoint: corrupt metadata in " + path.string());
  m.activation.kind = ActivationKind(kind);
  std::vector<std::pair<std::int64_t, std::int64_t>> shapes(depth);
  for (auto& [rows, cols] : shapes) {
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!in || rows < 1 || cols < 1) throw std::runtime_error("model checkpoint: bad shapes");
  }
  for (const auto& [rows, cols] : shapes) {
    Layer l;
    l.weight.resize(rows, cols);
    l.bias.resize(rows);
    in.read(reinterpret_cast<char*>(l.weight.data()), std::streamsize(sizeof(double)) * rows * cols);
    in.read(reinterpret_cast<char*>(l.bias.data()), std::streamsize(sizeof(double)) * rows);
    if (!in) throw std::runtime_error("model checkpoint: truncated parameters");
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace stragglers
