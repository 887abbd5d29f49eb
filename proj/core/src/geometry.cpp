#include "stragglers/geometry.hpp"

namespace stragglers {

namespace {
// Guard against exact zeros and denormal-range norms; genuine hidden
// representations have O(1) norms.
constexpr double kMinNorm = 1e-150;
}  // namespace

Eigen::VectorXd project_unit(const Eigen::Ref<const Eigen::VectorXd>& h) {
  const double n = h.norm();
  if (!(n > kMinNorm)) throw ZeroNormError("cannot project a zero-norm vector");
  return h / n;
}

void project_unit_columns(Eigen::MatrixXd& h) {
  for (Eigen::Index c = 0; c < h.cols(); ++c) {
    const double n = h.col(c).norm();
    if (!(n > kMinNorm))
      throw ZeroNormError("zero-norm hidden representation at column " + std::to_string(c));
    h.col(c) /= n;
  }
}

ClassManifolds manifolds(const MlpModel& m, const Dataset& ds, int layer) {
  if (ds.empty()) throw std::invalid_argument("manifolds: empty dataset");
  if (layer < 1 || std::size_t(layer) > m.hidden_count())
    throw std::out_of_range("hidden layer " + std::to_string(layer) + " out of range");
  const ForwardPass fp = forward(m, ds.inputs);
  return manifolds_from_hidden(fp.hidden[std::size_t(layer - 1)], ds.labels);
}

ClassManifolds manifolds_from_hidden(const Eigen::Ref<const Eigen::MatrixXd>& hidden,
                                     const Eigen::Ref<const Eigen::VectorXi>& labels) {
  const Eigen::Index p = hidden.cols();
  if (labels.size() != p) throw std::invalid_argument("hidden/labels size mismatch");
  Eigen::Index n_plus = 0;
  for (Eigen::Index c = 0; c < p; ++c)
    if (labels[c] > 0) ++n_plus;

  ClassManifolds cm;
  cm.plus.resize(hidden.rows(), n_plus);
  cm.minus.resize(hidden.rows(), p - n_plus);
  Eigen::Index ip = 0, im = 0;
  for (Eigen::Index c = 0; c < p; ++c) {
    if (labels[c] > 0)
      cm.plus.col(ip++) = hidden.col(c);
    else
      cm.minus.col(im++) = hidden.col(c);
  }
  project_unit_columns(cm.plus);
  project_unit_columns(cm.minus);
  return cm;
}

double gyration_radius(const Eigen::Ref<const Eigen::MatrixXd>& points) {
  const Eigen::Index n = points.cols();
  if (n == 0) throw std::invalid_argument("gyration_radius: empty point set");
  const Eigen::VectorXd centroid = points.rowwise().mean();
  const double msd = (points.colwise() - centroid).colwise().squaredNorm().mean();
  return std::sqrt(msd);
}

double centroid_distance(const Eigen::Ref<const Eigen::MatrixXd>& plus,
                         const Eigen::Ref<const Eigen::MatrixXd>& minus) {
  if (plus.cols() == 0 || minus.cols() == 0)
    throw std::invalid_argument("centroid_distance: empty class");
  return (plus.rowwise().mean() - minus.rowwise().mean()).norm();
}

MetricTriple metric_triple(const ClassManifolds& cm) {
  MetricTriple t;
  t.r_plus = gyration_radius(cm.plus);
  t.r_minus = gyration_radius(cm.minus);
  t.d = centroid_distance(cm.plus, cm.minus);
  return t;
}

MetricTriple metric_triple(const MlpModel& m, const Dataset& ds, int layer) {
  return metric_triple(manifolds(m, ds, layer));
}

}  // namespace stragglers
