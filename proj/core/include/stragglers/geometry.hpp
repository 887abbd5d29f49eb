#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "stragglers/dataset.hpp"
#include "stragglers/network.hpp"

namespace stragglers {

/// A hidden representation with no direction to project.
struct ZeroNormError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unit-sphere projections of one epoch's hidden representations,
/// partitioned by true label. One column per point, unit norm.
struct ClassManifolds {
  Eigen::MatrixXd plus;
  Eigen::MatrixXd minus;
  int epoch = 0;
};

struct MetricTriple {
  double r_plus = 0.0;
  double r_minus = 0.0;
  double d = 0.0;
};

Eigen::VectorXd project_unit(const Eigen::Ref<const Eigen::VectorXd>& h);

/// Project every column of `h` onto the unit sphere, in place.
void project_unit_columns(Eigen::MatrixXd& h);

ClassManifolds manifolds(const MlpModel& m, const Dataset& ds, int layer = 1);

/// Partition pre-computed layer activations (one column per example).
ClassManifolds manifolds_from_hidden(const Eigen::Ref<const Eigen::MatrixXd>& hidden,
                                     const Eigen::Ref<const Eigen::VectorXi>& labels);

/// Root of the normalized pairwise squared-distance double sum; evaluated
/// through the equivalent mean-squared-distance-to-centroid form.
double gyration_radius(const Eigen::Ref<const Eigen::MatrixXd>& points);

double centroid_distance(const Eigen::Ref<const Eigen::MatrixXd>& plus,
                         const Eigen::Ref<const Eigen::MatrixXd>& minus);

MetricTriple metric_triple(const ClassManifolds& cm);
MetricTriple metric_triple(const MlpModel& m, const Dataset& ds, int layer = 1);

}  // namespace stragglers
