#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stragglers/dataset.hpp"
#include "stragglers/dynamics.hpp"

namespace stragglers {

/// One observation of the straggler fraction at training-set size P.
struct PhiPoint {
  double p = 0.0;
  double phi = 0.0;
  double sigma_phi = 0.0;  // <= 0 means unknown (unweighted fit)
  int n_runs = 1;
};

/// Parameters of phi(P) = phi_inf * (1 - (P/P0)^(-gamma)).
struct ScalingFit {
  double phi_inf = 0.0;
  double p0 = 0.0;
  double gamma = 0.0;
  double sum_sq_residual = 0.0;
  int restarts = 0;
  bool weighted = false;
  bool degenerate = false;  // all phi equal: gamma unidentifiable
};

/// Weighted least squares via Nelder-Mead from a documented start
/// (phi_inf = 1.05 max phi, gamma = 1, P0 = min P) plus random restarts;
/// the best of all starts is returned.
ScalingFit fit_phi(const std::vector<PhiPoint>& points, std::uint64_t seed = 0, int restarts = 10);

double scaling_model(double p, const ScalingFit& fit);

struct PhiVsSizeResult {
  std::vector<PhiPoint> points;          // one per distinct size, sorted by P
  std::vector<double> per_run_phi;       // all converged-run values, diagnostics
  int unconverged_runs = 0;
};

/// Run the training pipeline at each size and aggregate phi across seeds.
/// Duplicate sizes are pooled; unconverged runs are excluded and counted.
PhiVsSizeResult phi_vs_size(const RawDataset& train_raw, const Dataset& test_set,
                            const std::vector<std::int64_t>& sizes, const RunSpec& spec,
                            int runs_per_size, std::uint64_t seed_root,
                            double min_prominence_frac = 0.02, int threads = 1);

/// Structured-text fit report (parameters, residual, restart count,
/// weighting choice, input-table digest).
void write_fit_report(const ScalingFit& fit, const std::vector<PhiPoint>& points,
                      const std::filesystem::path& path);

}  // namespace stragglers
