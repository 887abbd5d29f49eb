#include "stragglers/scaling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include "stragglers/dataio.hpp"
#include "stragglers/digest.hpp"
#include "stragglers/parallel.hpp"
#include "stragglers/rng.hpp"

namespace stragglers {

namespace {

/// Nelder-Mead on an unconstrained objective. Standard coefficients
/// (reflect 1, expand 2, contract 0.5, shrink 0.5); stops when the simplex
/// function spread and diameter fall below tight tolerances.
struct SimplexResult {
  std::vector<double> x;
  double f = 0.0;
};

SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& fn,
                          std::vector<double> x0, double step, int max_iters) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> xs(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) xs[i + 1][i] += step;
  std::vector<double> fs(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fs[i] = fn(xs[i]);

  std::vector<std::size_t> order(n + 1);
  for (int iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    const std::size_t best = order[0], worst = order[n], second_worst = order[n - 1];

    double diam = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      diam = std::max(diam, std::abs(xs[worst][i] - xs[best][i]));
    if (std::abs(fs[worst] - fs[best]) < 1e-16 && diam < 1e-12) break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t k = 0; k < n; ++k) centroid[k] += xs[i][k];
    }
    for (double& c : centroid) c /= double(n);

    auto combine = [&](double coeff) {
      std::vector<double> x(n);
      for (std::size_t k = 0; k < n; ++k)
        x[k] = centroid[k] + coeff * (xs[worst][k] - centroid[k]);
      return x;
    };

    const auto reflected = combine(-1.0);
    const double f_ref = fn(reflected);
    if (f_ref < fs[best]) {
      const auto expanded = combine(-2.0);
      const double f_exp = fn(expanded);
      if (f_exp < f_ref) {
        xs[worst] = expanded;
        fs[worst] = f_exp;
      } else {
        xs[worst] = reflected;
        fs[worst] = f_ref;
      }
    } else if (f_ref < fs[second_worst]) {
      xs[worst] = reflected;
      fs[worst] = f_ref;
    } else {
      const bool outside = f_ref < fs[worst];
      const auto contracted = combine(outside ? -0.5 : 0.5);
      const double f_con = fn(contracted);
      if (f_con < std::min(f_ref, fs[worst])) {
        xs[worst] = contracted;
        fs[worst] = f_con;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t k = 0; k < n; ++k)
            xs[i][k] = xs[best][k] + 0.5 * (xs[i][k] - xs[best][k]);
          fs[i] = fn(xs[i]);
        }
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  return {xs[best], fs[best]};
}

// Fit parameters travel through an unconstrained space:
// x = (logit(phi_inf), ln P0, ln gamma).
std::array<double, 3> decode(const std::vector<double>& x) {
  return {1.0 / (1.0 + std::exp(-x[0])), std::exp(x[1]), std::exp(x[2])};
}

std::vector<double> encode(double phi_inf, double p0, double gamma) {
  phi_inf = std::clamp(phi_inf, 1e-12, 1.0 - 1e-12);
  return {std::log(phi_inf / (1.0 - phi_inf)), std::log(p0), std::log(gamma)};
}

}  // namespace

double scaling_model(double p, const ScalingFit& fit) {
  return fit.phi_inf * (1.0 - std::pow(p / fit.p0, -fit.gamma));
}

ScalingFit fit_phi(const std::vector<PhiPoint>& points, std::uint64_t seed, int restarts) {
  std::set<double> distinct;
  for (const auto& pt : points) distinct.insert(pt.p);
  if (distinct.size() < 3)
    throw std::invalid_argument("fit_phi: need at least 3 distinct sizes for 3 parameters");

  const bool weighted =
      std::all_of(points.begin(), points.end(), [](const PhiPoint& p) { return p.sigma_phi > 0; });

  ScalingFit fit;
  fit.weighted = weighted;

  double max_phi = points.front().phi, min_phi = points.front().phi, min_p = points.front().p;
  for (const auto& pt : points) {
    max_phi = std::max(max_phi, pt.phi);
    min_phi = std::min(min_phi, pt.phi);
    min_p = std::min(min_p, pt.p);
  }
  if (max_phi == min_phi) {
    fit.degenerate = true;
    fit.phi_inf = max_phi;
    fit.p0 = min_p;
    fit.gamma = 0.0;
    return fit;
  }

  auto objective = [&](const std::vector<double>& x) {
    const auto [phi_inf, p0, gamma] = decode(x);
    if (!std::isfinite(phi_inf) || !std::isfinite(p0) || !std::isfinite(gamma)) return 1e300;
    double chi2 = 0.0;
    for (const auto& pt : points) {
      const double model = phi_inf * (1.0 - std::pow(pt.p / p0, -gamma));
      const double r = weighted ? (model - pt.phi) / pt.sigma_phi : (model - pt.phi);
      chi2 += r * r;
    }
    return std::isfinite(chi2) ? chi2 : 1e300;
  };

  const std::vector<double> x0 = encode(std::min(1.05 * max_phi, 0.999), min_p, 1.0);
  SimplexResult best = nelder_mead(objective, x0, 0.5, 4000);
  Rng rng(seed);
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> xr = x0;
    for (auto& v : xr) v += rng.uniform(-2.0, 2.0);
    const SimplexResult cand = nelder_mead(objective, xr, 0.5, 4000);
    if (cand.f < best.f) best = cand;
  }
  // Polish from the incumbent with a small simplex.
  for (int polish = 0; polish < 3; ++polish) {
    const SimplexResult refined = nelder_mead(objective, best.x, 1e-4, 2000);
    if (refined.f < best.f) best = refined;
  }

  const auto [phi_inf, p0, gamma] = decode(best.x);
  fit.phi_inf = phi_inf;
  fit.p0 = p0;
  fit.gamma = gamma;
  fit.sum_sq_residual = best.f;
  fit.restarts = restarts;
  return fit;
}

PhiVsSizeResult phi_vs_size(const RawDataset& train_raw, const Dataset& test_set,
                            const std::vector<std::int64_t>& sizes, const RunSpec& spec,
                            int runs_per_size, std::uint64_t seed_root,
                            double min_prominence_frac, int threads) {
  if (runs_per_size < 1) throw std::invalid_argument("phi_vs_size: runs_per_size must be >= 1");

  // Pool duplicate size entries.
  std::map<std::int64_t, std::vector<double>> phi_by_size;
  PhiVsSizeResult result;
  std::mutex mutex;

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::int64_t p = sizes[si];
    const Dataset train_set = standardize(subsample(train_raw, p, 0));
    RunSpec sized_spec = spec;
    sized_spec.arch.front() = train_set.dim();

    parallel_runs(runs_per_size, threads, [&](std::int64_t run) {
      const std::uint64_t seed =
          derive_seed(seed_root, (std::uint64_t(si) << 32) | std::uint64_t(run));
      const TrainResult res = run_training(sized_spec, train_set, test_set, seed);
      const InversionReport rep = detect_inversion(res.log, min_prominence_frac);
      std::lock_guard<std::mutex> lock(mutex);
      if (rep.converged) {
        phi_by_size[p].push_back(rep.phi);
        result.per_run_phi.push_back(rep.phi);
      } else {
        result.unconverged_runs += 1;
      }
    });
  }

  for (const auto& [p, phis] : phi_by_size) {
    PhiPoint pt;
    pt.p = double(p);
    pt.n_runs = int(phis.size());
    double s = 0.0;
    for (double v : phis) s += v;
    pt.phi = s / double(phis.size());
    if (phis.size() > 1) {
      double ss = 0.0;
      for (double v : phis) ss += (v - pt.phi) * (v - pt.phi);
      pt.sigma_phi = std::sqrt(ss / double(phis.size() - 1));
    } else {
      pt.sigma_phi = 0.0;  // single seed: unweighted fit fallback
    }
    result.points.push_back(pt);
  }
  return result;
}

void write_fit_report(const ScalingFit& fit, const std::vector<PhiPoint>& points,
                      const std::filesystem::path& path) {
  std::string table;
  for (const auto& pt : points) {
    char row[128];
    std::snprintf(row, sizeof(row), "%g,%.17g,%.17g,%d\n", pt.p, pt.phi, pt.sigma_phi, pt.n_runs);
    table += row;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "STRGLAB.FITREPORT.v1\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "phi_inf = %.17g\np0 = %.17g\ngamma = %.17g\n", fit.phi_inf,
                fit.p0, fit.gamma);
  out << buf;
  std::snprintf(buf, sizeof(buf), "sum_sq_residual = %.17g\nrestarts = %d\n", fit.sum_sq_residual,
                fit.restarts);
  out << buf;
  out << "weighting = " << (fit.weighted ? "1/sigma^2" : "none") << "\n";
  out << "degenerate = " << (fit.degenerate ? "true" : "false") << "\n";
  out << "input_digest = " << fnv1a_hex(table.data(), table.size()) << "\n";
  out << "# columns: P,phi,sigma_phi,n_runs\n";
  out << table;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace stragglers
