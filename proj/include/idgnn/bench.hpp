#pragma once

// Per-window training cost of implicit SGD (forward sensitivities or adjoint)
// versus the single-loop bilevel step on random graphs of growing size, with
// log-log slope fits of time against node count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "idgnn/bilevel.hpp"
#include "idgnn/generators.hpp"
#include "idgnn/implicit_grad.hpp"

namespace idgnn {

struct BenchConfig {
  std::vector<Index> sizes{50, 100, 200};
  Index dim = 16;
  Index snapshots = 5;
  Index features = 8;
  Index classes = 3;
  double avg_degree = 8.0;
  /// Dynamic graphs per epoch; time per window = epoch time / windows.
  Index windows = 1;
  /// Timed epochs per size for the cheap methods, after one warm-up epoch.
  int repeats = 5;
  /// Timed epochs per size for forward-sensitivity SGD (no warm-up).
  int oracle_repeats = 1;
  std::uint64_t seed = 0;
  /// Include implicit SGD with forward sensitivities (dense, quadratic in n).
  bool oracle = true;
  /// Include implicit SGD with the adjoint solve.
  bool adjoint = false;
  double kappa = 0.95;
  double fp_tol = 1e-6;
};

struct BenchRow {
  std::string method;
  Index n = 0;
  int repeat = 0;
  double seconds_per_window = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  /// method -> median seconds per window, aligned with BenchConfig::sizes.
  std::map<std::string, std::vector<double>> medians;
  /// method -> least-squares slope of log(median) against log(n).
  std::map<std::string, double> slopes;
};

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_slope: need two or more paired points");
  const double k = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (Index i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = k * sxx - sx * sx;
  if (den == 0.0) throw InvalidArgument("fit_slope: x values are all equal");
  return (k * sxy - sx * sy) / den;
}

inline double log_log_slope(const std::vector<Index>& n, const std::vector<double>& t) {
  std::vector<double> lx, ly;
  for (Index i = 0; i < n.size(); ++i) {
    lx.push_back(std::log(static_cast<double>(n[i])));
    ly.push_back(std::log(t[i]));
  }
  return fit_slope(lx, ly);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median: empty input");
  std::sort(v.begin(), v.end());
  const Index m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline BenchResult run_bench(const BenchConfig& cfg) {
  Eigen::setNbThreads(1);
  if (cfg.repeats < 1 || cfg.oracle_repeats < 1 || cfg.windows < 1 || cfg.sizes.empty()) {
    throw InvalidArgument("run_bench: empty workload");
  }
  BenchResult out;
  std::vector<std::string> methods;
  if (cfg.oracle) methods.push_back("sgd-ift-forward");
  if (cfg.adjoint) methods.push_back("sgd-ift-adjoint");
  methods.push_back("bilevel");

  using clock = std::chrono::steady_clock;
  for (Index n : cfg.sizes) {
    std::vector<DynamicGraph> graphs;
    for (Index w = 0; w < cfg.windows; ++w) {
      RandomGraphSpec spec;
      spec.nodes = n;
      spec.snapshots = cfg.snapshots;
      spec.features = cfg.features;
      spec.classes = cfg.classes;
      spec.avg_degree = cfg.avg_degree;
      graphs.push_back(gen_random_dynamic(spec, cfg.seed + 1000 * n + w));
    }
    std::vector<std::vector<std::uint8_t>> masks;
    for (const auto& g : graphs) masks.push_back(g.labeled);

    ModelShape shape{cfg.dim, cfg.features, cfg.snapshots, cfg.classes};
    IdgnnParams p0 = init_params(shape, cfg.seed);
    const auto radii = projection_radii(p0, critical_norms(graphs), cfg.kappa);
    p0 = enforce_wellposedness(std::move(p0), radii);

    for (const auto& method : methods) {
      std::vector<double> samples;
      if (method == "bilevel") {
        std::vector<const DynamicGraph*> gp;
        std::vector<const std::vector<std::uint8_t>*> mp;
        for (Index w = 0; w < graphs.size(); ++w) {
          gp.push_back(&graphs[w]);
          mp.push_back(&masks[w]);
        }
        OptimizerState opt;
        opt.radii = radii;
        IdgnnParams p = p0;
        BilevelTrainer trainer(p, gp, opt);
        auto epoch = [&] {
          for (Index w = 0; w < graphs.size(); ++w) trainer.step(p, {w}, gp, mp);
        };
        epoch();  // warm-up
        for (int r = 0; r < cfg.repeats; ++r) {
          const auto t0 = clock::now();
          epoch();
          samples.push_back(std::chrono::duration<double>(clock::now() - t0).count() /
                            static_cast<double>(graphs.size()));
        }
      } else {
        SgdHyper hyper;
        hyper.fixed_point = {1.0, cfg.fp_tol, 500};
        hyper.sensitivity = {cfg.fp_tol, 500};
        hyper.method = method == "sgd-ift-forward" ? GradientMethod::kForwardSensitivity : GradientMethod::kAdjoint;
        hyper.radii = radii;
        IdgnnParams p = p0;
        std::vector<std::vector<DenseMatrix>> warm(graphs.size());
        auto epoch = [&] {
          for (Index w = 0; w < graphs.size(); ++w) {
            p = sgd_train_step(std::move(p), {{&graphs[w], &masks[w], &warm[w], w}}, hyper).params;
          }
        };
        const bool oracle_method = hyper.method == GradientMethod::kForwardSensitivity;
        if (!oracle_method) epoch();  // warm-up
        for (int r = 0; r < (oracle_method ? cfg.oracle_repeats : cfg.repeats); ++r) {
          const auto t0 = clock::now();
          epoch();
          samples.push_back(std::chrono::duration<double>(clock::now() - t0).count() /
                            static_cast<double>(graphs.size()));
        }
      }
      for (int r = 0; r < static_cast<int>(samples.size()); ++r) out.rows.push_back({method, n, r, samples[r]});
      out.medians[method].push_back(median(samples));
    }
  }
  if (cfg.sizes.size() >= 2) {
    for (const auto& [method, med] : out.medians) out.slopes[method] = log_log_slope(cfg.sizes, med);
  }
  return out;
}

inline std::string timings_csv(const BenchResult& r) {
  std::string out = "method,n,repeat,seconds_per_window\n";
  char buf[64];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.9g", row.seconds_per_window);
    out += row.method + ',' + std::to_string(row.n) + ',' + std::to_string(row.repeat) + ',' + buf + '\n';
  }
  return out;
}

inline nlohmann::ordered_json to_json(const BenchConfig& c, const BenchResult& r) {
  nlohmann::ordered_json j;
  j["sizes"] = c.sizes;
  j["dim"] = c.dim;
  j["snapshots"] = c.snapshots;
  j["avg_degree"] = c.avg_degree;
  j["windows"] = c.windows;
  j["repeats"] = c.repeats;
  j["oracle_repeats"] = c.oracle_repeats;
  j["median_seconds_per_window"] = r.medians;
  j["log_log_slope"] = r.slopes;
  return j;
}

}  // namespace idgnn
