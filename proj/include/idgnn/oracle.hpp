#pragma once

// Cross-check of the three gradient paths on tiny instances: forward
// sensitivities, the adjoint solve and central finite differences of the
// loss at a tightly solved fixed point.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "idgnn/generators.hpp"
#include "idgnn/implicit_grad.hpp"

namespace idgnn {

struct OracleConfig {
  Index instances = 5;
  Index nodes = 5;
  Index dim = 4;
  Index snapshots = 3;
  Index features = 3;
  Index classes = 3;
  std::uint64_t seed = 0;
  /// Relu pre-activations closer than this to 0 make an instance rejected.
  double kink_margin = 1e-3;
  double fd_step = 1e-6;
  double tolerance = 1e-4;
};

struct OracleReport {
  Index instances = 0;
  Index rejected = 0;
  double forward_vs_adjoint = 0.0;
  double forward_vs_fd = 0.0;
  double adjoint_vs_fd = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

/// max|a - b| / max(max|a|, max|b|)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

namespace detail {

inline std::vector<double> wv_entries(const ParamGradients& g) {
  std::vector<double> out;
  for (const auto& m : g.dW) out.insert(out.end(), m.values().begin(), m.values().end());
  for (const auto& m : g.dV) out.insert(out.end(), m.values().begin(), m.values().end());
  return out;
}

inline double min_abs_pre_activation(const IdgnnParams& p, const DynamicGraph& g, const std::vector<DenseMatrix>& z) {
  double m = std::numeric_limits<double>::infinity();
  const Index T = g.num_snapshots();
  for (Index t = 0; t < T; ++t) {
    const auto& s = g.snapshots[t];
    const DenseMatrix pre = pre_activation(p.w(t), z[prev_snapshot(t, T)], s.adjacency, p.v(t), s.features);
    for (double v : pre.values()) m = std::min(m, std::abs(v));
  }
  return m;
}

}  // namespace detail

inline OracleReport oracle_check(const OracleConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  OracleReport rep;
  const FixedPointConfig tight{1.0, 1e-14, 5000};
  const SensitivityConfig sens{1e-14, 5000};
  std::uint64_t seed = cfg.seed;
  while (rep.instances < cfg.instances) {
    if (rep.rejected > 100 * cfg.instances) throw Error("oracle_check: could not sample kink-free instances");
    RandomGraphSpec spec;
    spec.nodes = cfg.nodes;
    spec.snapshots = cfg.snapshots;
    spec.features = cfg.features;
    spec.classes = cfg.classes;
    spec.avg_degree = 2.0;
    const DynamicGraph g = gen_random_dynamic(spec, seed);
    ModelShape shape{cfg.dim, cfg.features, cfg.snapshots, cfg.classes};
    IdgnnParams p = enforce_wellposedness(init_params(shape, seed + 7), {g}, 0.9);
    for (auto& w : p.W) w *= 4.0;
    p = enforce_wellposedness(std::move(p), {g}, 0.9);
    ++seed;

    const FixedPointResult fp = fixed_point_solve(p, g, tight);
    if (detail::min_abs_pre_activation(p, g, fp.Z) < cfg.kink_margin) {
      ++rep.rejected;
      continue;
    }
    const auto& mask = g.labeled;
    const auto fwd = detail::wv_entries(implicit_loss_grad(fp, p, g, mask, GradientMethod::kForwardSensitivity, sens).second);
    const auto adj = detail::wv_entries(implicit_loss_grad(fp, p, g, mask, GradientMethod::kAdjoint, sens).second);

    auto loss_at = [&](const IdgnnParams& q) {
      const FixedPointResult f = fixed_point_solve(q, g, tight);
      return task_loss(predict_head(q.head, f.Z.back()), g, mask).loss;
    };
    std::vector<double> fd;
    auto probe = [&](auto select) {
      IdgnnParams q = p;
      double& x = select(q);
      const double x0 = x;
      x = x0 + cfg.fd_step;
      const double up = loss_at(q);
      x = x0 - cfg.fd_step;
      const double down = loss_at(q);
      fd.push_back((up - down) / (2.0 * cfg.fd_step));
    };
    for (Index s = 0; s < p.W.size(); ++s)
      for (Index k = 0; k < p.W[s].size(); ++k) probe([&](IdgnnParams& q) -> double& { return q.W[s].data()[k]; });
    for (Index s = 0; s < p.V.size(); ++s)
      for (Index k = 0; k < p.V[s].size(); ++k) probe([&](IdgnnParams& q) -> double& { return q.V[s].data()[k]; });

    rep.forward_vs_adjoint = std::max(rep.forward_vs_adjoint, relative_error(fwd, adj));
    rep.forward_vs_fd = std::max(rep.forward_vs_fd, relative_error(fwd, fd));
    rep.adjoint_vs_fd = std::max(rep.adjoint_vs_fd, relative_error(adj, fd));
    ++rep.instances;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.pass = rep.forward_vs_adjoint < cfg.tolerance && rep.forward_vs_fd < cfg.tolerance &&
             rep.adjoint_vs_fd < cfg.tolerance;
  return rep;
}

}  // namespace idgnn
