#pragma once

// The implicit dynamic graph model. Snapshot t computes
//
//   Z^t = act(W^t Z^{prev(t)} A^t + V X^t),   prev(t) = t-1, prev(first) = last,
//
// and the embeddings are the fixed point of that coupled system. Indices are
// 0-based throughout the code.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "idgnn/error.hpp"
#include "idgnn/graph.hpp"
#include "idgnn/tensor.hpp"

namespace idgnn {

enum class Activation { kRelu, kTanh };

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline double activate(Activation a, double x) noexcept {
  return a == Activation::kRelu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

/// First derivative; relu'(0) is taken as 0.
inline double activate_d1(Activation a, double x) noexcept {
  if (a == Activation::kRelu) return x > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

inline double activate_d2(Activation a, double x) noexcept {
  if (a == Activation::kRelu) return 0.0;
  const double t = std::tanh(x);
  return -2.0 * t * (1.0 - t * t);
}

inline DenseMatrix activate(Activation a, DenseMatrix m) {
  for (double& v : m.values()) v = activate(a, v);
  return m;
}

inline DenseMatrix activate_d1(Activation a, const DenseMatrix& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (Index k = 0; k < m.size(); ++k) out.data()[k] = activate_d1(a, m.data()[k]);
  return out;
}

/// Weight tying across snapshots. kIdgnn keeps one W per snapshot and a shared V.
enum class Sharing { kIdgnn, kShareBoth, kShareW, kNotShare };

inline std::string to_string(Sharing s) {
  switch (s) {
    case Sharing::kIdgnn: return "idgnn";
    case Sharing::kShareBoth: return "share-both";
    case Sharing::kShareW: return "share-w";
    case Sharing::kNotShare: return "not-share";
  }
  return "idgnn";
}

inline Sharing parse_sharing(const std::string& s) {
  if (s == "idgnn" || s == "share-v") return Sharing::kIdgnn;
  if (s == "share-both") return Sharing::kShareBoth;
  if (s == "share-w") return Sharing::kShareW;
  if (s == "not-share") return Sharing::kNotShare;
  throw InvalidArgument("unknown sharing variant '" + s + "'");
}

/// Affine prediction head: weight (outputs x d), bias (outputs).
struct HeadParams {
  DenseMatrix weight;
  std::vector<double> bias;
};

struct IdgnnParams {
  /// One matrix per snapshot, or a single shared one.
  std::vector<DenseMatrix> W;
  /// One shared matrix, or one per snapshot.
  std::vector<DenseMatrix> V;
  HeadParams head;
  Activation activation = Activation::kRelu;
  Index snapshots = 0;

  Index dim() const noexcept { return W.empty() ? 0 : W.front().rows(); }
  Index num_features() const noexcept { return V.empty() ? 0 : V.front().cols(); }
  Index num_outputs() const noexcept { return head.weight.rows(); }

  Index w_slot(Index t) const noexcept { return W.size() == 1 ? 0 : t; }
  Index v_slot(Index t) const noexcept { return V.size() == 1 ? 0 : t; }
  const DenseMatrix& w(Index t) const noexcept { return W[w_slot(t)]; }
  const DenseMatrix& v(Index t) const noexcept { return V[v_slot(t)]; }

  bool all_finite() const {
    for (const auto& m : W)
      if (!m.all_finite()) return false;
    for (const auto& m : V)
      if (!m.all_finite()) return false;
    for (double b : head.bias)
      if (!std::isfinite(b)) return false;
    return head.weight.all_finite();
  }

  friend bool operator==(const IdgnnParams& a, const IdgnnParams& b) {
    return a.W == b.W && a.V == b.V && a.head.weight == b.head.weight && a.head.bias == b.head.bias &&
           a.activation == b.activation && a.snapshots == b.snapshots;
  }
};

/// Same layout as IdgnnParams, holding derivatives.
struct ParamGradients {
  std::vector<DenseMatrix> dW;
  std::vector<DenseMatrix> dV;
  DenseMatrix d_head_weight;
  std::vector<double> d_head_bias;

  static ParamGradients zeros_like(const IdgnnParams& p) {
    ParamGradients g;
    for (const auto& m : p.W) g.dW.emplace_back(m.rows(), m.cols());
    for (const auto& m : p.V) g.dV.emplace_back(m.rows(), m.cols());
    g.d_head_weight = DenseMatrix(p.head.weight.rows(), p.head.weight.cols());
    g.d_head_bias.assign(p.head.bias.size(), 0.0);
    return g;
  }

  ParamGradients& axpy(double s, const ParamGradients& o) {
    for (Index k = 0; k < dW.size(); ++k) dW[k].axpy(s, o.dW[k]);
    for (Index k = 0; k < dV.size(); ++k) dV[k].axpy(s, o.dV[k]);
    d_head_weight.axpy(s, o.d_head_weight);
    for (Index k = 0; k < d_head_bias.size(); ++k) d_head_bias[k] += s * o.d_head_bias[k];
    return *this;
  }

  ParamGradients& scale(double s) {
    for (auto& m : dW) m *= s;
    for (auto& m : dV) m *= s;
    d_head_weight *= s;
    for (double& b : d_head_bias) b *= s;
    return *this;
  }

  bool all_finite() const {
    for (const auto& m : dW)
      if (!m.all_finite()) return false;
    for (const auto& m : dV)
      if (!m.all_finite()) return false;
    for (double b : d_head_bias)
      if (!std::isfinite(b)) return false;
    return d_head_weight.all_finite();
  }
};

/// Flattens W slots, V slots, head weight and head bias, in that order.
inline std::vector<double> flatten(const IdgnnParams& p) {
  std::vector<double> out;
  for (const auto& m : p.W) out.insert(out.end(), m.values().begin(), m.values().end());
  for (const auto& m : p.V) out.insert(out.end(), m.values().begin(), m.values().end());
  out.insert(out.end(), p.head.weight.values().begin(), p.head.weight.values().end());
  out.insert(out.end(), p.head.bias.begin(), p.head.bias.end());
  return out;
}

inline std::vector<double> flatten(const ParamGradients& g) {
  std::vector<double> out;
  for (const auto& m : g.dW) out.insert(out.end(), m.values().begin(), m.values().end());
  for (const auto& m : g.dV) out.insert(out.end(), m.values().begin(), m.values().end());
  out.insert(out.end(), g.d_head_weight.values().begin(), g.d_head_weight.values().end());
  out.insert(out.end(), g.d_head_bias.begin(), g.d_head_bias.end());
  return out;
}

/// Inverse of flatten(IdgnnParams) on a parameter set of the same layout.
inline void assign_flat(IdgnnParams& p, std::span<const double> flat) {
  Index k = 0;
  auto take = [&](std::span<double> dst) {
    if (k + dst.size() > flat.size()) throw DimensionError("assign_flat: vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + dst.size()),
              dst.begin());
    k += dst.size();
  };
  for (auto& m : p.W) take(m.values());
  for (auto& m : p.V) take(m.values());
  take(p.head.weight.values());
  take(p.head.bias);
  if (k != flat.size()) throw DimensionError("assign_flat: vector too long");
}

struct ModelShape {
  Index dim = 16;
  Index features = 0;
  Index snapshots = 0;
  Index outputs = 0;
  Sharing sharing = Sharing::kIdgnn;
  Activation activation = Activation::kRelu;
};

/// Uniform [-a, a] initialization with a = 0.5 / sqrt(d); head bias zero.
/// Callers project with enforce_wellposedness before use.
inline IdgnnParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.dim == 0 || shape.snapshots == 0) throw InvalidArgument("init_params: dim and snapshots must be positive");
  std::mt19937_64 rng(seed);
  const double a = 0.5 / std::sqrt(static_cast<double>(shape.dim));
  std::uniform_real_distribution<double> dist(-a, a);
  auto draw = [&](Index r, Index c) {
    DenseMatrix m(r, c);
    for (double& v : m.values()) v = dist(rng);
    return m;
  };
  const bool share_w = shape.sharing == Sharing::kShareBoth || shape.sharing == Sharing::kShareW;
  const bool share_v = shape.sharing == Sharing::kShareBoth || shape.sharing == Sharing::kIdgnn;

  IdgnnParams p;
  p.activation = shape.activation;
  p.snapshots = shape.snapshots;
  for (Index k = 0; k < (share_w ? 1 : shape.snapshots); ++k) p.W.push_back(draw(shape.dim, shape.dim));
  for (Index k = 0; k < (share_v ? 1 : shape.snapshots); ++k) p.V.push_back(draw(shape.dim, shape.features));
  p.head.weight = draw(shape.outputs, shape.dim);
  p.head.bias.assign(shape.outputs, 0.0);
  return p;
}

namespace detail {

inline void check_model_graph(const IdgnnParams& p, const DynamicGraph& g) {
  if (p.snapshots != g.num_snapshots()) {
    throw DimensionError("model has " + std::to_string(p.snapshots) + " snapshots, graph has " +
                         std::to_string(g.num_snapshots()));
  }
  if (p.num_features() != g.num_features()) throw DimensionError("model/graph feature dimension mismatch");
}

inline void check_blocks(const IdgnnParams& p, const DynamicGraph& g, const std::vector<DenseMatrix>& zs) {
  if (zs.size() != g.num_snapshots()) throw DimensionError("expected one embedding block per snapshot");
  for (const auto& z : zs) {
    if (z.rows() != p.dim() || z.cols() != g.num_nodes()) throw DimensionError("embedding block must be d x n");
  }
}

}  // namespace detail

/// W Z_prev A + V X, the pre-activation of one layer.
inline DenseMatrix pre_activation(const DenseMatrix& w, const DenseMatrix& z_prev, const SparseMatrix& a,
                                  const DenseMatrix& v, const DenseMatrix& x) {
  if (v.cols() != x.rows() || v.rows() != w.rows() || x.cols() != a.cols()) {
    throw DimensionError("layer_step: V " + detail::shape_str(v.rows(), v.cols()) + ", X " +
                         detail::shape_str(x.rows(), x.cols()));
  }
  DenseMatrix p = kron_apply({w, a}, z_prev);
  p += matmul(v, x);
  return p;
}

/// act(W Z_prev A + V X)
inline DenseMatrix layer_step(const DenseMatrix& w, const DenseMatrix& z_prev, const SparseMatrix& a,
                              const DenseMatrix& v, const DenseMatrix& x, Activation act) {
  return activate(act, pre_activation(w, z_prev, a, v, x));
}

inline DenseMatrix layer_step(const IdgnnParams& p, const DynamicGraph& g, Index t, const DenseMatrix& z_prev) {
  const auto& s = g.snapshots[t];
  return layer_step(p.w(t), z_prev, s.adjacency, p.v(t), s.features, p.activation);
}

/// One simultaneous update of every block: block t reads the old block prev(t).
inline std::vector<DenseMatrix> coupled_sweep(const IdgnnParams& p, const DynamicGraph& g,
                                              const std::vector<DenseMatrix>& zs) {
  detail::check_model_graph(p, g);
  detail::check_blocks(p, g, zs);
  const Index T = g.num_snapshots();
  std::vector<DenseMatrix> out;
  out.reserve(T);
  for (Index t = 0; t < T; ++t) out.push_back(layer_step(p, g, t, zs[prev_snapshot(t, T)]));
  return out;
}

struct FixedPointConfig {
  /// Damping in (0, 1]: Z <- (1 - damping) Z + damping * sweep(Z).
  double damping = 1.0;
  /// Max-abs residual ||sweep(Z) - Z|| at which iteration stops.
  double tol = 1e-6;
  int max_sweeps = 500;
};

struct FixedPointResult {
  std::vector<DenseMatrix> Z;
  /// Number of damped updates applied before the residual test passed.
  int sweeps = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<double> residual_history;
};

inline std::vector<DenseMatrix> zero_blocks(const IdgnnParams& p, const DynamicGraph& g) {
  return std::vector<DenseMatrix>(g.num_snapshots(), DenseMatrix(p.dim(), g.num_nodes()));
}

/// Damped fixed-point iteration that reports non-convergence instead of throwing.
inline FixedPointResult fixed_point_iterate(const IdgnnParams& p, const DynamicGraph& g, const FixedPointConfig& cfg,
                                            std::optional<std::vector<DenseMatrix>> init = std::nullopt) {
  if (!(cfg.tol > 0.0)) throw InvalidArgument("FixedPointConfig: tol must be positive");
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0)) throw InvalidArgument("FixedPointConfig: damping must be in (0, 1]");
  FixedPointResult r;
  r.Z = init ? std::move(*init) : zero_blocks(p, g);
  for (;;) {
    std::vector<DenseMatrix> next = coupled_sweep(p, g, r.Z);
    double res = 0.0;
    for (Index t = 0; t < next.size(); ++t) {
      for (Index k = 0; k < next[t].size(); ++k) res = std::max(res, std::abs(next[t].data()[k] - r.Z[t].data()[k]));
    }
    r.residual_history.push_back(res);
    r.residual = res;
    if (!std::isfinite(res)) break;
    if (res <= cfg.tol) {
      r.converged = true;
      r.Z = std::move(next);
      break;
    }
    if (r.sweeps >= cfg.max_sweeps) break;
    if (cfg.damping == 1.0) {
      r.Z = std::move(next);
    } else {
      for (Index t = 0; t < next.size(); ++t) {
        r.Z[t] *= (1.0 - cfg.damping);
        r.Z[t].axpy(cfg.damping, next[t]);
      }
    }
    ++r.sweeps;
  }
  return r;
}

/// Fixed-point embeddings; throws ConvergenceError (with residual history)
/// when the sweep budget runs out.
inline FixedPointResult fixed_point_solve(const IdgnnParams& p, const DynamicGraph& g, const FixedPointConfig& cfg,
                                          std::optional<std::vector<DenseMatrix>> init = std::nullopt) {
  FixedPointResult r = fixed_point_iterate(p, g, cfg, std::move(init));
  if (!r.converged) {
    throw ConvergenceError("fixed_point_solve: no convergence after " + std::to_string(r.sweeps) +
                               " sweeps (residual " + std::to_string(r.residual) + ")",
                           r.residual_history, r.residual);
  }
  return r;
}

/// Intermediate values of one pass through the snapshot chain, starting from
/// the last block: inputs[0] = z, inputs[t+1] = act(pre[t]).
struct ChainTape {
  std::vector<DenseMatrix> inputs;  // T + 1 entries
  std::vector<DenseMatrix> pre;     // T entries

  const DenseMatrix& output() const { return inputs.back(); }
};

inline ChainTape chain_forward(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g) {
  detail::check_model_graph(p, g);
  if (z.rows() != p.dim() || z.cols() != g.num_nodes()) throw DimensionError("phi: z must be d x n");
  const Index T = g.num_snapshots();
  ChainTape tape;
  tape.inputs.reserve(T + 1);
  tape.pre.reserve(T);
  tape.inputs.push_back(z);
  for (Index t = 0; t < T; ++t) {
    const auto& s = g.snapshots[t];
    tape.pre.push_back(pre_activation(p.w(t), tape.inputs.back(), s.adjacency, p.v(t), s.features));
    tape.inputs.push_back(activate(p.activation, tape.pre.back()));
  }
  return tape;
}

/// The composed map phi: the last block pushed once around the snapshot
/// cycle. Its fixed point is the last block of the coupled fixed point.
inline DenseMatrix phi_composed(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g) {
  return chain_forward(z, p, g).output();
}

/// phi on the column-wise vectorization of the last block.
inline std::vector<double> phi_composed(std::span<const double> z, const IdgnnParams& p, const DynamicGraph& g) {
  return vec(phi_composed(unvec(z, p.dim(), g.num_nodes()), p, g));
}

/// Embeddings of the loop-free variant: one pass through the snapshots from
/// a zero state, no fixed point.
inline std::vector<DenseMatrix> no_loop_forward(const IdgnnParams& p, const DynamicGraph& g) {
  ChainTape tape = chain_forward(DenseMatrix(p.dim(), g.num_nodes()), p, g);
  return {tape.inputs.begin() + 1, tape.inputs.end()};
}

/// Largest operator norm of each snapshot's adjacency across graphs. The
/// power-iteration estimate approaches the norm from below, so the default
/// tolerance here is much tighter than operator_norm's own default.
inline std::vector<double> critical_norms(const std::vector<DynamicGraph>& graphs,
                                          PowerIterationOptions opt = {1e-14, 100000}) {
  if (graphs.empty()) return {};
  const Index T = graphs.front().num_snapshots();
  std::vector<double> norms(T, 0.0);
  for (const auto& g : graphs) {
    if (g.num_snapshots() != T) throw DimensionError("critical_norms: graphs disagree on snapshot count");
    for (Index t = 0; t < T; ++t) norms[t] = std::max(norms[t], operator_norm(g.snapshots[t].adjacency, opt));
  }
  return norms;
}

/// Projection radius per W slot: kappa / max norm over the snapshots that use
/// the slot. nullopt where every norm is zero (no constraint).
inline std::vector<std::optional<double>> projection_radii(const IdgnnParams& p, const std::vector<double>& norms,
                                                           double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0)) throw InvalidArgument("kappa must lie in (0, 1)");
  if (norms.size() != p.snapshots) throw DimensionError("projection_radii: one norm per snapshot required");
  std::vector<double> worst(p.W.size(), 0.0);
  for (Index t = 0; t < p.snapshots; ++t) worst[p.w_slot(t)] = std::max(worst[p.w_slot(t)], norms[t]);
  std::vector<std::optional<double>> radii(p.W.size());
  for (Index s = 0; s < worst.size(); ++s)
    if (worst[s] > 0.0) radii[s] = kappa / worst[s];
  return radii;
}

/// Projects every W slot onto its infinity-norm ball.
inline IdgnnParams enforce_wellposedness(IdgnnParams p, const std::vector<std::optional<double>>& radii) {
  if (radii.size() != p.W.size()) throw DimensionError("enforce_wellposedness: one radius per W slot required");
  for (Index s = 0; s < p.W.size(); ++s) {
    if (!radii[s]) {
      std::cerr << "[idgnn] warning: adjacency norm is zero for W slot " << s << "; leaving it unconstrained\n";
      continue;
    }
    p.W[s] = project_linf_ball(std::move(p.W[s]), *radii[s]);
  }
  return p;
}

inline IdgnnParams enforce_wellposedness(IdgnnParams p, const std::vector<DynamicGraph>& graphs, double kappa) {
  const auto radii = projection_radii(p, critical_norms(graphs), kappa);
  return enforce_wellposedness(std::move(p), radii);
}

struct ContractionReport {
  /// ||W^t||_inf * ||A^t||_op per snapshot.
  std::vector<double> products;
  bool pass = true;

  double factor() const {
    double m = 0.0;
    for (double v : products) m = std::max(m, v);
    return m;
  }
};

inline ContractionReport contraction_check(const IdgnnParams& p, const DynamicGraph& g) {
  detail::check_model_graph(p, g);
  ContractionReport r;
  for (Index t = 0; t < g.num_snapshots(); ++t) {
    r.products.push_back(infinity_norm(p.w(t)) * operator_norm(g.snapshots[t].adjacency));
    if (!(r.products.back() < 1.0)) r.pass = false;
  }
  return r;
}

/// Head applied per node: weight * Z + bias.
inline DenseMatrix predict_head(const HeadParams& head, const DenseMatrix& z) {
  if (head.weight.cols() != z.rows() || head.bias.size() != head.weight.rows()) {
    throw DimensionError("predict_head: head " + detail::shape_str(head.weight.rows(), head.weight.cols()) +
                         " vs embeddings " + detail::shape_str(z.rows(), z.cols()));
  }
  DenseMatrix y = matmul(head.weight, z);
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j) y(i, j) += head.bias[i];
  return y;
}

}  // namespace idgnn
