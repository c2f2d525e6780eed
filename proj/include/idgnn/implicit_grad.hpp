#pragma once

// Gradients through the fixed point by implicit differentiation.
//
// Two routes are provided. The forward-sensitivity route solves, for each
// parameter block, the coupled linear system
//
//   dz^t/dw = Xi^t .* (source^t + M^t dz^{prev(t)}/dw)
//
// and is quadratic in the number of nodes because it applies the adjacency
// densely, the way the naive method is analysed. It is kept as an oracle and
// as the expensive baseline of the runtime benchmark. The adjoint route
// solves one transposed system u = s + J^T u and contracts it with the
// source terms; this is what the trainers use.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "idgnn/error.hpp"
#include "idgnn/metrics.hpp"
#include "idgnn/model.hpp"
#include "idgnn/tensor.hpp"

namespace idgnn {

/// Loss at the last block together with its gradients.
struct HeadLossGrad {
  double loss = 0.0;
  DenseMatrix dZ;  // d x n
  DenseMatrix d_head_weight;
  std::vector<double> d_head_bias;
};

inline HeadLossGrad loss_and_grad_z(const HeadParams& head, const DenseMatrix& z_last, const DynamicGraph& g,
                                    const std::vector<std::uint8_t>& mask) {
  const DenseMatrix out = predict_head(head, z_last);
  LossResult lr = task_loss(out, g, mask);
  HeadLossGrad r;
  r.loss = lr.loss;
  r.dZ = matmul_tn(head.weight, lr.grad);
  r.d_head_weight = matmul_nt(lr.grad, z_last);
  r.d_head_bias.assign(out.rows(), 0.0);
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) r.d_head_bias[i] += lr.grad(i, j);
  return r;
}

/// Quantities of the linearization at a fixed point.
struct SensitivityWorkspace {
  /// act'(pre-activation) per snapshot, d x n.
  std::vector<DenseMatrix> sigma;
  /// (Z^{prev(t)} A^t)^T per snapshot, n x d.
  std::vector<DenseMatrix> H;
};

inline SensitivityWorkspace make_workspace(const std::vector<DenseMatrix>& z, const IdgnnParams& p,
                                           const DynamicGraph& g) {
  detail::check_model_graph(p, g);
  detail::check_blocks(p, g, z);
  const Index T = g.num_snapshots();
  SensitivityWorkspace ws;
  for (Index t = 0; t < T; ++t) {
    const auto& s = g.snapshots[t];
    const DenseMatrix za = spmm(z[prev_snapshot(t, T)], s.adjacency);
    DenseMatrix pre = matmul(p.w(t), za);
    pre += matmul(p.v(t), s.features);
    ws.sigma.push_back(activate_d1(p.activation, pre));
    ws.H.push_back(transpose(za));
  }
  return ws;
}

struct SensitivityConfig {
  double tol = 1e-8;
  int max_cycles = 500;
};

namespace detail {

/// (A^T kron W) as a dense (d*n) x (d*n) matrix acting on column-wise vec(Z).
inline DenseMatrix materialize_kron(const SparseMatrix& a, const DenseMatrix& w) {
  const Index d = w.rows();
  const Index n = a.rows();
  DenseMatrix m(d * n, d * n);
  a.for_each([&](Index l, Index j, double alj) {
    for (Index i = 0; i < d; ++i)
      for (Index k = 0; k < d; ++k) m(i + j * d, k + l * d) += alj * w(i, k);
  });
  return m;
}

/// Solves the forward sensitivity system for one parameter block.
///
/// Block t is a (d*n) x cols matrix whose column k is d vec(z^t) / d p_k.
/// Each sweep applies the materialized M^t = (A^t)^T kron W^t to the block of
/// the previous snapshot, adds `source(t)` where present and gates rows by
/// act'. Iterates Gauss-Seidel around the snapshot cycle.
inline std::vector<DenseMatrix> solve_sensitivity(
    const IdgnnParams& p, const DynamicGraph& g, const SensitivityWorkspace& ws, Index cols,
    const std::function<std::optional<DenseMatrix>(Index)>& source, const SensitivityConfig& cfg) {
  const Index T = g.num_snapshots();
  const Index dn = p.dim() * g.num_nodes();

  std::vector<std::optional<DenseMatrix>> sources(T);
  Index start = T;
  for (Index t = 0; t < T; ++t) {
    sources[t] = source(t);
    if (sources[t] && start == T) start = t;
  }
  std::vector<DenseMatrix> D(T, DenseMatrix(dn, cols));
  if (start == T) return D;

  std::vector<DenseMatrix> kron;
  kron.reserve(T);
  for (Index t = 0; t < T; ++t) kron.push_back(materialize_kron(g.snapshots[t].adjacency, p.w(t)));

  DenseMatrix next(dn, cols);
  std::vector<double> history;
  for (int cycle = 0; cycle < cfg.max_cycles; ++cycle) {
    double change = 0.0;
    for (Index step = 0; step < T; ++step) {
      const Index t = (start + step) % T;
      next.map().noalias() = kron[t].map() * D[prev_snapshot(t, T)].map();
      if (sources[t]) next += *sources[t];
      const std::vector<double> gate = vec(ws.sigma[t]);
      for (Index r = 0; r < dn; ++r) {
        double* row = next.data() + r * cols;
        const double* old = D[t].data() + r * cols;
        for (Index c = 0; c < cols; ++c) {
          row[c] *= gate[r];
          change = std::max(change, std::abs(row[c] - old[c]));
        }
      }
      std::swap(D[t], next);
    }
    history.push_back(change);
    if (!std::isfinite(change)) break;
    if (change <= cfg.tol) return D;
  }
  throw ConvergenceError("forward sensitivity: no convergence", std::move(history),
                         history.empty() ? 0.0 : history.back());
}

/// Direct term for W entry (b, c), column b + c*d: d vec(W Z A)/d W_bc has
/// row b of node j equal to (Z A)(c, j) = H(j, c).
inline DenseMatrix w_source(const DenseMatrix& h, Index d) {
  const Index n = h.rows();
  DenseMatrix s(d * n, d * d);
  for (Index c = 0; c < d; ++c)
    for (Index b = 0; b < d; ++b)
      for (Index j = 0; j < n; ++j) s(b + j * d, b + c * d) = h(j, c);
  return s;
}

/// Direct term for V entry (b, c): row b of node j equals X(c, j).
inline DenseMatrix v_source(const DenseMatrix& x, Index d) {
  const Index l = x.rows();
  const Index n = x.cols();
  DenseMatrix s(d * n, d * l);
  for (Index c = 0; c < l; ++c)
    for (Index b = 0; b < d; ++b)
      for (Index j = 0; j < n; ++j) s(b + j * d, b + c * d) = x(c, j);
  return s;
}

inline std::vector<DenseMatrix> w_sensitivity_stack(Index slot, const IdgnnParams& p, const DynamicGraph& g,
                                                    const SensitivityWorkspace& ws, const SensitivityConfig& cfg) {
  if (slot >= p.W.size()) throw InvalidArgument("forward_sensitivity_w: slot out of range");
  const Index d = p.dim();
  return solve_sensitivity(
      p, g, ws, d * d,
      [&](Index t) -> std::optional<DenseMatrix> {
        if (p.w_slot(t) != slot) return std::nullopt;
        return w_source(ws.H[t], d);
      },
      cfg);
}

inline std::vector<DenseMatrix> v_sensitivity_stack(Index slot, const IdgnnParams& p, const DynamicGraph& g,
                                                    const SensitivityWorkspace& ws, const SensitivityConfig& cfg) {
  if (slot >= p.V.size()) throw InvalidArgument("forward_sensitivity_v: slot out of range");
  const Index d = p.dim();
  return solve_sensitivity(
      p, g, ws, d * p.num_features(),
      [&](Index t) -> std::optional<DenseMatrix> {
        if (p.v_slot(t) != slot) return std::nullopt;
        return v_source(g.snapshots[t].features, d);
      },
      cfg);
}

/// Sensitivity columns contracted with vec(dZ): one value per parameter entry.
inline std::vector<double> contract(const DenseMatrix& sens, const DenseMatrix& dz) {
  const std::vector<double> v = vec(dz);
  std::vector<double> out(sens.cols(), 0.0);
  for (Index r = 0; r < sens.rows(); ++r)
    for (Index c = 0; c < sens.cols(); ++c) out[c] += sens(r, c) * v[r];
  return out;
}

}  // namespace detail

/// d z^T / d vec(W_slot) as a (d*n) x (d*d) matrix, rows indexed i + j*d.
inline DenseMatrix forward_sensitivity_w(Index slot, const FixedPointResult& fp, const IdgnnParams& p,
                                         const DynamicGraph& g, const SensitivityConfig& cfg = {}) {
  const auto ws = make_workspace(fp.Z, p, g);
  return detail::w_sensitivity_stack(slot, p, g, ws, cfg).back();
}

/// d z^T / d vec(V_slot) as a (d*n) x (d*l) matrix.
inline DenseMatrix forward_sensitivity_v(Index slot, const FixedPointResult& fp, const IdgnnParams& p,
                                         const DynamicGraph& g, const SensitivityConfig& cfg = {}) {
  const auto ws = make_workspace(fp.Z, p, g);
  return detail::v_sensitivity_stack(slot, p, g, ws, cfg).back();
}

/// W and V gradients of a loss with gradient dZ_last at the last block, by
/// forward sensitivities. Head gradients are left zero.
inline ParamGradients forward_param_grads(const FixedPointResult& fp, const IdgnnParams& p, const DynamicGraph& g,
                                          const DenseMatrix& dz_last, const SensitivityConfig& cfg = {}) {
  const auto ws = make_workspace(fp.Z, p, g);
  const Index d = p.dim();
  ParamGradients grads = ParamGradients::zeros_like(p);
  for (Index s = 0; s < p.W.size(); ++s) {
    const auto flat = detail::contract(detail::w_sensitivity_stack(s, p, g, ws, cfg).back(), dz_last);
    for (Index b = 0; b < d; ++b)
      for (Index c = 0; c < d; ++c) grads.dW[s](b, c) = flat[b + c * d];
  }
  const Index l = p.num_features();
  for (Index s = 0; s < p.V.size(); ++s) {
    const auto flat = detail::contract(detail::v_sensitivity_stack(s, p, g, ws, cfg).back(), dz_last);
    for (Index b = 0; b < d; ++b)
      for (Index c = 0; c < l; ++c) grads.dV[s](b, c) = flat[b + c * d];
  }
  return grads;
}

struct AdjointResult {
  std::vector<DenseMatrix> u;
  int cycles = 0;
  std::vector<double> residual_history;
};

/// Solves u = s + J^T u, J the Jacobian of the coupled sweep at the fixed
/// point and s = dZ_last placed at the last block. Gauss-Seidel in reverse
/// snapshot order; one cycle updates every block once.
inline AdjointResult adjoint_solve(const FixedPointResult& fp, const IdgnnParams& p, const DynamicGraph& g,
                                   const DenseMatrix& dz_last, const SensitivityConfig& cfg = {},
                                   const SensitivityWorkspace* workspace = nullptr) {
  std::optional<SensitivityWorkspace> own;
  if (!workspace) {
    own = make_workspace(fp.Z, p, g);
    workspace = &*own;
  }
  const Index T = g.num_snapshots();
  if (dz_last.rows() != p.dim() || dz_last.cols() != g.num_nodes()) throw DimensionError("adjoint_solve: dZ must be d x n");

  AdjointResult r;
  r.u.assign(T, DenseMatrix(p.dim(), g.num_nodes()));
  for (int cycle = 0; cycle < cfg.max_cycles; ++cycle) {
    double change = 0.0;
    for (Index k = 0; k < T; ++k) {
      const Index s = T - 1 - k;
      const Index nx = next_snapshot(s, T);
      DenseMatrix gate = hadamard(workspace->sigma[nx], r.u[nx]);
      DenseMatrix next = spmm_transposed(matmul_tn(p.w(nx), gate), g.snapshots[nx].adjacency);
      if (s == T - 1) next += dz_last;
      change = std::max(change, (next - r.u[s]).max_abs());
      r.u[s] = std::move(next);
    }
    r.cycles = cycle + 1;
    r.residual_history.push_back(change);
    if (!std::isfinite(change)) break;
    if (change <= cfg.tol) return r;
  }
  throw ConvergenceError("adjoint_solve: no convergence", r.residual_history,
                         r.residual_history.empty() ? 0.0 : r.residual_history.back());
}

/// Contracts the adjoint with the W and V source terms. Head gradients are left zero.
inline ParamGradients param_grads_from_adjoint(const std::vector<DenseMatrix>& u, const FixedPointResult& fp,
                                               const IdgnnParams& p, const DynamicGraph& g,
                                               const SensitivityWorkspace* workspace = nullptr) {
  std::optional<SensitivityWorkspace> own;
  if (!workspace) {
    own = make_workspace(fp.Z, p, g);
    workspace = &*own;
  }
  if (u.size() != g.num_snapshots()) throw DimensionError("param_grads_from_adjoint: one adjoint block per snapshot");
  ParamGradients grads = ParamGradients::zeros_like(p);
  for (Index t = 0; t < g.num_snapshots(); ++t) {
    if (!u[t].same_shape(workspace->sigma[t])) throw DimensionError("param_grads_from_adjoint: adjoint block shape");
    const DenseMatrix gate = hadamard(workspace->sigma[t], u[t]);
    grads.dW[p.w_slot(t)] += matmul(gate, workspace->H[t]);
    grads.dV[p.v_slot(t)] += matmul_nt(gate, g.snapshots[t].features);
  }
  return grads;
}

enum class GradientMethod { kAdjoint, kForwardSensitivity };

/// Loss and full parameter gradient for one graph at its fixed point.
inline std::pair<double, ParamGradients> implicit_loss_grad(const FixedPointResult& fp, const IdgnnParams& p,
                                                            const DynamicGraph& g,
                                                            const std::vector<std::uint8_t>& mask,
                                                            GradientMethod method, const SensitivityConfig& cfg) {
  const HeadLossGrad hl = loss_and_grad_z(p.head, fp.Z.back(), g, mask);
  ParamGradients grads;
  if (method == GradientMethod::kAdjoint) {
    const auto ws = make_workspace(fp.Z, p, g);
    const AdjointResult adj = adjoint_solve(fp, p, g, hl.dZ, cfg, &ws);
    grads = param_grads_from_adjoint(adj.u, fp, p, g, &ws);
  } else {
    grads = forward_param_grads(fp, p, g, hl.dZ, cfg);
  }
  grads.d_head_weight = hl.d_head_weight;
  grads.d_head_bias = hl.d_head_bias;
  return {hl.loss, std::move(grads)};
}

/// Descends params by lr * grads (all blocks, head included).
inline void apply_descent(IdgnnParams& p, const ParamGradients& g, double lr) {
  for (Index k = 0; k < p.W.size(); ++k) p.W[k].axpy(-lr, g.dW[k]);
  for (Index k = 0; k < p.V.size(); ++k) p.V[k].axpy(-lr, g.dV[k]);
  p.head.weight.axpy(-lr, g.d_head_weight);
  for (Index k = 0; k < p.head.bias.size(); ++k) p.head.bias[k] -= lr * g.d_head_bias[k];
}

struct SgdHyper {
  double lr = 0.01;
  FixedPointConfig fixed_point{};
  SensitivityConfig sensitivity{1e-8, 500};
  GradientMethod method = GradientMethod::kAdjoint;
  /// Radius per W slot from projection_radii.
  std::vector<std::optional<double>> radii;
};

/// One item of a training batch: a graph, the nodes that contribute to the
/// loss, and an optional warm start for its fixed point.
struct BatchItem {
  const DynamicGraph* graph = nullptr;
  const std::vector<std::uint8_t>* mask = nullptr;
  std::vector<DenseMatrix>* warm_start = nullptr;
  Index id = 0;
};

/// fixed point -> loss gradient -> adjoint -> parameter gradients per graph,
/// averaged over the batch, one descent step, then the well-posedness projection.
struct SgdStepResult {
  IdgnnParams params;
  /// Batch-mean loss before the update.
  double loss = 0.0;
  /// Batch-mean fixed-point residual.
  double residual = 0.0;
};

inline SgdStepResult sgd_train_step(IdgnnParams p, const std::vector<BatchItem>& batch, const SgdHyper& hyper) {
  if (batch.empty()) throw InvalidArgument("sgd_train_step: empty batch");
  ParamGradients total = ParamGradients::zeros_like(p);
  double loss = 0.0;
  double residual = 0.0;
  for (const auto& item : batch) {
    FixedPointResult fp;
    try {
      std::optional<std::vector<DenseMatrix>> init;
      if (item.warm_start && !item.warm_start->empty()) init = *item.warm_start;
      fp = fixed_point_solve(p, *item.graph, hyper.fixed_point, std::move(init));
    } catch (const ConvergenceError& e) {
      throw ConvergenceError("graph " + std::to_string(item.id) + ": " + e.what(), e.residuals(), e.last_estimate());
    }
    auto [l, grads] = implicit_loss_grad(fp, p, *item.graph, *item.mask, hyper.method, hyper.sensitivity);
    if (item.warm_start) *item.warm_start = fp.Z;
    loss += l;
    residual += fp.residual;
    total.axpy(1.0, grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.scale(inv);
  apply_descent(p, total, hyper.lr);
  if (!hyper.radii.empty()) p = enforce_wellposedness(std::move(p), hyper.radii);
  return {std::move(p), loss * inv, residual * inv};
}

}  // namespace idgnn
