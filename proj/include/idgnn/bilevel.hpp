#pragma once

// Single-loop multi-block bilevel training.
//
// Each dynamic graph is one block with lower-level objective
// g(z) = ||z - phi(z)||^2 over its last embedding block z. Per sampled block
// the trainer keeps a moving fixed-point estimate z_hat and an estimate v_hat
// of [d2g/dzdz]^{-1} dl/dz, and forms the hypergradient
// -d2g/dwdz * v_hat. Hessian-vector products are directional derivatives of
// the reverse pass (forward-over-reverse); no Hessian is formed.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "idgnn/error.hpp"
#include "idgnn/implicit_grad.hpp"
#include "idgnn/model.hpp"
#include "idgnn/tensor.hpp"

namespace idgnn {

/// Reverse pass of the snapshot chain for output cotangent `seed`.
struct ChainAdjoint {
  /// Cotangent with respect to the chain input.
  DenseMatrix input;
  /// act'(pre) .* cotangent, per snapshot.
  std::vector<DenseMatrix> gates;
};

inline ChainAdjoint chain_backward(const ChainTape& tape, const IdgnnParams& p, const DynamicGraph& g,
                                   DenseMatrix seed) {
  const Index T = g.num_snapshots();
  ChainAdjoint r;
  r.gates.resize(T);
  DenseMatrix b = std::move(seed);
  for (Index k = 0; k < T; ++k) {
    const Index t = T - 1 - k;
    r.gates[t] = hadamard(activate_d1(p.activation, tape.pre[t]), b);
    b = spmm_transposed(matmul_tn(p.w(t), r.gates[t]), g.snapshots[t].adjacency);
  }
  r.input = std::move(b);
  return r;
}

/// ||z - phi(z)||_2^2
inline double lower_g(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g) {
  const DenseMatrix r = z - phi_composed(z, p, g);
  return frobenius_dot(r, r);
}

/// 2 (I - J_phi)^T (z - phi(z)), J_phi^T applied by the reverse pass.
inline DenseMatrix grad_z_g(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g) {
  const ChainTape tape = chain_forward(z, p, g);
  DenseMatrix r = z - tape.output();
  const ChainAdjoint adj = chain_backward(tape, p, g, r);
  r -= adj.input;
  r *= 2.0;
  return r;
}

/// Gradient of g with respect to W and V (head entries zero).
inline ParamGradients grad_w_g(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g) {
  const ChainTape tape = chain_forward(z, p, g);
  const ChainAdjoint adj = chain_backward(tape, p, g, z - tape.output());
  ParamGradients out = ParamGradients::zeros_like(p);
  for (Index t = 0; t < g.num_snapshots(); ++t) {
    const auto& s = g.snapshots[t];
    out.dW[p.w_slot(t)].axpy(-2.0, matmul_nt(adj.gates[t], spmm(tape.inputs[t], s.adjacency)));
    out.dV[p.v_slot(t)].axpy(-2.0, matmul_nt(adj.gates[t], s.features));
  }
  return out;
}

/// Second-order products of g along a z-direction.
struct HessianProducts {
  DenseMatrix zz;      // d2g/dzdz * v
  ParamGradients wz;   // d2g/dwdz * v (W and V entries)
};

/// Differentiates the forward and reverse passes along z-direction v.
inline HessianProducts hessian_products(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g,
                                        const DenseMatrix& v, const ChainTape* tape_in = nullptr) {
  if (!v.same_shape(z)) throw DimensionError("hessian_products: direction must match z");
  std::optional<ChainTape> own;
  if (!tape_in) {
    own = chain_forward(z, p, g);
    tape_in = &*own;
  }
  const ChainTape& tape = *tape_in;
  const Index T = g.num_snapshots();
  const Activation act = p.activation;

  // Forward tangents of the chain.
  std::vector<DenseMatrix> dinputs;
  std::vector<DenseMatrix> dpre;
  dinputs.reserve(T + 1);
  dpre.reserve(T);
  dinputs.push_back(v);
  for (Index t = 0; t < T; ++t) {
    dpre.push_back(kron_apply({p.w(t), g.snapshots[t].adjacency}, dinputs.back()));
    dinputs.push_back(hadamard(activate_d1(act, tape.pre[t]), dpre.back()));
  }

  DenseMatrix b = z - tape.output();
  DenseMatrix db = v - dinputs.back();
  const DenseMatrix dr = db;

  HessianProducts out{DenseMatrix(), ParamGradients::zeros_like(p)};
  for (Index k = 0; k < T; ++k) {
    const Index t = T - 1 - k;
    const auto& s = g.snapshots[t];
    const DenseMatrix& pre = tape.pre[t];
    DenseMatrix gate(pre.rows(), pre.cols());
    DenseMatrix dgate(pre.rows(), pre.cols());
    for (Index q = 0; q < pre.size(); ++q) {
      const double d1 = activate_d1(act, pre.data()[q]);
      gate.data()[q] = d1 * b.data()[q];
      dgate.data()[q] = activate_d2(act, pre.data()[q]) * dpre[t].data()[q] * b.data()[q] + d1 * db.data()[q];
    }
    // d/dv of grad_W g = -2 [dgate (Y A)^T + gate (dY A)^T]
    DenseMatrix dw = matmul_nt(dgate, spmm(tape.inputs[t], s.adjacency));
    dw += matmul_nt(gate, spmm(dinputs[t], s.adjacency));
    out.wz.dW[p.w_slot(t)].axpy(-2.0, dw);
    out.wz.dV[p.v_slot(t)].axpy(-2.0, matmul_nt(dgate, s.features));

    b = spmm_transposed(matmul_tn(p.w(t), gate), s.adjacency);
    db = spmm_transposed(matmul_tn(p.w(t), dgate), s.adjacency);
  }
  out.zz = dr - db;
  out.zz *= 2.0;
  return out;
}

inline DenseMatrix hvp_zz_g(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g, const DenseMatrix& v) {
  return hessian_products(z, p, g, v).zz;
}

inline ParamGradients hvp_wz_g(const DenseMatrix& z, const IdgnnParams& p, const DynamicGraph& g,
                               const DenseMatrix& v) {
  return hessian_products(z, p, g, v).wz;
}

/// Per-block state: z_hat tracks the fixed point of phi, v_hat tracks
/// [d2g/dzdz]^{-1} dl/dz. Both are d x n (column-wise vec gives the vector form).
struct BlockState {
  DenseMatrix z_hat;
  DenseMatrix v_hat;

  friend bool operator==(const BlockState&, const BlockState&) = default;
};

/// Everything one sampled block contributes to a step, evaluated at the
/// pre-update (z_hat, v_hat).
struct BlockStep {
  BlockState next;
  /// -d2g/dwdz * v_hat
  ParamGradients hypergrad;
  DenseMatrix d_head_weight;
  std::vector<double> d_head_bias;
  double loss = 0.0;
  /// ||z_hat - phi(z_hat)||_inf
  double residual = 0.0;
};

inline BlockStep block_step(const BlockState& state, const IdgnnParams& p, const DynamicGraph& g,
                            const std::vector<std::uint8_t>& mask, double eta1, double eta2) {
  const ChainTape tape = chain_forward(state.z_hat, p, g);
  const HeadLossGrad hl = loss_and_grad_z(p.head, state.z_hat, g, mask);
  HessianProducts hp = hessian_products(state.z_hat, p, g, state.v_hat, &tape);

  BlockStep out;
  out.loss = hl.loss;
  out.residual = (state.z_hat - tape.output()).max_abs();

  out.next.z_hat = state.z_hat;
  out.next.z_hat *= (1.0 - eta1);
  out.next.z_hat.axpy(eta1, tape.output());

  out.next.v_hat = state.v_hat;
  out.next.v_hat.axpy(-eta2, hp.zz);
  out.next.v_hat.axpy(eta2, hl.dZ);

  // The loss touches W and V only through z, so the direct term of the
  // hypergradient is zero and only the mixed second-order term remains.
  out.hypergrad = std::move(hp.wz);
  out.hypergrad.scale(-1.0);
  out.d_head_weight = hl.d_head_weight;
  out.d_head_bias = hl.d_head_bias;
  return out;
}

/// Moving fixed-point step and inverse-Hessian-vector step for one sampled block.
inline BlockState update_block(const BlockState& state, const IdgnnParams& p, const DynamicGraph& g,
                               const std::vector<std::uint8_t>& mask, double eta1, double eta2) {
  return block_step(state, p, g, mask, eta1, eta2).next;
}

struct BlockRef {
  const BlockState* state = nullptr;
  const DynamicGraph* graph = nullptr;
};

/// Mean over the batch of -d2g/dwdz(z_hat) * v_hat.
inline ParamGradients hypergrad_estimate(const std::vector<BlockRef>& batch, const IdgnnParams& p) {
  if (batch.empty()) throw InvalidArgument("hypergrad_estimate: empty batch");
  ParamGradients delta = ParamGradients::zeros_like(p);
  for (const auto& b : batch) delta.axpy(-1.0, hvp_wz_g(b.state->z_hat, p, *b.graph, b.state->v_hat));
  delta.scale(1.0 / static_cast<double>(batch.size()));
  return delta;
}

struct OptimizerState {
  /// Moving average of the W/V hypergradient.
  ParamGradients m;
  long step = 0;
  double eta0 = 0.01;
  double eta1 = 0.9;
  double eta2 = 0.01;
  double gamma = 0.9;
  Index batch_size = 1;
  double kappa = 0.95;
  std::vector<std::optional<double>> radii;
};

/// m <- (1 - gamma) m + gamma delta; (W, V) <- Proj(w - eta0 m); head by plain
/// descent on its own gradient, unprojected.
inline std::pair<OptimizerState, IdgnnParams> momentum_project_step(OptimizerState opt, IdgnnParams p,
                                                                    const ParamGradients& delta,
                                                                    const DenseMatrix& d_head_weight,
                                                                    const std::vector<double>& d_head_bias) {
  if (opt.m.dW.empty()) opt.m = ParamGradients::zeros_like(p);
  opt.m.scale(1.0 - opt.gamma);
  opt.m.axpy(opt.gamma, delta);
  for (Index k = 0; k < p.W.size(); ++k) p.W[k].axpy(-opt.eta0, opt.m.dW[k]);
  for (Index k = 0; k < p.V.size(); ++k) p.V[k].axpy(-opt.eta0, opt.m.dV[k]);
  if (!d_head_weight.empty()) p.head.weight.axpy(-opt.eta0, d_head_weight);
  for (Index k = 0; k < d_head_bias.size(); ++k) p.head.bias[k] -= opt.eta0 * d_head_bias[k];
  if (!opt.radii.empty()) p = enforce_wellposedness(std::move(p), opt.radii);
  ++opt.step;
  return {std::move(opt), std::move(p)};
}

/// Result of one bilevel step over a batch.
struct BilevelStepInfo {
  double loss = 0.0;
  double residual = 0.0;
};

/// State of the single-loop trainer: one BlockState per graph plus the optimizer.
class BilevelTrainer {
 public:
  BilevelTrainer(const IdgnnParams& p, const std::vector<const DynamicGraph*>& graphs, OptimizerState opt,
                 bool random_init = false, std::uint64_t seed = 0)
      : opt_(std::move(opt)) {
    opt_.m = ParamGradients::zeros_like(p);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (const auto* g : graphs) {
      BlockState s{DenseMatrix(p.dim(), g->num_nodes()), DenseMatrix(p.dim(), g->num_nodes())};
      if (random_init) {
        for (double& x : s.z_hat.values()) x = dist(rng);
        for (double& x : s.v_hat.values()) x = dist(rng);
      }
      blocks_.push_back(std::move(s));
    }
  }

  const std::vector<BlockState>& blocks() const noexcept { return blocks_; }
  std::vector<BlockState>& blocks() noexcept { return blocks_; }
  const OptimizerState& optimizer() const noexcept { return opt_; }

  /// One iteration over the sampled block indices. Unsampled blocks are untouched.
  BilevelStepInfo step(IdgnnParams& p, const std::vector<Index>& batch,
                       const std::vector<const DynamicGraph*>& graphs,
                       const std::vector<const std::vector<std::uint8_t>*>& masks) {
    if (batch.empty()) throw InvalidArgument("BilevelTrainer::step: empty batch");
    ParamGradients delta = ParamGradients::zeros_like(p);
    DenseMatrix d_head_weight(p.head.weight.rows(), p.head.weight.cols());
    std::vector<double> d_head_bias(p.head.bias.size(), 0.0);
    BilevelStepInfo info;
    std::vector<BlockState> updated;
    updated.reserve(batch.size());
    for (Index j : batch) {
      BlockStep s = block_step(blocks_.at(j), p, *graphs.at(j), *masks.at(j), opt_.eta1, opt_.eta2);
      delta.axpy(1.0, s.hypergrad);
      d_head_weight += s.d_head_weight;
      for (Index k = 0; k < d_head_bias.size(); ++k) d_head_bias[k] += s.d_head_bias[k];
      info.loss += s.loss;
      info.residual += s.residual;
      updated.push_back(std::move(s.next));
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    delta.scale(inv);
    d_head_weight *= inv;
    for (double& b : d_head_bias) b *= inv;
    info.loss *= inv;
    info.residual *= inv;
    for (Index k = 0; k < batch.size(); ++k) blocks_[batch[k]] = std::move(updated[k]);

    auto [opt, params] = momentum_project_step(std::move(opt_), std::move(p), delta, d_head_weight, d_head_bias);
    opt_ = std::move(opt);
    p = std::move(params);
    return info;
  }

 private:
  std::vector<BlockState> blocks_;
  OptimizerState opt_;
};

}  // namespace idgnn
