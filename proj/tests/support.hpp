#pragma once

// Helpers shared by the test binaries. Everything here is written against
// plain Eigen or raw loops so it can act as an oracle for library code.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "idgnn/idgnn.hpp"

namespace idgnn::testing {

inline Eigen::MatrixXd dense(const SparseMatrix& a) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  a.for_each([&](Index i, Index j, double v) { m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v; });
  return m;
}

inline Eigen::MatrixXd dense(const DenseMatrix& a) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
  return m;
}

inline DenseMatrix from_eigen(const Eigen::MatrixXd& m) {
  DenseMatrix out(static_cast<Index>(m.rows()), static_cast<Index>(m.cols()));
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

/// Column-major vectorization through Eigen's own storage order.
inline Eigen::VectorXd vec_of(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

/// Largest singular value by a full SVD.
inline double svd_norm(const SparseMatrix& a) {
  if (a.nnz() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense(a));
  return svd.singularValues()(0);
}

inline double row_sum_norm(const DenseMatrix& w) {
  double best = 0.0;
  for (Index i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < w.cols(); ++j) s += std::abs(w(i, j));
    best = std::max(best, s);
  }
  return best;
}

inline double act(Activation a, double x) { return a == Activation::kRelu ? std::max(x, 0.0) : std::tanh(x); }

/// Plain Picard iteration of the coupled system with dense Eigen products.
inline std::vector<Eigen::MatrixXd> reference_fixed_point(const IdgnnParams& p, const DynamicGraph& g, double tol = 1e-12,
                                                          int max_sweeps = 100000) {
  const Index T = g.num_snapshots();
  std::vector<Eigen::MatrixXd> a, x, w, v;
  for (Index t = 0; t < T; ++t) {
    a.push_back(dense(g.snapshots[t].adjacency));
    x.push_back(dense(g.snapshots[t].features));
    w.push_back(dense(p.w(t)));
    v.push_back(dense(p.v(t)));
  }
  std::vector<Eigen::MatrixXd> z(T, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.dim()),
                                                          static_cast<Eigen::Index>(g.num_nodes())));
  for (int it = 0; it < max_sweeps; ++it) {
    std::vector<Eigen::MatrixXd> next(T);
    double change = 0.0;
    for (Index t = 0; t < T; ++t) {
      const Index prev = t == 0 ? T - 1 : t - 1;
      next[t] = (w[t] * z[prev] * a[t] + v[t] * x[t]).unaryExpr([&](double s) { return act(p.activation, s); });
      change = std::max(change, (next[t] - z[t]).cwiseAbs().maxCoeff());
    }
    z = std::move(next);
    if (change <= tol) return z;
  }
  throw std::runtime_error("reference_fixed_point: no convergence");
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_difference(const std::function<double(double)>& f, double x0, double h) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

/// max|a - b| / max(max|a|, max|b|), computed independently of the library.
inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  const double diff = (a - b).cwiseAbs().maxCoeff();
  return scale == 0.0 ? diff : diff / scale;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Two 1x1 snapshots with A = 1, X = 1, W = (0.5, 0.5), V = 1, relu; head = 1.
inline DynamicGraph scalar_chain_graph() {
  DynamicGraph g;
  g.task = Task::kRegression;
  g.num_outputs = 1;
  for (int t = 0; t < 2; ++t) g.snapshots.push_back({SparseMatrix::identity(1), DenseMatrix{{1.0}}});
  g.targets = DenseMatrix{{0.0}};
  g.labeled = {1};
  g.classes = {0};
  return g;
}

inline IdgnnParams scalar_chain_params() {
  IdgnnParams p;
  p.W = {DenseMatrix{{0.5}}, DenseMatrix{{0.5}}};
  p.V = {DenseMatrix{{1.0}}};
  p.head.weight = DenseMatrix{{1.0}};
  p.head.bias = {0.0};
  p.activation = Activation::kRelu;
  p.snapshots = 2;
  return p;
}

inline DenseMatrix random_dense(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

/// Random parameters pushed hard against the well-posedness boundary.
inline IdgnnParams boundary_params(const DynamicGraph& g, Index d, Activation activation, double kappa,
                                   std::uint64_t seed, Sharing sharing = Sharing::kIdgnn) {
  ModelShape shape{d, g.num_features(), g.num_snapshots(), g.num_outputs, sharing, activation};
  IdgnnParams p = init_params(shape, seed);
  for (auto& w : p.W) w *= 8.0;
  return enforce_wellposedness(std::move(p), {g}, kappa);
}

}  // namespace idgnn::testing
