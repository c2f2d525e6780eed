#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "idgnn/error.hpp"
#include "idgnn/tensor.hpp"

namespace idgnn {

enum class Task { kClassification, kRegression };

inline std::string to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw InvalidArgument("unknown task '" + s + "'");
}

/// One snapshot: n x n adjacency and l x n node features.
struct SnapshotGraph {
  SparseMatrix adjacency;
  DenseMatrix features;
};

/// A time-ordered sequence of snapshots over a shared node set, with targets
/// attached to the nodes of the final snapshot.
struct DynamicGraph {
  std::vector<SnapshotGraph> snapshots;
  Task task = Task::kClassification;
  /// Number of classes (classification) or target dimension (regression).
  Index num_outputs = 0;
  /// Class per node; meaningful for labeled nodes in classification.
  std::vector<int> classes;
  /// num_outputs x n targets; regression only.
  DenseMatrix targets;
  /// 1 where the node carries a label.
  std::vector<std::uint8_t> labeled;

  Index num_snapshots() const noexcept { return snapshots.size(); }
  Index num_nodes() const noexcept { return snapshots.empty() ? 0 : snapshots.front().adjacency.rows(); }
  Index num_features() const noexcept { return snapshots.empty() ? 0 : snapshots.front().features.rows(); }

  Index num_labeled() const {
    return static_cast<Index>(std::count(labeled.begin(), labeled.end(), std::uint8_t{1}));
  }

  /// Throws DimensionError / InvalidArgument on any broken invariant.
  void validate() const {
    if (snapshots.empty()) throw InvalidArgument("DynamicGraph: at least one snapshot required");
    const Index n = num_nodes();
    const Index l = num_features();
    for (Index t = 0; t < snapshots.size(); ++t) {
      const auto& s = snapshots[t];
      const std::string where = "DynamicGraph snapshot " + std::to_string(t);
      if (!s.adjacency.square() || s.adjacency.rows() != n) throw DimensionError(where + ": adjacency must be n x n");
      if (s.features.rows() != l || s.features.cols() != n) throw DimensionError(where + ": features must be l x n");
      if (!s.features.all_finite()) throw InvalidArgument(where + ": non-finite feature");
    }
    if (labeled.size() != n) throw DimensionError("DynamicGraph: labeled mask length must equal n");
    if (task == Task::kClassification) {
      if (classes.size() != n) throw DimensionError("DynamicGraph: classes length must equal n");
      for (Index i = 0; i < n; ++i) {
        if (labeled[i] && (classes[i] < 0 || static_cast<Index>(classes[i]) >= num_outputs)) {
          throw InvalidArgument("DynamicGraph: class index out of range at node " + std::to_string(i));
        }
      }
    } else {
      if (targets.rows() != num_outputs || targets.cols() != n) {
        throw DimensionError("DynamicGraph: targets must be num_outputs x n");
      }
      if (!targets.all_finite()) throw InvalidArgument("DynamicGraph: non-finite target");
    }
  }
};

/// Snapshot routing permutation on 1-based indices: t -> t-1 for t >= 2, 1 -> T.
inline Index tau(Index t, Index T) {
  if (T == 0 || t < 1 || t > T) {
    throw InvalidArgument("tau: t=" + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
  return T - ((T - t + 1) % T);
}

/// 0-based counterpart of tau: the snapshot whose embedding feeds snapshot t.
constexpr Index prev_snapshot(Index t, Index T) noexcept { return t == 0 ? T - 1 : t - 1; }

/// 0-based inverse of prev_snapshot.
constexpr Index next_snapshot(Index t, Index T) noexcept { return t + 1 == T ? 0 : t + 1; }

/// D^{-1/2} (A + I*self_loops) D^{-1/2}. Isolated nodes keep zero rows.
inline SparseMatrix sym_normalize(const SparseMatrix& a, bool add_self_loops) {
  if (!a.square()) throw DimensionError("sym_normalize: matrix must be square");
  std::vector<Triplet> t = a.triplets();
  for (const auto& e : t) {
    if (e.value < 0.0) throw InvalidArgument("sym_normalize: negative edge weight");
  }
  if (add_self_loops) {
    for (Index i = 0; i < a.rows(); ++i) t.push_back({i, i, 1.0});
  }
  SparseMatrix b = SparseMatrix::from_triplets(a.rows(), a.cols(), std::move(t));
  std::vector<double> degree(b.rows(), 0.0);
  b.for_each([&](Index i, Index, double v) { degree[i] += v; });
  std::vector<Triplet> out;
  out.reserve(b.nnz());
  b.for_each([&](Index i, Index j, double v) {
    if (degree[i] > 0.0 && degree[j] > 0.0) out.push_back({i, j, v / std::sqrt(degree[i] * degree[j])});
  });
  return SparseMatrix::from_triplets(b.rows(), b.cols(), std::move(out));
}

/// Which part of a dataset the normalization statistics come from.
struct NormalizationScope {
  /// Graph indices contributing statistics; empty means all graphs.
  std::vector<Index> graphs;
  /// Node mask (length n) contributing feature statistics; empty means all nodes.
  std::vector<std::uint8_t> nodes;
  /// Also rescale edge weights. A constant weight channel is left as is.
  bool edges = false;
};

/// Affine 0-1 rescaling of every feature dimension (and optionally the edge
/// weight channel) with min/max taken over the scope. Constant dimensions map to 0.
inline std::vector<DynamicGraph> normalize_01(std::vector<DynamicGraph> graphs, const NormalizationScope& scope = {}) {
  if (graphs.empty()) return graphs;
  std::vector<Index> sel = scope.graphs;
  if (sel.empty()) {
    sel.resize(graphs.size());
    std::iota(sel.begin(), sel.end(), Index{0});
  }
  const Index l = graphs.front().num_features();
  const Index n = graphs.front().num_nodes();
  auto in_scope_node = [&](Index j) { return scope.nodes.empty() || scope.nodes[j] != 0; };

  std::vector<double> lo(l, std::numeric_limits<double>::infinity());
  std::vector<double> hi(l, -std::numeric_limits<double>::infinity());
  double elo = std::numeric_limits<double>::infinity();
  double ehi = -std::numeric_limits<double>::infinity();
  for (Index g : sel) {
    if (g >= graphs.size()) throw InvalidArgument("normalize_01: graph index out of range");
    for (const auto& s : graphs[g].snapshots) {
      for (Index k = 0; k < l; ++k)
        for (Index j = 0; j < n; ++j) {
          if (!in_scope_node(j)) continue;
          lo[k] = std::min(lo[k], s.features(k, j));
          hi[k] = std::max(hi[k], s.features(k, j));
        }
      for (double v : s.adjacency.values()) {
        elo = std::min(elo, v);
        ehi = std::max(ehi, v);
      }
    }
  }

  for (auto& g : graphs) {
    for (auto& s : g.snapshots) {
      for (Index k = 0; k < l; ++k) {
        const double range = hi[k] - lo[k];
        for (Index j = 0; j < n; ++j) {
          double& x = s.features(k, j);
          x = (std::isfinite(range) && range > 0.0) ? (x - lo[k]) / range : 0.0;
        }
      }
      if (scope.edges && std::isfinite(ehi - elo) && ehi > elo) {
        const double range = ehi - elo;
        std::vector<Triplet> t;
        s.adjacency.for_each([&](Index i, Index j, double v) {
          const double w = (v - elo) / range;
          if (w != 0.0) t.push_back({i, j, w});
        });
        s.adjacency = SparseMatrix::from_triplets(n, n, std::move(t));
      }
    }
  }
  return graphs;
}

enum class SplitMode { kTransductive, kInductive };

/// Train/validation/test partition. Transductive splits hold node indices,
/// inductive splits hold graph (time window) indices.
struct DatasetSplit {
  SplitMode mode = SplitMode::kTransductive;
  std::vector<Index> train;
  std::vector<Index> validation;
  std::vector<Index> test;
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

inline DatasetSplit split(const std::vector<DynamicGraph>& dataset, SplitMode mode, SplitRatios ratios,
                          std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw InvalidArgument("split: ratios must sum to 1");
  }
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) throw InvalidArgument("split: negative ratio");
  if (dataset.empty()) throw InvalidArgument("split: empty dataset");

  std::vector<Index> items;
  if (mode == SplitMode::kTransductive) {
    const auto& mask = dataset.front().labeled;
    for (Index i = 0; i < mask.size(); ++i)
      if (mask[i]) items.push_back(i);
    std::mt19937_64 rng(seed);
    std::shuffle(items.begin(), items.end(), rng);
  } else {
    items.resize(dataset.size());
    std::iota(items.begin(), items.end(), Index{0});
  }

  const auto total = static_cast<double>(items.size());
  const auto n_train = std::min<Index>(items.size(), static_cast<Index>(std::llround(ratios.train * total)));
  const auto n_val =
      std::min<Index>(items.size() - n_train, static_cast<Index>(std::llround(ratios.validation * total)));

  DatasetSplit s;
  s.mode = mode;
  s.train.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(items.begin() + static_cast<std::ptrdiff_t>(n_train),
                      items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), items.end());
  if (mode == SplitMode::kTransductive) {
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
  }
  return s;
}

}  // namespace idgnn
