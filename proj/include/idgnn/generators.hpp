#pragma once

// Synthetic dynamic graphs: the clique-based long-range toy tasks and random
// sparse graphs used for property tests and runtime scaling.

#include <cstdint>
#include <random>
#include <vector>

#include "idgnn/graph.hpp"

namespace idgnn {

/// Complete graph on n nodes, unit weights, no self-loops, stored symmetrically.
inline SparseMatrix clique(Index n) {
  std::vector<Triplet> t;
  t.reserve(n * (n - 1));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) t.push_back({i, j, 1.0});
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

inline DenseMatrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

/// Ten-node clique sequence where every node is its own class. Features at
/// `label_snapshot` (1-based) are the one-hot class codes; everything else is
/// standard normal noise. All nodes are labeled.
inline DynamicGraph gen_toy_longrange(Index T, std::uint64_t seed, Index num_classes = 10, Index label_snapshot = 1) {
  if (T == 0) throw InvalidArgument("gen_toy_longrange: T must be positive");
  if (label_snapshot < 1 || label_snapshot > T) {
    throw InvalidArgument("gen_toy_longrange: label_snapshot must lie in [1, T]");
  }
  if (num_classes == 0) throw InvalidArgument("gen_toy_longrange: num_classes must be positive");
  const Index n = num_classes;
  const Index l = num_classes;
  std::mt19937_64 rng(seed);

  DynamicGraph g;
  g.task = Task::kClassification;
  g.num_outputs = num_classes;
  for (Index t = 1; t <= T; ++t) {
    SnapshotGraph s{clique(n), t == label_snapshot ? DenseMatrix::identity(n) : standard_normal(l, n, rng)};
    g.snapshots.push_back(std::move(s));
  }
  g.classes.resize(n);
  for (Index i = 0; i < n; ++i) g.classes[i] = static_cast<int>(i);
  g.labeled.assign(n, 1);
  return g;
}

/// Ten-node clique sequence with two classes (nodes 0-4 and 5-9). The first
/// two feature dimensions of snapshot 1 carry the one-hot label; the rest of
/// snapshot 1 and all later snapshots are standard normal.
inline DynamicGraph gen_toy_binary(Index T, std::uint64_t seed) {
  if (T == 0 || T > 64) throw InvalidArgument("gen_toy_binary: T must lie in [1, 64]");
  constexpr Index n = 10;
  constexpr Index l = 10;
  std::mt19937_64 rng(seed);

  DynamicGraph g;
  g.task = Task::kClassification;
  g.num_outputs = 2;
  g.classes.resize(n);
  for (Index i = 0; i < n; ++i) g.classes[i] = i < n / 2 ? 0 : 1;
  g.labeled.assign(n, 1);
  for (Index t = 1; t <= T; ++t) {
    DenseMatrix x = standard_normal(l, n, rng);
    if (t == 1) {
      for (Index i = 0; i < n; ++i) {
        x(0, i) = g.classes[i] == 0 ? 1.0 : 0.0;
        x(1, i) = g.classes[i] == 1 ? 1.0 : 0.0;
      }
    }
    g.snapshots.push_back({clique(n), std::move(x)});
  }
  return g;
}

/// Undirected random graph with roughly `avg_degree` neighbors per node,
/// unit weights stored symmetrically.
inline SparseMatrix random_graph(Index n, double avg_degree, std::mt19937_64& rng) {
  std::vector<Triplet> t;
  if (n < 2) return SparseMatrix::from_triplets(n, n, {});
  const auto edges = static_cast<Index>(avg_degree * static_cast<double>(n) / 2.0 + 0.5);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (Index e = 0; e < edges; ++e) {
    const Index i = pick(rng);
    Index j = pick(rng);
    while (j == i) j = pick(rng);
    t.push_back({i, j, 1.0});
    t.push_back({j, i, 1.0});
  }
  // Duplicate draws are summed by from_triplets; reset to unit weight.
  auto m = SparseMatrix::from_triplets(n, n, std::move(t));
  std::vector<Triplet> unit;
  m.for_each([&](Index i, Index j, double) { unit.push_back({i, j, 1.0}); });
  return SparseMatrix::from_triplets(n, n, std::move(unit));
}

struct RandomGraphSpec {
  Index nodes = 20;
  Index snapshots = 3;
  Index features = 4;
  Index classes = 3;
  double avg_degree = 4.0;
  bool normalize = true;  // symmetric normalization with self-loops
};

/// Random dynamic graph with standard-normal features and uniform random classes.
inline DynamicGraph gen_random_dynamic(const RandomGraphSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DynamicGraph g;
  g.task = Task::kClassification;
  g.num_outputs = spec.classes;
  for (Index t = 0; t < spec.snapshots; ++t) {
    SparseMatrix a = random_graph(spec.nodes, spec.avg_degree, rng);
    if (spec.normalize) a = sym_normalize(a, true);
    g.snapshots.push_back({std::move(a), standard_normal(spec.features, spec.nodes, rng)});
  }
  std::uniform_int_distribution<int> cls(0, static_cast<int>(spec.classes) - 1);
  g.classes.resize(spec.nodes);
  for (auto& c : g.classes) c = cls(rng);
  g.labeled.assign(spec.nodes, 1);
  return g;
}

}  // namespace idgnn
