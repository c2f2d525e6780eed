#pragma once

// Losses, task metrics and oversmoothing diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "idgnn/error.hpp"
#include "idgnn/graph.hpp"
#include "idgnn/tensor.hpp"

namespace idgnn {

/// Mean loss over masked nodes and its gradient with respect to the outputs.
struct LossResult {
  double loss = 0.0;
  DenseMatrix grad;  // same shape as the outputs; zero at unmasked nodes
};

namespace detail {

inline Index mask_count(const std::vector<std::uint8_t>& mask) {
  return static_cast<Index>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace detail

/// Column-wise softmax of a (classes x n) logit matrix.
inline DenseMatrix softmax_columns(const DenseMatrix& logits) {
  DenseMatrix p(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < logits.rows(); ++c) mx = std::max(mx, logits(c, j));
    double s = 0.0;
    for (Index c = 0; c < logits.rows(); ++c) s += (p(c, j) = std::exp(logits(c, j) - mx));
    for (Index c = 0; c < logits.rows(); ++c) p(c, j) /= s;
  }
  return p;
}

/// Softmax cross-entropy, averaged over masked nodes.
inline LossResult cross_entropy(const DenseMatrix& logits, const std::vector<int>& classes,
                                const std::vector<std::uint8_t>& mask) {
  if (classes.size() != logits.cols() || mask.size() != logits.cols()) {
    throw DimensionError("cross_entropy: labels/mask length must equal the number of nodes");
  }
  const Index m = detail::mask_count(mask);
  if (m == 0) throw InvalidArgument("cross_entropy: empty mask");
  const DenseMatrix prob = softmax_columns(logits);
  LossResult r{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double w = 1.0 / static_cast<double>(m);
  for (Index j = 0; j < logits.cols(); ++j) {
    if (!mask[j]) continue;
    const auto y = static_cast<Index>(classes[j]);
    if (y >= logits.rows()) throw InvalidArgument("cross_entropy: class index out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < logits.rows(); ++c) mx = std::max(mx, logits(c, j));
    double s = 0.0;
    for (Index c = 0; c < logits.rows(); ++c) s += std::exp(logits(c, j) - mx);
    r.loss += w * (mx + std::log(s) - logits(y, j));
    for (Index c = 0; c < logits.rows(); ++c) r.grad(c, j) = w * (prob(c, j) - (c == y ? 1.0 : 0.0));
  }
  return r;
}

/// Mean squared error over masked nodes and all output dimensions.
inline LossResult mean_squared_error(const DenseMatrix& pred, const DenseMatrix& targets,
                                     const std::vector<std::uint8_t>& mask) {
  if (!pred.same_shape(targets) || mask.size() != pred.cols()) throw DimensionError("mean_squared_error: shape mismatch");
  const Index m = detail::mask_count(mask);
  if (m == 0) throw InvalidArgument("mean_squared_error: empty mask");
  const double w = 1.0 / static_cast<double>(m * std::max<Index>(pred.rows(), 1));
  LossResult r{0.0, DenseMatrix(pred.rows(), pred.cols())};
  for (Index j = 0; j < pred.cols(); ++j) {
    if (!mask[j]) continue;
    for (Index c = 0; c < pred.rows(); ++c) {
      const double e = pred(c, j) - targets(c, j);
      r.loss += w * e * e;
      r.grad(c, j) = 2.0 * w * e;
    }
  }
  return r;
}

/// Loss of a graph's labels against the head outputs, by task.
inline LossResult task_loss(const DenseMatrix& outputs, const DynamicGraph& g, const std::vector<std::uint8_t>& mask) {
  return g.task == Task::kClassification ? cross_entropy(outputs, g.classes, mask)
                                         : mean_squared_error(outputs, g.targets, mask);
}

using LossFunction = LossResult (*)(const DenseMatrix&, const DynamicGraph&, const std::vector<std::uint8_t>&);

/// Loss evaluator for a task: cross-entropy on classes or MSE on targets.
inline LossFunction losses(Task task) {
  if (task == Task::kClassification) {
    return [](const DenseMatrix& out, const DynamicGraph& g, const std::vector<std::uint8_t>& mask) {
      return cross_entropy(out, g.classes, mask);
    };
  }
  return [](const DenseMatrix& out, const DynamicGraph& g, const std::vector<std::uint8_t>& mask) {
    return mean_squared_error(out, g.targets, mask);
  };
}

struct MetricReport {
  std::string name;
  double value = 0.0;
  Index samples = 0;
  /// Items left out of the average (e.g. zero targets for MAPE).
  Index excluded = 0;
  std::map<std::string, double> per_class;
};

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j{{"name", r.name}, {"value", r.value}, {"samples", r.samples}, {"excluded", r.excluded}};
  if (!r.per_class.empty()) j["per_class"] = r.per_class;
  return j;
}

inline std::string metrics_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "name,value,samples,excluded\n";
  for (const auto& r : reports) os << r.name << ',' << r.value << ',' << r.samples << ',' << r.excluded << '\n';
  return os.str();
}

/// Mann-Whitney AUC of `scores` for positives vs negatives; ties count 1/2.
inline double binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  const Index n = scores.size();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (positive[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("binary_auc: needs both positives and negatives");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// One-vs-rest ROC AUC averaged over the classes present among the labels.
/// scores: classes x samples (e.g. softmax probabilities); labels: class per sample.
inline MetricReport roc_auc_macro(const DenseMatrix& scores, const std::vector<int>& labels) {
  if (labels.size() != scores.cols()) throw DimensionError("roc_auc_macro: one label per score column required");
  std::vector<int> present(labels);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.size() < 2) throw UndefinedMetric("roc_auc_macro: at least two classes must be present");

  MetricReport r{"roc_auc", 0.0, labels.size(), 0, {}};
  for (int c : present) {
    if (c < 0 || static_cast<Index>(c) >= scores.rows()) throw InvalidArgument("roc_auc_macro: class out of range");
    std::vector<double> s(labels.size());
    std::vector<std::uint8_t> pos(labels.size());
    for (Index i = 0; i < labels.size(); ++i) {
      s[i] = scores(static_cast<Index>(c), i);
      pos[i] = labels[i] == c ? 1 : 0;
    }
    const double auc = binary_auc(s, pos);
    r.per_class[std::to_string(c)] = auc;
    r.value += auc;
  }
  r.value /= static_cast<double>(present.size());
  return r;
}

/// Mean absolute percentage error in percent; zero targets are skipped and counted.
inline MetricReport mape(const DenseMatrix& predictions, const DenseMatrix& targets) {
  if (!predictions.same_shape(targets)) throw DimensionError("mape: shape mismatch");
  MetricReport r{"mape", 0.0, 0, 0, {}};
  double total = 0.0;
  for (Index k = 0; k < targets.size(); ++k) {
    const double y = targets.data()[k];
    if (y == 0.0) {
      ++r.excluded;
      continue;
    }
    total += std::abs(predictions.data()[k] - y) / std::abs(y);
    ++r.samples;
  }
  if (r.samples == 0) throw UndefinedMetric("mape: every target is zero");
  r.value = 100.0 * total / static_cast<double>(r.samples);
  return r;
}

/// Fraction of samples whose argmax score is the label.
inline double accuracy(const DenseMatrix& scores, const std::vector<int>& labels) {
  if (labels.size() != scores.cols()) throw DimensionError("accuracy: one label per column required");
  if (labels.empty()) throw UndefinedMetric("accuracy: no samples");
  Index hit = 0;
  for (Index j = 0; j < scores.cols(); ++j) {
    Index best = 0;
    for (Index c = 1; c < scores.rows(); ++c)
      if (scores(c, j) > scores(best, j)) best = c;
    if (static_cast<int>(best) == labels[j]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// sqrt((1/n) sum_i sum_{j in N(i)} ||z_i - z_j||^2) over stored adjacency entries.
inline double dirichlet_energy(const DenseMatrix& z, const SparseMatrix& a) {
  if (!a.square() || a.rows() != z.cols()) throw DimensionError("dirichlet_energy: adjacency must be n x n");
  if (z.cols() == 0) return 0.0;
  double total = 0.0;
  a.for_each([&](Index i, Index j, double w) {
    if (w == 0.0 || i == j) return;
    for (Index k = 0; k < z.rows(); ++k) {
      const double diff = z(k, i) - z(k, j);
      total += diff * diff;
    }
  });
  return std::sqrt(total / static_cast<double>(z.cols()));
}

/// Mean cosine distance over connected node pairs; zero-norm columns are skipped.
inline double mad(const DenseMatrix& z, const SparseMatrix& a) {
  if (!a.square() || a.rows() != z.cols()) throw DimensionError("mad: adjacency must be n x n");
  std::vector<double> norm(z.cols(), 0.0);
  for (Index j = 0; j < z.cols(); ++j) {
    double s = 0.0;
    for (Index k = 0; k < z.rows(); ++k) s += z(k, j) * z(k, j);
    norm[j] = std::sqrt(s);
  }
  if (std::all_of(norm.begin(), norm.end(), [](double v) { return v == 0.0; })) {
    throw UndefinedMetric("mad: every embedding column is zero");
  }
  double total = 0.0;
  Index pairs = 0;
  a.for_each([&](Index i, Index j, double w) {
    if (w == 0.0 || i == j || norm[i] == 0.0 || norm[j] == 0.0) return;
    double dot = 0.0;
    for (Index k = 0; k < z.rows(); ++k) dot += z(k, i) * z(k, j);
    total += 1.0 - dot / (norm[i] * norm[j]);
    ++pairs;
  });
  if (pairs == 0) throw UndefinedMetric("mad: no connected pair with nonzero embeddings");
  return total / static_cast<double>(pairs);
}

}  // namespace idgnn
