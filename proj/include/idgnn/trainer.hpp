#pragma once

// Experiment driver: configuration, data preparation, the three training
// loops (implicit SGD, single-loop bilevel, loop-free baseline), periodic
// evaluation with best-on-validation selection, and run artifacts.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "idgnn/bilevel.hpp"
#include "idgnn/generators.hpp"
#include "idgnn/graph.hpp"
#include "idgnn/implicit_grad.hpp"
#include "idgnn/io.hpp"
#include "idgnn/metrics.hpp"
#include "idgnn/model.hpp"

namespace idgnn {

enum class OptimizerKind { kSgdIft, kBilevel, kNoLoop };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgdIft: return "sgd-ift";
    case OptimizerKind::kBilevel: return "bilevel";
    case OptimizerKind::kNoLoop: return "no-loop";
  }
  return "bilevel";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd-ift" || s == "sgd") return OptimizerKind::kSgdIft;
  if (s == "bilevel") return OptimizerKind::kBilevel;
  if (s == "no-loop" || s == "w/o-loop") return OptimizerKind::kNoLoop;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected sgd-ift, bilevel or no-loop)");
}

inline std::string to_string(GradientMethod m) {
  return m == GradientMethod::kAdjoint ? "adjoint" : "forward";
}

inline GradientMethod parse_gradient_method(const std::string& s) {
  if (s == "adjoint") return GradientMethod::kAdjoint;
  if (s == "forward" || s == "forward-sensitivity") return GradientMethod::kForwardSensitivity;
  throw InvalidArgument("unknown gradient method '" + s + "' (expected adjoint or forward)");
}

/// Synthetic dataset recipe used when no dataset directory is given.
struct GeneratorSpec {
  /// toy-longrange, toy-binary or random
  std::string kind = "toy-longrange";
  Index T = 5;
  std::uint64_t seed = 1;
  Index num_classes = 10;
  Index label_snapshot = 1;
  Index nodes = 20;
  Index features = 4;
  double avg_degree = 4.0;
  /// Number of dynamic graphs; each gets seed + index.
  Index windows = 1;
};

inline std::vector<DynamicGraph> generate(const GeneratorSpec& s) {
  if (s.windows == 0) throw InvalidArgument("generate: windows must be positive");
  std::vector<DynamicGraph> out;
  for (Index k = 0; k < s.windows; ++k) {
    const std::uint64_t seed = s.seed + k;
    if (s.kind == "toy-longrange") {
      out.push_back(gen_toy_longrange(s.T, seed, s.num_classes, s.label_snapshot));
    } else if (s.kind == "toy-binary") {
      out.push_back(gen_toy_binary(s.T, seed));
    } else if (s.kind == "random") {
      RandomGraphSpec r;
      r.nodes = s.nodes;
      r.snapshots = s.T;
      r.features = s.features;
      r.classes = s.num_classes;
      r.avg_degree = s.avg_degree;
      out.push_back(gen_random_dynamic(r, seed));
    } else {
      throw InvalidArgument("unknown generator '" + s.kind + "' (expected toy-longrange, toy-binary or random)");
    }
  }
  return out;
}

struct ExperimentConfig {
  /// Dataset directory; empty means use `generator`.
  std::string dataset;
  GeneratorSpec generator;
  /// auto, all, transductive or inductive. "all" trains and evaluates on
  /// every labeled node; "auto" picks all for toy generators, inductive for
  /// multi-window data and transductive otherwise.
  std::string split = "auto";
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  bool normalize = false;
  bool normalize_edges = false;

  Index dim = 16;
  Activation activation = Activation::kRelu;
  Sharing sharing = Sharing::kIdgnn;
  double kappa = 0.95;

  OptimizerKind optimizer = OptimizerKind::kBilevel;
  GradientMethod gradient = GradientMethod::kAdjoint;
  double eta0 = 0.01;
  double eta1 = 0.9;
  double eta2 = 0.01;
  double gamma = 0.9;
  Index epochs = 100;
  Index batch_size = 1;
  bool deterministic = true;
  std::uint64_t seed = 0;
  Index eval_every = 10;
  bool random_block_init = false;
  bool stop_on_perfect_train = false;
  double fp_tol = 1e-6;
  int fp_max_sweeps = 500;

  std::string out_dir = "out";

  void validate() const {
    if (dim < 1) throw InvalidArgument("config: dim must be >= 1");
    if (!(kappa > 0.0 && kappa < 1.0)) throw InvalidArgument("config: kappa must lie in (0, 1)");
    if (batch_size < 1) throw InvalidArgument("config: batch_size must be >= 1");
    if (eval_every < 1) throw InvalidArgument("config: eval_every must be >= 1");
    if (!(eta1 > 0.0 && eta1 <= 1.0)) throw InvalidArgument("config: eta1 must lie in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("config: gamma must lie in (0, 1]");
    if (!(fp_tol > 0.0) || fp_max_sweeps < 1) throw InvalidArgument("config: invalid fixed-point settings");
    if (split != "auto" && split != "all" && split != "transductive" && split != "inductive") {
      throw InvalidArgument("config: split must be auto, all, transductive or inductive");
    }
    if (!dataset.empty() && !fs::is_directory(dataset)) {
      throw DataError(DataError::Kind::kMissingFile, dataset, "dataset directory does not exist");
    }
  }
};

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json g{{"kind", c.generator.kind},
                           {"T", c.generator.T},
                           {"seed", c.generator.seed},
                           {"num_classes", c.generator.num_classes},
                           {"label_snapshot", c.generator.label_snapshot},
                           {"nodes", c.generator.nodes},
                           {"features", c.generator.features},
                           {"avg_degree", c.generator.avg_degree},
                           {"windows", c.generator.windows}};
  return {{"dataset", c.dataset},
          {"generator", g},
          {"split", c.split},
          {"split_seed", c.split_seed},
          {"ratios", {c.ratios.train, c.ratios.validation, c.ratios.test}},
          {"normalize", c.normalize},
          {"normalize_edges", c.normalize_edges},
          {"dim", c.dim},
          {"activation", to_string(c.activation)},
          {"sharing", to_string(c.sharing)},
          {"kappa", c.kappa},
          {"optimizer", to_string(c.optimizer)},
          {"gradient", to_string(c.gradient)},
          {"eta0", c.eta0},
          {"eta1", c.eta1},
          {"eta2", c.eta2},
          {"gamma", c.gamma},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"deterministic", c.deterministic},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"random_block_init", c.random_block_init},
          {"stop_on_perfect_train", c.stop_on_perfect_train},
          {"fp_tol", c.fp_tol},
          {"fp_max_sweeps", c.fp_max_sweeps},
          {"out_dir", c.out_dir}};
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected,
/// except "meta" which run.json uses for provenance.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = {}) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dataset") c.dataset = v.get<std::string>();
      else if (key == "generator") {
        for (const auto& [gk, gv] : v.items()) {
          if (gk == "kind") c.generator.kind = gv.get<std::string>();
          else if (gk == "T") c.generator.T = gv.get<Index>();
          else if (gk == "seed") c.generator.seed = gv.get<std::uint64_t>();
          else if (gk == "num_classes") c.generator.num_classes = gv.get<Index>();
          else if (gk == "label_snapshot") c.generator.label_snapshot = gv.get<Index>();
          else if (gk == "nodes") c.generator.nodes = gv.get<Index>();
          else if (gk == "features") c.generator.features = gv.get<Index>();
          else if (gk == "avg_degree") c.generator.avg_degree = gv.get<double>();
          else if (gk == "windows") c.generator.windows = gv.get<Index>();
          else throw InvalidArgument("config: unknown generator key '" + gk + "'");
        }
      } else if (key == "split") c.split = v.get<std::string>();
      else if (key == "split_seed") c.split_seed = v.get<std::uint64_t>();
      else if (key == "ratios") {
        const auto r = v.get<std::vector<double>>();
        if (r.size() != 3) throw InvalidArgument("config: ratios must have three entries");
        c.ratios = {r[0], r[1], r[2]};
      } else if (key == "normalize") c.normalize = v.get<bool>();
      else if (key == "normalize_edges") c.normalize_edges = v.get<bool>();
      else if (key == "dim") c.dim = v.get<Index>();
      else if (key == "activation") c.activation = parse_activation(v.get<std::string>());
      else if (key == "sharing") c.sharing = parse_sharing(v.get<std::string>());
      else if (key == "kappa") c.kappa = v.get<double>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
      else if (key == "gradient") c.gradient = parse_gradient_method(v.get<std::string>());
      else if (key == "eta0") c.eta0 = v.get<double>();
      else if (key == "eta1") c.eta1 = v.get<double>();
      else if (key == "eta2") c.eta2 = v.get<double>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<Index>();
      else if (key == "batch_size") c.batch_size = v.get<Index>();
      else if (key == "deterministic") c.deterministic = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "eval_every") c.eval_every = v.get<Index>();
      else if (key == "random_block_init") c.random_block_init = v.get<bool>();
      else if (key == "stop_on_perfect_train") c.stop_on_perfect_train = v.get<bool>();
      else if (key == "fp_tol") c.fp_tol = v.get<double>();
      else if (key == "fp_max_sweeps") c.fp_max_sweeps = v.get<int>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "meta") continue;
      else throw InvalidArgument("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

/// Graphs plus, for each split part, which graphs take part and which of their
/// nodes count. Masks are indexed by graph; an empty mask means the graph is
/// not in that part.
struct PreparedData {
  std::vector<DynamicGraph> graphs;
  std::string split_mode;
  std::vector<std::vector<std::uint8_t>> train_mask, validation_mask, test_mask;

  static std::vector<Index> members(const std::vector<std::vector<std::uint8_t>>& masks) {
    std::vector<Index> out;
    for (Index g = 0; g < masks.size(); ++g)
      if (!masks[g].empty() && detail::mask_count(masks[g]) > 0) out.push_back(g);
    return out;
  }
  std::vector<Index> train_graphs() const { return members(train_mask); }
};

inline std::string resolve_split(const ExperimentConfig& c, Index num_graphs) {
  if (c.split != "auto") return c.split;
  if (c.dataset.empty() && c.generator.kind.rfind("toy", 0) == 0) return "all";
  return num_graphs > 1 ? "inductive" : "transductive";
}

inline PreparedData prepare_data(std::vector<DynamicGraph> graphs, const ExperimentConfig& c) {
  if (graphs.empty()) throw InvalidArgument("prepare_data: empty dataset");
  if (!c.normalize && c.normalize_edges) throw InvalidArgument("prepare_data: normalize_edges requires normalize");
  PreparedData d;
  d.split_mode = resolve_split(c, graphs.size());
  const Index N = graphs.size();
  d.train_mask.assign(N, {});
  d.validation_mask.assign(N, {});
  d.test_mask.assign(N, {});
  NormalizationScope scope;
  scope.edges = c.normalize_edges;

  if (d.split_mode == "all") {
    for (Index g = 0; g < N; ++g) d.train_mask[g] = d.validation_mask[g] = d.test_mask[g] = graphs[g].labeled;
  } else if (d.split_mode == "transductive") {
    const DatasetSplit s = split(graphs, SplitMode::kTransductive, c.ratios, c.split_seed);
    const Index n = graphs.front().num_nodes();
    auto mask_of = [&](const std::vector<Index>& nodes) {
      std::vector<std::uint8_t> m(n, 0);
      for (Index i : nodes) m[i] = 1;
      return m;
    };
    for (Index g = 0; g < N; ++g) {
      auto restrict = [&](std::vector<std::uint8_t> m) {
        for (Index i = 0; i < n; ++i) m[i] = m[i] && graphs[g].labeled[i];
        return m;
      };
      d.train_mask[g] = restrict(mask_of(s.train));
      d.validation_mask[g] = restrict(mask_of(s.validation));
      d.test_mask[g] = restrict(mask_of(s.test));
    }
    scope.nodes = mask_of(s.train);
  } else {
    const DatasetSplit s = split(graphs, SplitMode::kInductive, c.ratios, c.split_seed);
    for (Index g : s.train) d.train_mask[g] = graphs[g].labeled;
    for (Index g : s.validation) d.validation_mask[g] = graphs[g].labeled;
    for (Index g : s.test) d.test_mask[g] = graphs[g].labeled;
    scope.graphs = s.train;
  }
  if (d.train_graphs().empty()) throw InvalidArgument("prepare_data: training part has no labeled nodes");
  d.graphs = c.normalize ? normalize_01(std::move(graphs), scope) : std::move(graphs);
  return d;
}

inline std::vector<DynamicGraph> load_or_generate(const ExperimentConfig& c) {
  return c.dataset.empty() ? generate(c.generator) : load_dataset(c.dataset);
}

/// Last-block embeddings of the trained model: the fixed point, or the single
/// pass for the loop-free variant.
inline FixedPointResult model_embeddings(const IdgnnParams& p, const DynamicGraph& g, OptimizerKind kind,
                                         const FixedPointConfig& fp) {
  if (kind == OptimizerKind::kNoLoop) {
    FixedPointResult r;
    r.Z = no_loop_forward(p, g);
    r.converged = true;
    return r;
  }
  return fixed_point_iterate(p, g, fp);
}

/// Loss and head/W/V gradients of the loop-free variant (backprop through one pass).
inline std::pair<double, ParamGradients> no_loop_loss_grad(const IdgnnParams& p, const DynamicGraph& g,
                                                           const std::vector<std::uint8_t>& mask) {
  const ChainTape tape = chain_forward(DenseMatrix(p.dim(), g.num_nodes()), p, g);
  const HeadLossGrad hl = loss_and_grad_z(p.head, tape.output(), g, mask);
  const ChainAdjoint adj = chain_backward(tape, p, g, hl.dZ);
  ParamGradients out = ParamGradients::zeros_like(p);
  for (Index t = 0; t < g.num_snapshots(); ++t) {
    const auto& s = g.snapshots[t];
    out.dW[p.w_slot(t)] += matmul_nt(adj.gates[t], spmm(tape.inputs[t], s.adjacency));
    out.dV[p.v_slot(t)] += matmul_nt(adj.gates[t], s.features);
  }
  out.d_head_weight = hl.d_head_weight;
  out.d_head_bias = hl.d_head_bias;
  return {hl.loss, std::move(out)};
}

struct SetMetrics {
  Index samples = 0;
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> roc_auc;
  std::optional<double> mape;
  Index mape_excluded = 0;
  double dirichlet_energy = 0.0;
  std::optional<double> mad;
  double max_residual = 0.0;
  bool converged = true;

  /// Higher is better: AUC, else accuracy, else negative MAPE, else negative loss.
  /// Ties are broken by lower loss during training.
  double selection_score() const {
    if (roc_auc) return *roc_auc;
    if (accuracy) return *accuracy;
    if (mape) return -*mape;
    return -loss;
  }
};

inline nlohmann::ordered_json to_json(const SetMetrics& m) {
  nlohmann::ordered_json j{{"samples", m.samples}, {"loss", m.loss}};
  auto opt = [&](const char* k, const std::optional<double>& v) {
    j[k] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  opt("accuracy", m.accuracy);
  opt("roc_auc", m.roc_auc);
  opt("mape", m.mape);
  j["mape_excluded"] = m.mape_excluded;
  j["dirichlet_energy"] = m.dirichlet_energy;
  opt("mad", m.mad);
  j["max_residual"] = m.max_residual;
  j["converged"] = m.converged;
  return j;
}

/// Task metrics over the masked nodes of the listed graphs, plus Dirichlet
/// energy and MAD of the last-snapshot embeddings averaged over those graphs.
inline SetMetrics evaluate_set(const IdgnnParams& p, const std::vector<DynamicGraph>& graphs,
                               const std::vector<std::vector<std::uint8_t>>& masks, OptimizerKind kind,
                               const FixedPointConfig& fp_cfg,
                               std::vector<FixedPointResult>* embeddings = nullptr) {
  SetMetrics m;
  const auto members = PreparedData::members(masks);
  if (members.empty()) return m;
  const Task task = graphs[members.front()].task;
  const Index outputs = p.num_outputs();

  std::vector<int> labels;
  std::vector<std::vector<double>> score_cols;
  std::vector<std::vector<double>> pred_cols;
  std::vector<std::vector<double>> target_cols;
  double mad_total = 0.0;
  Index mad_count = 0;
  for (Index gi : members) {
    const auto& g = graphs[gi];
    const auto& mask = masks[gi];
    FixedPointResult fp = model_embeddings(p, g, kind, fp_cfg);
    m.max_residual = std::max(m.max_residual, fp.residual);
    m.converged = m.converged && fp.converged;
    const DenseMatrix& z = fp.Z.back();
    const DenseMatrix out = predict_head(p.head, z);
    m.loss += task_loss(out, g, mask).loss;
    m.dirichlet_energy += dirichlet_energy(z, g.snapshots.back().adjacency);
    try {
      mad_total += mad(z, g.snapshots.back().adjacency);
      ++mad_count;
    } catch (const UndefinedMetric&) {
    }
    const DenseMatrix prob = task == Task::kClassification ? softmax_columns(out) : out;
    for (Index j = 0; j < g.num_nodes(); ++j) {
      if (!mask[j]) continue;
      std::vector<double> col(outputs);
      for (Index c = 0; c < outputs; ++c) col[c] = prob(c, j);
      if (task == Task::kClassification) {
        labels.push_back(g.classes[j]);
        score_cols.push_back(std::move(col));
      } else {
        std::vector<double> y(outputs);
        for (Index c = 0; c < outputs; ++c) y[c] = g.targets(c, j);
        pred_cols.push_back(std::move(col));
        target_cols.push_back(std::move(y));
      }
    }
    if (embeddings) embeddings->push_back(std::move(fp));
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  m.loss *= inv;
  m.dirichlet_energy *= inv;
  if (mad_count) m.mad = mad_total / static_cast<double>(mad_count);

  auto to_matrix = [&](const std::vector<std::vector<double>>& cols) {
    DenseMatrix s(outputs, cols.size());
    for (Index j = 0; j < cols.size(); ++j)
      for (Index c = 0; c < outputs; ++c) s(c, j) = cols[j][c];
    return s;
  };
  if (task == Task::kClassification) {
    m.samples = labels.size();
    const DenseMatrix scores = to_matrix(score_cols);
    m.accuracy = accuracy(scores, labels);
    try {
      m.roc_auc = roc_auc_macro(scores, labels).value;
    } catch (const UndefinedMetric&) {
    }
  } else {
    m.samples = pred_cols.size();
    try {
      const MetricReport r = mape(to_matrix(pred_cols), to_matrix(target_cols));
      m.mape = r.value;
      m.mape_excluded = r.excluded;
    } catch (const UndefinedMetric&) {
    }
  }
  return m;
}

struct LogRow {
  long step = 0;
  Index epoch = 0;
  double loss = 0.0;
  double residual = 0.0;
  double wall_ms = 0.0;
};

inline std::string train_log_csv(const std::vector<LogRow>& rows) {
  std::string out = "step,loss,residual,wall_ms\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + detail::format_double(r.loss) + ',' + detail::format_double(r.residual) +
           ',' + detail::format_double(r.wall_ms) + '\n';
  }
  return out;
}

struct EvalRecord {
  Index epoch = 0;
  SetMetrics train, validation, test;
};

struct TrainResult {
  IdgnnParams initial_params;
  IdgnnParams final_params;
  IdgnnParams best_params;
  Index best_epoch = 0;
  std::vector<LogRow> log;
  std::vector<EvalRecord> evals;
  std::optional<Index> first_perfect_train_epoch;
  std::vector<std::optional<double>> radii;
  /// Per-graph bilevel state at the end of training (bilevel only).
  std::vector<BlockState> blocks;
};

/// Called after every parameter update with the global step count.
using StepObserver = std::function<void(long step, const IdgnnParams&, const std::vector<std::optional<double>>& radii)>;

inline TrainResult train(const PreparedData& data, const ExperimentConfig& c, const StepObserver& observer = {}) {
  c.validate();
  const auto& graphs = data.graphs;
  const DynamicGraph& g0 = graphs.front();
  ModelShape shape;
  shape.dim = c.dim;
  shape.features = g0.num_features();
  shape.snapshots = g0.num_snapshots();
  shape.outputs = g0.num_outputs;
  shape.sharing = c.sharing;
  shape.activation = c.activation;

  TrainResult res;
  IdgnnParams p = init_params(shape, c.seed);
  res.radii = projection_radii(p, critical_norms(graphs), c.kappa);
  p = enforce_wellposedness(std::move(p), res.radii);
  res.initial_params = p;

  const FixedPointConfig fp_cfg{1.0, c.fp_tol, c.fp_max_sweeps};
  const std::vector<Index> train_ids = data.train_graphs();

  std::vector<const DynamicGraph*> train_graphs;
  std::vector<const std::vector<std::uint8_t>*> train_masks;
  for (Index gi : train_ids) {
    train_graphs.push_back(&graphs[gi]);
    train_masks.push_back(&data.train_mask[gi]);
  }

  OptimizerState opt;
  opt.eta0 = c.eta0;
  opt.eta1 = c.eta1;
  opt.eta2 = c.eta2;
  opt.gamma = c.gamma;
  opt.batch_size = c.batch_size;
  opt.kappa = c.kappa;
  opt.radii = res.radii;
  std::optional<BilevelTrainer> bilevel;
  if (c.optimizer == OptimizerKind::kBilevel) bilevel.emplace(p, train_graphs, opt, c.random_block_init, c.seed + 1);

  SgdHyper sgd;
  sgd.lr = c.eta0;
  sgd.fixed_point = fp_cfg;
  sgd.method = c.gradient;
  sgd.radii = res.radii;
  std::vector<std::vector<DenseMatrix>> warm(train_ids.size());

  std::pair<double, double> best_score{-std::numeric_limits<double>::infinity(), 0.0};
  auto evaluate = [&](Index epoch) -> const EvalRecord& {
    EvalRecord rec;
    rec.epoch = epoch;
    rec.train = evaluate_set(p, graphs, data.train_mask, c.optimizer, fp_cfg);
    rec.validation = evaluate_set(p, graphs, data.validation_mask, c.optimizer, fp_cfg);
    rec.test = evaluate_set(p, graphs, data.test_mask, c.optimizer, fp_cfg);
    const SetMetrics& sel = rec.validation.samples > 0 ? rec.validation : rec.train;
    const std::pair<double, double> score{sel.selection_score(), -sel.loss};
    if (res.evals.empty() || score > best_score) {
      best_score = score;
      res.best_params = p;
      res.best_epoch = epoch;
    }
    res.evals.push_back(std::move(rec));
    return res.evals.back();
  };

  std::mt19937_64 shuffle_rng(c.seed ^ 0x5eed5eedULL);
  std::vector<Index> order(train_ids.size());
  long step = 0;
  if (c.epochs == 0) evaluate(0);
  for (Index epoch = 1; epoch <= c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Index start = 0; start < order.size(); start += c.batch_size) {
      const Index stop = std::min<Index>(order.size(), start + c.batch_size);
      const std::vector<Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto t0 = std::chrono::steady_clock::now();
      LogRow row;
      row.epoch = epoch;
      if (c.optimizer == OptimizerKind::kBilevel) {
        const BilevelStepInfo info = bilevel->step(p, batch, train_graphs, train_masks);
        row.loss = info.loss;
        row.residual = info.residual;
      } else if (c.optimizer == OptimizerKind::kSgdIft) {
        std::vector<BatchItem> items;
        for (Index k : batch) items.push_back({train_graphs[k], train_masks[k], &warm[k], train_ids[k]});
        SgdStepResult r;
        try {
          r = sgd_train_step(std::move(p), items, sgd);
        } catch (const ConvergenceError& e) {
          throw ConvergenceError("step " + std::to_string(step + 1) + ", " + e.what(), e.residuals(),
                                 e.last_estimate());
        }
        p = std::move(r.params);
        row.loss = r.loss;
        row.residual = r.residual;
      } else {
        ParamGradients total = ParamGradients::zeros_like(p);
        for (Index k : batch) {
          auto [l, grads] = no_loop_loss_grad(p, *train_graphs[k], *train_masks[k]);
          row.loss += l;
          total.axpy(1.0, grads);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        row.loss *= inv;
        total.scale(inv);
        apply_descent(p, total, c.eta0);
        p = enforce_wellposedness(std::move(p), res.radii);
      }
      ++step;
      if (!p.all_finite() || !std::isfinite(row.loss)) {
        throw Error("non-finite parameters or loss at step " + std::to_string(step));
      }
      row.step = step;
      row.wall_ms = c.deterministic
                        ? 0.0
                        : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      res.log.push_back(row);
      if (observer) observer(step, p, res.radii);
    }
    if (epoch % c.eval_every == 0 || epoch == c.epochs) {
      const EvalRecord& rec = evaluate(epoch);
      if (rec.train.accuracy && *rec.train.accuracy == 1.0 && !res.first_perfect_train_epoch) {
        res.first_perfect_train_epoch = epoch;
        if (c.stop_on_perfect_train) break;
      }
    }
  }
  res.final_params = p;
  if (bilevel) res.blocks = bilevel->blocks();
  return res;
}

inline nlohmann::ordered_json metrics_json(const TrainResult& r) {
  nlohmann::ordered_json j;
  auto find = [&](Index epoch) -> const EvalRecord* {
    for (const auto& e : r.evals)
      if (e.epoch == epoch) return &e;
    return nullptr;
  };
  if (const EvalRecord* best = find(r.best_epoch)) {
    j["best_epoch"] = r.best_epoch;
    j["best"] = {{"train", to_json(best->train)}, {"validation", to_json(best->validation)}, {"test", to_json(best->test)}};
  }
  if (!r.evals.empty()) {
    const auto& last = r.evals.back();
    j["final_epoch"] = last.epoch;
    j["final"] = {{"train", to_json(last.train)}, {"validation", to_json(last.validation)}, {"test", to_json(last.test)}};
  }
  j["first_perfect_train_epoch"] =
      r.first_perfect_train_epoch ? nlohmann::ordered_json(*r.first_perfect_train_epoch) : nlohmann::ordered_json(nullptr);
  j["steps"] = r.log.size();
  return j;
}

/// Writes params.json (best on validation), final_params.json, train_log.csv,
/// metrics.json and run.json into cfg.out_dir.
inline void write_run(const ExperimentConfig& c, const PreparedData& data, const TrainResult& r) {
  const fs::path out(c.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error("cannot create " + out.string() + ": " + ec.message());
  save_params(out / "params.json", r.best_params);
  save_params(out / "final_params.json", r.final_params);
  detail::write_file(out / "train_log.csv", train_log_csv(r.log));
  detail::write_file(out / "metrics.json", metrics_json(r).dump(2) + "\n");
  nlohmann::ordered_json run = to_json(c);
  run["meta"] = {{"resolved_split", data.split_mode},
                 {"num_graphs", data.graphs.size()},
                 {"num_nodes", data.graphs.front().num_nodes()},
                 {"num_snapshots", data.graphs.front().num_snapshots()},
                 {"seeds", {{"init", c.seed}, {"split", c.split_seed}, {"generator", c.generator.seed}}}};
  detail::write_file(out / "run.json", run.dump(2) + "\n");
}

}  // namespace idgnn
