// Command-line front end: dataset generation, training, evaluation,
// runtime benchmark and gradient cross-check.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "idgnn/idgnn.hpp"

namespace {

using namespace idgnn;

struct GenArgs {
  std::string kind;
  GeneratorSpec spec;
  std::string out;
};

/// Flag overrides layered on top of a JSON config file.
struct TrainArgs {
  std::string config_file;
  std::optional<std::string> dataset, generator, split, activation, sharing, optimizer, gradient, out;
  std::optional<Index> T, label_snapshot, num_classes, nodes, windows, dim, epochs, batch_size, eval_every;
  std::optional<std::uint64_t> gen_seed, split_seed, seed;
  std::optional<double> kappa, eta0, eta1, eta2, gamma, fp_tol;
  std::optional<bool> deterministic, normalize, random_block_init, stop_on_perfect;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config_file, "JSON config file (flags override its values)")->check(CLI::ExistingFile);
  cmd->add_option("--dataset", a.dataset, "dataset directory (otherwise the generator is used)");
  cmd->add_option("--generator", a.generator, "toy-longrange | toy-binary | random");
  cmd->add_option("--T", a.T, "snapshots for the generator");
  cmd->add_option("--label-snapshot", a.label_snapshot, "1-based snapshot carrying the labels (toy-longrange)");
  cmd->add_option("--num-classes", a.num_classes, "classes for the generator");
  cmd->add_option("--nodes", a.nodes, "nodes for the random generator");
  cmd->add_option("--windows", a.windows, "dynamic graphs to generate");
  cmd->add_option("--gen-seed", a.gen_seed, "generator seed");
  cmd->add_option("--split", a.split, "auto | all | transductive | inductive");
  cmd->add_option("--split-seed", a.split_seed, "split seed");
  cmd->add_option("--dim", a.dim, "embedding size d");
  cmd->add_option("--activation", a.activation, "relu | tanh");
  cmd->add_option("--sharing", a.sharing, "idgnn | share-both | share-w | not-share");
  cmd->add_option("--kappa", a.kappa, "well-posedness margin in (0, 1)");
  cmd->add_option("--optimizer", a.optimizer, "bilevel | sgd-ift | no-loop");
  cmd->add_option("--gradient", a.gradient, "adjoint | forward (sgd-ift only)");
  cmd->add_option("--eta0", a.eta0, "learning rate");
  cmd->add_option("--eta1", a.eta1, "fixed-point tracking rate (bilevel)");
  cmd->add_option("--eta2", a.eta2, "inverse-Hessian tracking rate (bilevel)");
  cmd->add_option("--gamma", a.gamma, "moving-average weight (bilevel)");
  cmd->add_option("--epochs", a.epochs, "training epochs");
  cmd->add_option("--batch-size", a.batch_size, "dynamic graphs per step");
  cmd->add_option("--eval-every", a.eval_every, "epochs between evaluations");
  cmd->add_option("--seed", a.seed, "initialization and shuffling seed");
  cmd->add_option("--fp-tol", a.fp_tol, "fixed-point tolerance");
  cmd->add_option("--deterministic", a.deterministic, "write wall_ms as 0 for bit-identical logs (true|false)");
  cmd->add_option("--normalize", a.normalize, "0-1 feature scaling from the training part (true|false)");
  cmd->add_option("--random-block-init", a.random_block_init, "random initial bilevel block states (true|false)");
  cmd->add_option("--stop-on-perfect", a.stop_on_perfect, "stop once training accuracy is 1 (true|false)");
  cmd->add_option("--out", a.out, "output directory");
}

ExperimentConfig resolve_config(const TrainArgs& a) {
  ExperimentConfig c;
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(DataError::Kind::kParse, a.config_file, e.what());
    }
    c = config_from_json(j, c);
  }
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.dataset, a.dataset);
  set(c.generator.kind, a.generator);
  set(c.generator.T, a.T);
  set(c.generator.label_snapshot, a.label_snapshot);
  set(c.generator.num_classes, a.num_classes);
  set(c.generator.nodes, a.nodes);
  set(c.generator.windows, a.windows);
  set(c.generator.seed, a.gen_seed);
  set(c.split, a.split);
  set(c.split_seed, a.split_seed);
  set(c.dim, a.dim);
  if (a.activation) c.activation = parse_activation(*a.activation);
  if (a.sharing) c.sharing = parse_sharing(*a.sharing);
  set(c.kappa, a.kappa);
  if (a.optimizer) c.optimizer = parse_optimizer(*a.optimizer);
  if (a.gradient) c.gradient = parse_gradient_method(*a.gradient);
  set(c.eta0, a.eta0);
  set(c.eta1, a.eta1);
  set(c.eta2, a.eta2);
  set(c.gamma, a.gamma);
  set(c.epochs, a.epochs);
  set(c.batch_size, a.batch_size);
  set(c.eval_every, a.eval_every);
  set(c.seed, a.seed);
  set(c.fp_tol, a.fp_tol);
  set(c.deterministic, a.deterministic);
  set(c.normalize, a.normalize);
  set(c.random_block_init, a.random_block_init);
  set(c.stop_on_perfect_train, a.stop_on_perfect);
  set(c.out_dir, a.out);
  c.validate();
  return c;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

int cmd_gen(const GenArgs& a) {
  GeneratorSpec s = a.spec;
  s.kind = a.kind;
  const auto graphs = generate(s);
  save_dataset(a.out, graphs);
  const Manifest m = read_manifest(a.out);
  std::cout << "wrote " << a.out << ": N=" << m.N << " T=" << m.T << " n=" << m.n << " l=" << m.l
            << " task=" << to_string(m.task) << " outputs=" << m.num_outputs << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig c = resolve_config(a);
  const PreparedData data = prepare_data(load_or_generate(c), c);
  const TrainResult r = train(data, c);
  write_run(c, data, r);
  const EvalRecord* best = nullptr;
  for (const auto& e : r.evals)
    if (e.epoch == r.best_epoch) best = &e;
  std::cout << "optimizer=" << to_string(c.optimizer) << " steps=" << r.log.size() << " best_epoch=" << r.best_epoch
            << "\n";
  if (best) {
    std::cout << "train acc=" << fmt(best->train.accuracy) << " val acc=" << fmt(best->validation.accuracy)
              << " test acc=" << fmt(best->test.accuracy) << " test auc=" << fmt(best->test.roc_auc)
              << " test mape=" << fmt(best->test.mape) << "\n";
  }
  std::cout << "artifacts in " << c.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  TrainArgs train;
  std::string params;
  std::string part = "test";
};

int cmd_eval(const EvalArgs& a) {
  const ExperimentConfig c = resolve_config(a.train);
  const PreparedData data = prepare_data(load_or_generate(c), c);
  const IdgnnParams p = load_params(a.params);
  for (const auto& g : data.graphs) detail::check_model_graph(p, g);
  if (p.num_features() != data.graphs.front().num_features() || p.num_outputs() != data.graphs.front().num_outputs) {
    throw DimensionError("eval: parameter shapes do not match the dataset");
  }
  const std::vector<std::vector<std::uint8_t>>* masks = nullptr;
  std::vector<std::vector<std::uint8_t>> all;
  if (a.part == "train") masks = &data.train_mask;
  else if (a.part == "validation") masks = &data.validation_mask;
  else if (a.part == "test") masks = &data.test_mask;
  else if (a.part == "all") {
    for (const auto& g : data.graphs) all.push_back(g.labeled);
    masks = &all;
  } else {
    throw InvalidArgument("eval: --part must be train, validation, test or all");
  }
  std::vector<FixedPointResult> emb;
  const FixedPointConfig fp{1.0, c.fp_tol, c.fp_max_sweeps};
  const SetMetrics m = evaluate_set(p, data.graphs, *masks, c.optimizer, fp, &emb);

  const fs::path out(c.out_dir);
  fs::create_directories(out);
  nlohmann::ordered_json j = to_json(m);
  j["part"] = a.part;
  detail::write_file(out / "metrics.json", j.dump(2) + "\n");
  const auto members = PreparedData::members(*masks);
  for (Index k = 0; k < emb.size(); ++k) {
    const std::string name = k == 0 ? "embeddings.csv" : "embeddings_g" + std::to_string(members[k]) + ".csv";
    detail::write_file(out / name, embeddings_csv(emb[k].Z.back()));
  }
  std::cout << "part=" << a.part << " samples=" << m.samples << " loss=" << m.loss << " acc=" << fmt(m.accuracy)
            << " auc=" << fmt(m.roc_auc) << " mape=" << fmt(m.mape) << " dirichlet=" << m.dirichlet_energy
            << " mad=" << fmt(m.mad) << "\n";
  return 0;
}

struct BenchArgs {
  BenchConfig cfg;
  std::string out = "bench_out";
};

int cmd_bench(const BenchArgs& a) {
  const BenchResult r = run_bench(a.cfg);
  const fs::path out(a.out);
  fs::create_directories(out);
  detail::write_file(out / "timings.csv", timings_csv(r));
  detail::write_file(out / "bench.json", to_json(a.cfg, r).dump(2) + "\n");
  for (const auto& [method, med] : r.medians) {
    std::cout << method << ":";
    for (Index k = 0; k < med.size(); ++k) std::cout << " n=" << a.cfg.sizes[k] << " " << med[k] << "s";
    if (r.slopes.count(method)) std::cout << "  slope=" << r.slopes.at(method);
    std::cout << "\n";
  }
  return 0;
}

int cmd_oracle(const OracleConfig& cfg) {
  const OracleReport r = oracle_check(cfg);
  std::cout << "instances=" << r.instances << " rejected=" << r.rejected << "\n"
            << "forward vs adjoint: " << r.forward_vs_adjoint << "\n"
            << "forward vs finite differences: " << r.forward_vs_fd << "\n"
            << "adjoint vs finite differences: " << r.adjoint_vs_fd << "\n"
            << (r.pass ? "PASS" : "FAIL") << " (tolerance " << cfg.tolerance << ", " << r.seconds << " s)\n";
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit dynamic graph neural networks: generate, train, evaluate, benchmark"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "write a synthetic dataset directory");
  g->add_option("kind", gen.kind, "toy-longrange | toy-binary | random")->required();
  g->add_option("--T", gen.spec.T, "snapshots")->capture_default_str();
  g->add_option("--seed", gen.spec.seed, "random seed")->capture_default_str();
  g->add_option("--num-classes", gen.spec.num_classes, "classes")->capture_default_str();
  g->add_option("--label-snapshot", gen.spec.label_snapshot, "1-based snapshot carrying the labels")
      ->capture_default_str();
  g->add_option("--nodes", gen.spec.nodes, "nodes (random)")->capture_default_str();
  g->add_option("--features", gen.spec.features, "features (random)")->capture_default_str();
  g->add_option("--avg-degree", gen.spec.avg_degree, "average degree (random)")->capture_default_str();
  g->add_option("--windows", gen.spec.windows, "number of dynamic graphs")->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "train a model and write params, logs and metrics");
  add_train_options(t, train_args);

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "evaluate saved params; write metrics.json and embeddings.csv");
  add_train_options(e, eval_args.train);
  e->add_option("--params", eval_args.params, "params JSON file")->required()->check(CLI::ExistingFile);
  e->add_option("--part", eval_args.part, "train | validation | test | all")->capture_default_str();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "seconds per window of implicit SGD vs bilevel over node counts");
  b->add_option("--sizes", bench.cfg.sizes, "node counts")->delimiter(',')->capture_default_str();
  b->add_option("--dim", bench.cfg.dim, "embedding size")->capture_default_str();
  b->add_option("--T", bench.cfg.snapshots, "snapshots")->capture_default_str();
  b->add_option("--avg-degree", bench.cfg.avg_degree, "average degree")->capture_default_str();
  b->add_option("--windows", bench.cfg.windows, "dynamic graphs per epoch")->capture_default_str();
  b->add_option("--repeats", bench.cfg.repeats, "timed epochs (cheap methods)")->capture_default_str();
  b->add_option("--oracle-repeats", bench.cfg.oracle_repeats, "timed epochs (forward sensitivities)")
      ->capture_default_str();
  b->add_option("--seed", bench.cfg.seed, "seed")->capture_default_str();
  bool no_oracle = false;
  b->add_flag("--no-oracle", no_oracle, "skip forward-sensitivity SGD");
  b->add_flag("--adjoint", bench.cfg.adjoint, "also time adjoint SGD");
  b->add_option("--out", bench.out, "output directory")->capture_default_str();

  OracleConfig oracle;
  auto* o = app.add_subcommand("oracle-check", "forward sensitivities vs adjoint vs finite differences");
  o->add_option("--instances", oracle.instances, "instances")->capture_default_str();
  o->add_option("--n", oracle.nodes, "nodes")->capture_default_str();
  o->add_option("--d", oracle.dim, "embedding size")->capture_default_str();
  o->add_option("--T", oracle.snapshots, "snapshots")->capture_default_str();
  o->add_option("--seed", oracle.seed, "seed")->capture_default_str();
  o->add_option("--tolerance", oracle.tolerance, "max relative error")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(train_args);
    if (*e) return cmd_eval(eval_args);
    if (*b) {
      bench.cfg.oracle = !no_oracle;
      return cmd_bench(bench);
    }
    if (*o) return cmd_oracle(oracle);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
