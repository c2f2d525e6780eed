#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

#ifndef IDGNN_CLI_PATH
#error "IDGNN_CLI_PATH must point at the command-line binary"
#endif

namespace idgnn {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IDGNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig toy_config(Index epochs) {
  ExperimentConfig c;
  c.generator.kind = "toy-longrange";
  c.generator.T = 3;
  c.dim = 8;
  c.epochs = epochs;
  c.eval_every = 5;
  c.eta0 = 0.05;
  return c;
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = toy_config(7);
  c.activation = Activation::kTanh;
  c.optimizer = OptimizerKind::kSgdIft;
  c.gradient = GradientMethod::kForwardSensitivity;
  c.sharing = Sharing::kShareW;
  c.ratios = {0.6, 0.2, 0.2};
  const auto j = to_json(c);
  const ExperimentConfig back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"dimm", 3}}), InvalidArgument);
  EXPECT_NO_THROW(config_from_json(nlohmann::json{{"meta", {{"anything", 1}}}}));
  ExperimentConfig c;
  c.dim = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.kappa = 1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.dataset = "/definitely/not/here";
  EXPECT_THROW(c.validate(), DataError);
  EXPECT_THROW(parse_optimizer("adam"), InvalidArgument);
  EXPECT_EQ(parse_optimizer(to_string(OptimizerKind::kNoLoop)), OptimizerKind::kNoLoop);
  EXPECT_EQ(parse_gradient_method(to_string(GradientMethod::kForwardSensitivity)), GradientMethod::kForwardSensitivity);
}

TEST(Prepare, SplitResolution) {
  ExperimentConfig c;
  EXPECT_EQ(resolve_split(c, 1), "all");
  c.generator.kind = "random";
  EXPECT_EQ(resolve_split(c, 1), "transductive");
  EXPECT_EQ(resolve_split(c, 5), "inductive");
  c.split = "all";
  EXPECT_EQ(resolve_split(c, 5), "all");
}

TEST(Prepare, TransductiveMasksPartitionLabeledNodes) {
  ExperimentConfig c;
  c.generator.kind = "random";
  c.generator.nodes = 50;
  const auto d = prepare_data(generate(c.generator), c);
  EXPECT_EQ(d.split_mode, "transductive");
  for (Index i = 0; i < 50; ++i) {
    EXPECT_EQ(d.train_mask[0][i] + d.validation_mask[0][i] + d.test_mask[0][i], 1);
  }
  EXPECT_EQ(detail::mask_count(d.train_mask[0]), 35u);
}

TEST(Prepare, InductiveMasksSelectWindows) {
  ExperimentConfig c;
  c.generator.kind = "random";
  c.generator.windows = 10;
  const auto d = prepare_data(generate(c.generator), c);
  EXPECT_EQ(d.split_mode, "inductive");
  EXPECT_EQ(d.train_graphs(), (std::vector<Index>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(PreparedData::members(d.test_mask), (std::vector<Index>{8, 9}));
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  const ExperimentConfig c = toy_config(0);
  const auto r = train(prepare_data(load_or_generate(c), c), c);
  EXPECT_EQ(r.final_params, r.initial_params);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.evals.size(), 1u);
}

TEST(Train, DeterministicLogs) {
  for (auto kind : {OptimizerKind::kBilevel, OptimizerKind::kSgdIft, OptimizerKind::kNoLoop}) {
    ExperimentConfig c = toy_config(10);
    c.optimizer = kind;
    const auto d = prepare_data(load_or_generate(c), c);
    const auto a = train(d, c), b = train(d, c);
    EXPECT_EQ(train_log_csv(a.log), train_log_csv(b.log)) << to_string(kind);
    EXPECT_EQ(a.final_params, b.final_params);
    for (const auto& row : a.log) EXPECT_EQ(row.wall_ms, 0.0);
    EXPECT_EQ(a.log.size(), 10u);
  }
}

TEST(Train, ObserverSeesEveryStepAndBestIsTracked) {
  ExperimentConfig c = toy_config(12);
  c.generator.windows = 3;
  c.split = "all";
  c.batch_size = 2;
  long calls = 0;
  const auto r = train(prepare_data(load_or_generate(c), c), c,
                       [&](long step, const IdgnnParams& p, const std::vector<std::optional<double>>& radii) {
                         ++calls;
                         EXPECT_EQ(step, calls);
                         for (Index s = 0; s < p.W.size(); ++s) EXPECT_LE(infinity_norm(p.W[s]), *radii[s] + 1e-12);
                       });
  EXPECT_EQ(calls, 24);
  EXPECT_EQ(r.evals.size(), 3u);
  EXPECT_TRUE(r.best_epoch == 5 || r.best_epoch == 10 || r.best_epoch == 12);
  const auto j = metrics_json(r);
  EXPECT_EQ(j.at("steps"), 24);
  EXPECT_EQ(j.at("best_epoch"), r.best_epoch);
}

TEST(Train, EvaluateSetReportsEmbeddingDiagnostics) {
  ExperimentConfig c = toy_config(0);
  const auto d = prepare_data(load_or_generate(c), c);
  const auto r = train(d, c);
  std::vector<FixedPointResult> emb;
  const auto m = evaluate_set(r.final_params, d.graphs, d.train_mask, c.optimizer, {1.0, 1e-8, 500}, &emb);
  EXPECT_EQ(m.samples, 10u);
  ASSERT_TRUE(m.accuracy.has_value());
  EXPECT_TRUE(m.roc_auc.has_value());
  EXPECT_GT(m.dirichlet_energy, 0.0);
  EXPECT_TRUE(m.converged);
  ASSERT_EQ(emb.size(), 1u);
  EXPECT_NEAR(m.dirichlet_energy, dirichlet_energy(emb[0].Z.back(), d.graphs[0].snapshots.back().adjacency), 1e-12);
}

TEST(Bench, Helpers) {
  EXPECT_DOUBLE_EQ(fit_slope({0, 1, 2}, {1, 3, 5}), 2.0);
  EXPECT_NEAR(log_log_slope({10, 20, 40}, {1.0, 4.0, 16.0}), 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), InvalidArgument);
  EXPECT_THROW(fit_slope({1, 1}, {1, 2}), InvalidArgument);
}

TEST(Bench, SmallRunProducesRowsAndSlopes) {
  BenchConfig cfg;
  cfg.sizes = {8, 16};
  cfg.dim = 4;
  cfg.snapshots = 2;
  cfg.repeats = 2;
  cfg.adjoint = true;
  const auto r = run_bench(cfg);
  EXPECT_EQ(r.rows.size(), 2u * (1 + 2 + 2));
  EXPECT_EQ(r.medians.size(), 3u);
  EXPECT_EQ(r.slopes.size(), 3u);
  const std::string csv = timings_csv(r);
  EXPECT_EQ(csv.rfind("method,n,repeat,seconds_per_window\n", 0), 0u);
  EXPECT_TRUE(to_json(cfg, r).contains("log_log_slope"));
}

TEST(Oracle, SmallInstancesAgree) {
  OracleConfig cfg;
  cfg.instances = 2;
  const auto r = oracle_check(cfg);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.instances, 2u);
  EXPECT_LT(r.forward_vs_adjoint, 1e-8);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / "idgnn_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string path(const std::string& rel) const { return (root_ / rel).string(); }
  fs::path root_;
};

TEST_F(Cli, GenerateWritesTheOnDiskFormat) {
  ASSERT_EQ(run_cli("gen toy-longrange --T 10 --seed 1 --out " + path("d")), 0);
  for (int t = 0; t < 10; ++t) {
    EXPECT_TRUE(fs::exists(root_ / "d/g0" / ("edges_" + std::to_string(t) + ".csv")));
    EXPECT_TRUE(fs::exists(root_ / "d/g0" / ("features_" + std::to_string(t) + ".csv")));
  }
  const auto graphs = load_dataset(root_ / "d");
  EXPECT_EQ(graphs[0].num_snapshots(), 10u);
  ASSERT_EQ(run_cli("gen toy-longrange --T 10 --label-snapshot 5 --out " + path("s")), 0);
  EXPECT_EQ(load_dataset(root_ / "s")[0].snapshots[4].features, DenseMatrix::identity(10));
  ASSERT_EQ(run_cli("gen toy-binary --T 64 --out " + path("b")), 0);
  EXPECT_EQ(load_dataset(root_ / "b")[0].num_snapshots(), 64u);
}

TEST_F(Cli, TrainIsReproducibleFromRunJson) {
  ASSERT_EQ(run_cli("gen toy-longrange --T 3 --out " + path("d")), 0);
  ASSERT_EQ(run_cli("train --dataset " + path("d") + " --split all --dim 8 --epochs 20 --eta0 0.05 --out " + path("r1")),
            0);
  for (const char* f : {"params.json", "final_params.json", "train_log.csv", "metrics.json", "run.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "r1" / f)) << f;
  }
  ASSERT_EQ(run_cli("train --config " + path("r1/run.json") + " --out " + path("r2")), 0);
  EXPECT_EQ(slurp(root_ / "r1/train_log.csv"), slurp(root_ / "r2/train_log.csv"));
  EXPECT_EQ(slurp(root_ / "r1/train_log.csv").substr(0, 29), "step,loss,residual,wall_ms\n1,");

  ASSERT_EQ(run_cli("eval --dataset " + path("d") + " --split all --params " + path("r1/params.json") +
                    " --part all --out " + path("e")),
            0);
  const std::string emb = slurp(root_ / "e/embeddings.csv");
  EXPECT_EQ(std::count(emb.begin(), emb.end(), '\n'), 10);
  const std::string first = emb.substr(0, emb.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 7);
  const auto m = nlohmann::json::parse(slurp(root_ / "e/metrics.json"));
  EXPECT_GT(m.at("dirichlet_energy").get<double>(), 0.0);
}

TEST_F(Cli, ErrorsGiveNonzeroExit) {
  EXPECT_NE(run_cli("train --dataset " + path("missing") + " --epochs 1 --out " + path("x")), 0);
  EXPECT_NE(run_cli("gen nonsense --out " + path("x")), 0);
  EXPECT_NE(run_cli("train --generator toy-longrange --kappa 2 --out " + path("x")), 0);
  EXPECT_NE(run_cli(""), 0);
  EXPECT_EQ(run_cli("oracle-check --instances 1"), 0);
}

}  // namespace
}  // namespace idgnn
