#include "dlrt/trainer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using dlrt::Matrix;
using dlrt::SplitMix64;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dlrt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Three Gaussian blobs in 6 dimensions: learnable in a few epochs.
dlrt::Dataset blobs(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  dlrt::Dataset ds;
  ds.height = 2;
  ds.width = 3;
  ds.images.resize(6, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(3));
    for (int d = 0; d < 6; ++d) {
      const double centre = d % 3 == label ? 2.0 : 0.0;
      ds.images(d, static_cast<Eigen::Index>(i)) = static_cast<float>(centre + 0.3 * dlrt::gaussian_matrix(1, 1, rng)(0, 0));
    }
    ds.labels.push_back(label);
  }
  return ds;
}

dlrt::RunConfig tiny_config(const fs::path& out) {
  dlrt::RunConfig c;
  c.architecture = dlrt::mlp_spec(6, 8, 2, 3);
  c.mode = dlrt::TrainMode::kAdaptive;
  c.tau = 0.1;
  c.integrator = dlrt::Adam{.lr = 0.05};
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 11;
  c.train_size = 120;
  c.val_size = 40;
  c.test_size = 40;
  c.out_dir = out;
  return c;
}

dlrt::Splits tiny_splits() { return dlrt::split(blobs(200, 3), {120, 40, 40, 5}); }

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    n += line.empty() ? 0 : 1;
  }
  return n;
}

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config("out");
  c.integrator = dlrt::Euler{0.2};
  c.lr_decay = 0.99;
  c.freeze_after = 2;
  const auto j = dlrt::to_json(c);
  const auto back = dlrt::config_from_json(j);
  EXPECT_EQ(dlrt::to_json(back), j);
  EXPECT_EQ(back.tau, c.tau);
  EXPECT_EQ(back.architecture.layers.size(), 3u);

  const fs::path dir = scratch("config");
  dlrt::save_config(c, dir / "c.json");
  EXPECT_EQ(dlrt::to_json(dlrt::load_config(dir / "c.json")), j);
}

TEST(Config, PresetAndValidation) {
  const auto c = dlrt::config_from_json(nlohmann::json::parse(
      R"({"architecture": "lenet5", "policy": {"mode": "adaptive", "tau": 0.2},
          "integrator": {"kind": "sgd", "lr": 0.2}})"));
  EXPECT_EQ(c.architecture.name, "lenet5");
  EXPECT_TRUE(std::holds_alternative<dlrt::Euler>(c.integrator));
  EXPECT_NO_THROW(dlrt::validate(c));

  auto bad = tiny_config("x");
  bad.tau.reset();
  EXPECT_THROW(dlrt::validate(bad), dlrt::ConfigError);
  bad = tiny_config("x");
  bad.tau = 1.0;
  EXPECT_THROW(dlrt::validate(bad), dlrt::ConfigError);
  bad = tiny_config("x");
  bad.mode = dlrt::TrainMode::kFixed;
  EXPECT_THROW(dlrt::validate(bad), dlrt::ConfigError);
  bad = tiny_config("x");
  bad.batch_size = 0;
  EXPECT_THROW(dlrt::validate(bad), dlrt::ConfigError);
  EXPECT_THROW((void)dlrt::config_from_json(nlohmann::json::parse(R"({"integrator": {"kind": "rmsprop"}})")),
               dlrt::ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  SplitMix64 rng(1);
  const auto net = dlrt::build_network(dlrt::lenet5_spec(), dlrt::TrainMode::kAdaptive, {}, 4);
  const fs::path dir = scratch("ckpt");
  dlrt::save_checkpoint(net, {.architecture = "lenet5", .seed = 4, .epoch = 7}, dir);
  const auto loaded = dlrt::load_checkpoint(dir);
  EXPECT_EQ(loaded.variant, "train");
  EXPECT_EQ(loaded.info.epoch, 7);
  const auto& back = std::get<dlrt::Network>(loaded.model);
  const auto a = oracle::layers_of(net);
  const auto b = oracle::layers_of(back);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].w, b[i].w);
    EXPECT_EQ(a[i].b, b[i].b);
  }
  EXPECT_EQ(dlrt::layer_ranks(back), dlrt::layer_ranks(net));
}

TEST(Checkpoint, DetectsCorruption) {
  SplitMix64 rng(2);
  const auto net = oracle::random_mlp(rng, 3, 4, 6, 3, false);
  const fs::path dir = scratch("corrupt");
  dlrt::save_checkpoint(net, {}, dir);
  const fs::path blob = dir / "layer0_S.bin";
  ASSERT_TRUE(fs::exists(blob));
  {
    std::fstream f(blob, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(3);
    f.put('\x5a');
  }
  EXPECT_THROW((void)dlrt::load_checkpoint(dir), dlrt::CheckpointError);
  fs::resize_file(blob, 4);
  EXPECT_THROW((void)dlrt::load_checkpoint(dir), dlrt::CheckpointError);
  EXPECT_THROW((void)dlrt::load_checkpoint(scratch("empty")), dlrt::CheckpointError);
}

TEST(Checkpoint, BlobHelpers) {
  SplitMix64 rng(3);
  const Matrix m = oracle::random_matrix(3, 5, rng);
  const fs::path dir = scratch("blob");
  dlrt::write_blob(m, dir / "m.bin");
  EXPECT_EQ(fs::file_size(dir / "m.bin"), 15u * 8u);
  EXPECT_EQ(dlrt::read_blob(dir / "m.bin", 3, 5), m);
  // Row-major layout: the second stored value is m(0, 1).
  std::ifstream in(dir / "m.bin", std::ios::binary);
  unsigned char bytes[16];
  in.read(reinterpret_cast<char*>(bytes), 16);
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | bytes[8 + i];
  }
  EXPECT_EQ(std::bit_cast<double>(bits), m(0, 1));
  EXPECT_NE(dlrt::blob_checksum(m), dlrt::blob_checksum(m * 2.0));
}

TEST(Deploy, LogitsMatchFactoredForward) {
  SplitMix64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto net = oracle::random_mlp(rng, 3, 4, 12, 4, t % 2 == 0);
    const Matrix x = oracle::random_matrix(dlrt::input_width(net), 7, rng);
    const Matrix expected = dlrt::forward(net, x, false).logits;
    const auto model = dlrt::to_deploy(net);
    EXPECT_LE((dlrt::deploy_forward(model, x) - expected).norm(), 1e-10 * std::max(1.0, expected.norm()));
    const fs::path dir = scratch("deploy");
    dlrt::save_deploy(model, {}, dir);
    const auto loaded = dlrt::load_checkpoint(dir);
    EXPECT_EQ(loaded.variant, "deploy");
    EXPECT_EQ(dlrt::deploy_forward(std::get<dlrt::DeployModel>(loaded.model), x), dlrt::deploy_forward(model, x));
    EXPECT_THROW((void)dlrt::load_network(dir), dlrt::CheckpointError);
  }
  const auto lenet = dlrt::build_network(dlrt::lenet5_spec(), dlrt::TrainMode::kAdaptive, {}, 2);
  const Matrix img = oracle::random_matrix(784, 2, rng);
  const Matrix expected = dlrt::forward(lenet, img, false).logits;
  EXPECT_LE((dlrt::deploy_forward(dlrt::to_deploy(lenet), img) - expected).norm(), 1e-10 * std::max(1.0, expected.norm()));
}

TEST(Prune, FullRankChangesNothing) {
  const auto splits = tiny_splits();
  const auto dense = dlrt::build_network(dlrt::mlp_spec(6, 5, 2, 3), dlrt::TrainMode::kDense, {}, 3);
  const auto pruned = dlrt::prune(dense, {.ranks = {5, 5}});
  EXPECT_EQ(dlrt::layer_ranks(pruned), (std::vector<int>{5, 5}));
  EXPECT_NEAR(dlrt::evaluate(pruned, splits.test).accuracy, dlrt::evaluate(dense, splits.test).accuracy, 1e-12);
  EXPECT_NEAR(dlrt::evaluate(pruned, splits.test).loss, dlrt::evaluate(dense, splits.test).loss, 1e-10);
  EXPECT_THROW((void)dlrt::prune(dense, {.ranks = {6}}), std::invalid_argument);
  EXPECT_THROW((void)dlrt::prune(dense, {.ranks = {2, 2, 2}}), std::invalid_argument);
  EXPECT_THROW((void)dlrt::prune(pruned, {.ranks = {2}}), std::invalid_argument);
  EXPECT_EQ(dlrt::layer_ranks(dlrt::prune(dense, {.ranks = {}, .tau = 0.999})), (std::vector<int>{1, 1}));
}

TEST(Train, WritesOneMetricsRowPerEpoch) {
  const fs::path out = scratch("train");
  auto config = tiny_config(out);
  std::ostringstream log;
  const auto run = dlrt::cmd_train(config, tiny_splits(), log);
  EXPECT_EQ(run.outcome.history.size(), 3u);
  EXPECT_EQ(line_count(out / "metrics.csv"), 1u + 3u);
  EXPECT_EQ(line_count(out / "ranks.csv"), 1u + 3u);
  for (const char* sub : {"last", "best", "deploy"}) {
    EXPECT_TRUE(fs::exists(out / sub / "manifest.json")) << sub;
  }
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_GT(run.test.accuracy, 0.9);
  std::ifstream in(out / "metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, dlrt::metrics_header());

  const auto report = dlrt::cmd_evaluate(out / "last", tiny_splits().test);
  EXPECT_NEAR(report.result.accuracy, run.test.accuracy, 1e-12);
  EXPECT_EQ(report.ranks, run.outcome.history.back().ranks);
  EXPECT_EQ(report.full_params, 6 * 8 + 8 * 8 + 8 * 3);
}

TEST(Train, IsDeterministicInSeed) {
  auto config = tiny_config("unused");
  config.epochs = 2;
  const auto splits = tiny_splits();
  const auto a = dlrt::train(dlrt::initial_network(config), config, splits.train, splits.val);
  const auto b = dlrt::train(dlrt::initial_network(config), config, splits.train, splits.val);
  EXPECT_EQ(a.history.back().train_loss, b.history.back().train_loss);
  EXPECT_EQ(a.history.back().ranks, b.history.back().ranks);
}

TEST(Train, DenseModeEulerStepIsGradientDescent) {
  auto config = tiny_config("unused");
  config.mode = dlrt::TrainMode::kDense;
  config.integrator = dlrt::Euler{0.1};
  config.epochs = 1;
  config.batch_size = 1000;  // one full batch
  const auto splits = tiny_splits();
  const auto net = dlrt::initial_network(config);
  const auto batch = splits.train.all();
  const auto pass = dlrt::forward(net, batch.inputs, true);
  const auto grads = dlrt::dense_backprop(net, *pass.tape, batch.labels);
  const auto out = dlrt::train(net, config, splits.train, splits.val);
  const auto before = oracle::layers_of(net);
  const auto after = oracle::layers_of(out.last);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_LE((after[i].w - (before[i].w - 0.1 * grads[i].weight)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Train, PruneRetrainWritesLogs) {
  const fs::path out = scratch("prune");
  auto config = tiny_config(out);
  config.epochs = 2;
  const auto dense = dlrt::build_network(dlrt::mlp_spec(6, 8, 2, 3), dlrt::TrainMode::kDense, {}, 3);
  std::ostringstream log;
  const auto report = dlrt::cmd_prune_retrain(dense, {.ranks = {2}}, config, tiny_splits(), log);
  EXPECT_EQ(report.ranks, (std::vector<int>{2, 2}));
  EXPECT_EQ(report.outcome.history.back().ranks, (std::vector<int>{2, 2}));
  EXPECT_EQ(line_count(out / "metrics.csv"), 3u);
}

TEST(Benchmark, OpCountsAreDeterministicAndMonotone) {
  const auto spec = dlrt::preset("mlp500", 64);
  long long prev = 0;
  for (int r : {4, 8, 16, 32, 64}) {
    const std::vector<int> ranks{r};
    const auto net = dlrt::build_network(spec, dlrt::TrainMode::kFixed, ranks, 1);
    const long long ops = dlrt::step_op_count(net);
    EXPECT_EQ(ops, static_cast<long long>(r) * r * (784 + 64) + 3LL * r * r * 128 + 640);
    EXPECT_GE(ops, prev);
    prev = ops;
  }
  dlrt::RunConfig config;
  config.architecture = spec;
  dlrt::BenchmarkOptions opt{.ranks = {4, 8}, .include_dense = true, .warm_batches = 2, .warmup = 1,
                             .predict_repeats = 2, .predict_samples = 64};
  std::ostringstream log;
  const auto rows = dlrt::cmd_benchmark(config, opt, log);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) {
    EXPECT_GT(row.step_mean, 0.0);
    EXPECT_GT(row.predict_mean, 0.0);
  }
  const std::string row = dlrt::timings_row(rows[0]);
  const std::string header = dlrt::timings_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
}

}  // namespace
