// Command-line front end: train, evaluate, prune-retrain, benchmark.

#include "dlrt/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

struct CommonFlags {
  std::string config;
  std::string data_dir;
  std::string out;
  std::string arch;
  int width = 0;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::vector<int> fixed_ranks;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::string optimizer;
  std::optional<double> lr;
  std::optional<double> lr_decay;
  std::optional<int> max_steps;
  std::optional<int> freeze_after;
  std::optional<int> log_every;
  bool dense = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--data-dir", f.data_dir, "directory with the MNIST IDX files (default: $DLRT_DATA_DIR)");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--arch", f.arch, "architecture preset")
      ->check(CLI::IsMember({"mlp500", "mlp784", "mlp5120", "lenet5"}));
  app->add_option("--width", f.width, "hidden width override for mlp presets");
  app->add_option("--seed", f.seed, "seed for initialisation, splits and shuffling");
  app->add_option("--tau", f.tau, "relative truncation tolerance (adaptive mode)");
  app->add_option("--fixed-ranks", f.fixed_ranks, "fixed ranks, one per low-rank layer or one for all")
      ->delimiter(',');
  app->add_option("--epochs", f.epochs, "number of epochs");
  app->add_option("--batch-size", f.batch_size, "mini-batch size");
  app->add_option("--optimizer", f.optimizer, "integrator")->check(CLI::IsMember({"euler", "adam"}));
  app->add_option("--lr", f.lr, "learning rate");
  app->add_option("--lr-decay", f.lr_decay, "per-epoch learning-rate factor");
  app->add_option("--max-steps", f.max_steps, "cap on steps per epoch");
  app->add_option("--freeze-after", f.freeze_after, "switch adaptive training to fixed ranks after this epoch");
  app->add_option("--log-every", f.log_every, "progress line every N steps");
  app->add_flag("--dense", f.dense, "train the dense baseline instead of low-rank layers");
}

dlrt::RunConfig resolve(const CommonFlags& f) {
  dlrt::RunConfig c = f.config.empty() ? dlrt::RunConfig{} : dlrt::load_config(f.config);
  if (!f.arch.empty()) {
    c.architecture = dlrt::preset(f.arch, f.width);
  } else if (f.width > 0) {
    c.architecture = dlrt::preset(c.architecture.name, f.width);
  }
  if (!f.data_dir.empty()) {
    c.data_dir = f.data_dir;
  }
  if (c.data_dir.empty()) {
    if (const char* env = std::getenv("DLRT_DATA_DIR")) {
      c.data_dir = env;
    }
  }
  if (!f.out.empty()) {
    c.out_dir = f.out;
  }
  if (f.seed) {
    c.seed = *f.seed;
  }
  if (f.tau) {
    c.tau = *f.tau;
    c.mode = dlrt::TrainMode::kAdaptive;
  }
  if (!f.fixed_ranks.empty()) {
    c.fixed_ranks = f.fixed_ranks;
    c.mode = dlrt::TrainMode::kFixed;
  }
  if (f.dense) {
    c.mode = dlrt::TrainMode::kDense;
  }
  if (f.epochs) {
    c.epochs = *f.epochs;
  }
  if (f.batch_size) {
    c.batch_size = *f.batch_size;
  }
  if (f.optimizer == "euler") {
    c.integrator = dlrt::Euler{};
  } else if (f.optimizer == "adam") {
    c.integrator = dlrt::Adam{};
  }
  if (f.lr) {
    dlrt::set_learning_rate(c.integrator, *f.lr);
  }
  if (f.lr_decay) {
    c.lr_decay = *f.lr_decay;
  }
  if (f.max_steps) {
    c.max_steps_per_epoch = *f.max_steps;
  }
  if (f.freeze_after) {
    c.freeze_after = *f.freeze_after;
  }
  if (f.log_every) {
    c.log_every = *f.log_every;
  }
  return c;
}

dlrt::Splits load_data(const dlrt::RunConfig& c) {
  if (c.data_dir.empty()) {
    throw dlrt::ConfigError("no data directory given (--data-dir, config data.dir or DLRT_DATA_DIR)");
  }
  return dlrt::split(dlrt::load_mnist_pool(c.data_dir), c.split_spec());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamical low-rank training of neural networks"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "train a network (adaptive, fixed-rank or dense)");
  add_common(train, train_flags);

  CommonFlags eval_flags;
  std::string eval_checkpoint;
  std::string eval_split = "test";
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint through its deploy form");
  add_common(evaluate, eval_flags);
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();
  evaluate->add_option("--split", eval_split, "which split to score")->check(CLI::IsMember({"train", "val", "test"}));

  CommonFlags prune_flags;
  std::string prune_checkpoint;
  std::vector<int> prune_ranks;
  std::optional<double> prune_tau;
  auto* prune = app.add_subcommand("prune-retrain", "SVD-truncate a dense checkpoint and retrain at fixed rank");
  add_common(prune, prune_flags);
  prune->add_option("--checkpoint", prune_checkpoint, "dense train checkpoint directory")->required();
  prune->add_option("--ranks", prune_ranks, "target ranks, one per layer or one for all")->delimiter(',');
  prune->add_option("--prune-tau", prune_tau, "choose ranks by relative tail tolerance instead");

  CommonFlags bench_flags;
  std::vector<int> bench_ranks{8, 16, 32, 64, 128};
  int bench_batches = 50;
  int bench_repeats = 10;
  std::size_t bench_samples = 10'000;
  bool bench_no_dense = false;
  auto* bench = app.add_subcommand("benchmark", "time training steps and prediction across ranks");
  add_common(bench, bench_flags);
  bench->add_option("--ranks", bench_ranks, "ranks to time")->delimiter(',');
  bench->add_option("--batches", bench_batches, "timed training steps per configuration");
  bench->add_option("--repeats", bench_repeats, "prediction repeats per configuration");
  bench->add_option("--samples", bench_samples, "samples per prediction pass");
  bench->add_flag("--no-dense", bench_no_dense, "skip the dense baseline");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const dlrt::RunConfig config = resolve(train_flags);
      dlrt::validate(config);
      const dlrt::Splits data = load_data(config);
      (void)dlrt::cmd_train(config, data, std::cout);
    } else if (evaluate->parsed()) {
      const dlrt::RunConfig config = resolve(eval_flags);
      const dlrt::Splits data = load_data(config);
      const dlrt::Dataset& ds = eval_split == "train" ? data.train : eval_split == "val" ? data.val : data.test;
      const dlrt::EvaluateReport r = dlrt::cmd_evaluate(eval_checkpoint, ds);
      std::cout << "loss " << r.result.loss << "\naccuracy " << r.result.accuracy << "\nranks";
      for (int rank : r.ranks) {
        std::cout << ' ' << rank;
      }
      std::cout << "\neval_params " << r.eval_params << "\nfull_params " << r.full_params << "\ncompression "
                << r.compression() << '\n';
    } else if (prune->parsed()) {
      dlrt::RunConfig config = resolve(prune_flags);
      if (prune_ranks.empty() && !prune_tau) {
        throw dlrt::ConfigError("prune-retrain needs --ranks or --prune-tau");
      }
      const dlrt::Network dense = dlrt::load_network(prune_checkpoint);
      const dlrt::Splits data = load_data(config);
      dlrt::PruneTarget target{prune_ranks, prune_tau.value_or(0.0)};
      (void)dlrt::cmd_prune_retrain(dense, target, config, data, std::cout);
    } else if (bench->parsed()) {
      const dlrt::RunConfig config = resolve(bench_flags);
      dlrt::BenchmarkOptions options;
      options.ranks = bench_ranks;
      options.include_dense = !bench_no_dense;
      options.warm_batches = bench_batches;
      options.predict_repeats = bench_repeats;
      options.predict_samples = bench_samples;
      const auto rows = dlrt::cmd_benchmark(config, options, std::cout);
      std::filesystem::create_directories(config.out_dir);
      std::ofstream csv(config.out_dir / "timings.csv");
      csv << dlrt::timings_header() << '\n';
      for (const auto& row : rows) {
        csv << dlrt::timings_row(row) << '\n';
      }
      std::cout << "wrote " << (config.out_dir / "timings.csv").string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
