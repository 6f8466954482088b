#pragma once
//
// Training loop, evaluation and the four user-facing commands.
//

#include "dlrt/checkpoint.hpp"
#include "dlrt/config.hpp"
#include "dlrt/data.hpp"
#include "dlrt/dlrt.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace dlrt {

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Forward-only pass over `ds` in chunks of `chunk` samples.
[[nodiscard]] EvalResult evaluate(const Network& net, const Dataset& ds, std::size_t chunk = 2000);
[[nodiscard]] EvalResult evaluate(const DeployModel& model, const Dataset& ds, std::size_t chunk = 2000);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's steps, each taken before its update
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  std::vector<int> ranks;
  ParameterCounts counts;
  double wall_time = 0.0;  // seconds since training started
};

struct TrainHooks {
  std::ostream* log = nullptr;
  std::function<void(const EpochMetrics&, const Network&)> on_epoch;
};

struct TrainOutcome {
  Network last;
  Network best;  // highest validation accuracy (earliest on ties)
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
};

/// Runs `config.epochs` epochs of DLRT (or dense) steps over shuffled batches
/// of `train_set`, evaluating on `val_set` after each epoch.
[[nodiscard]] TrainOutcome train(Network net, const RunConfig& config, const Dataset& train_set,
                                 const Dataset& val_set, const TrainHooks& hooks = {});

/// Network initialised from the config's architecture, policy and seed.
[[nodiscard]] Network initial_network(const RunConfig& config);

// CSV logs. Ranks are joined with ';' inside the metrics row.
[[nodiscard]] std::string metrics_header();
[[nodiscard]] std::string metrics_row(const EpochMetrics& m);
[[nodiscard]] std::string ranks_header(const Network& net);
[[nodiscard]] std::string ranks_row(const EpochMetrics& m);

struct TrainRun {
  TrainOutcome outcome;
  EvalResult test;  // of the last network
};

/// Loads data, trains, and writes config.json, metrics.csv, ranks.csv and
/// the checkpoints best/, last/ and deploy/ below config.out_dir.
TrainRun cmd_train(const RunConfig& config, std::ostream& log);

/// Same as cmd_train with data already in memory.
TrainRun cmd_train(const RunConfig& config, const Splits& data, std::ostream& log);

struct EvaluateReport {
  EvalResult result;
  std::vector<int> ranks;
  long long eval_params = 0;
  long long full_params = 0;
  [[nodiscard]] double compression() const {
    return 1.0 - static_cast<double>(eval_params) / static_cast<double>(full_params);
  }
};

/// Evaluates a train or deploy checkpoint through the deploy form.
[[nodiscard]] EvaluateReport cmd_evaluate(const std::filesystem::path& checkpoint, const Dataset& ds);

[[nodiscard]] long long deploy_parameter_count(const DeployModel& model);
[[nodiscard]] long long dense_parameter_count(const DeployModel& model);

struct PruneTarget {
  std::vector<int> ranks;  // one per pruned layer, or a single rank for all
  double tau = 0.0;        // used when ranks is empty
};

/// SVD-truncates every ReLU dense layer of a dense network (the softmax head
/// stays dense). Throws std::invalid_argument when a rank exceeds min(n_out, n_in).
[[nodiscard]] Network prune(const Network& dense, const PruneTarget& target);

struct PruneReport {
  EvalResult before;
  EvalResult after;
  std::vector<int> ranks;
  TrainOutcome outcome;
};

/// Prunes, reports test metrics, retrains with fixed ranks for config.epochs,
/// and reports again. Writes metrics.csv, ranks.csv and checkpoints below out_dir.
PruneReport cmd_prune_retrain(const Network& dense, const PruneTarget& target, const RunConfig& config,
                              const Splits& data, std::ostream& log);

struct BenchmarkOptions {
  std::vector<int> ranks{8, 16, 32, 64, 128};
  bool include_dense = true;
  int warm_batches = 50;
  int warmup = 3;
  int predict_repeats = 10;
  std::size_t predict_samples = 10'000;
};

struct BenchmarkRow {
  std::string label;  // "dense" or "rank=<r>"
  int rank = 0;       // 0 for dense
  double step_mean = 0.0;
  double step_std = 0.0;
  double step_median = 0.0;
  double predict_mean = 0.0;
  double predict_std = 0.0;
  long long step_ops = 0;
  long long eval_params = 0;
};

/// Analytic per-step cost: r^2 (n_out + n_in) per low-rank layer and
/// n_out n_in per dense layer.
[[nodiscard]] long long step_op_count(const Network& net);

/// Times fixed-rank DLRT and dense steps on the config's architecture with
/// synthetic inputs (the cost does not depend on pixel values). Timed steps
/// are interleaved across configurations.
[[nodiscard]] std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& config, const BenchmarkOptions& options,
                                                      std::ostream& log);

[[nodiscard]] std::string timings_header();
[[nodiscard]] std::string timings_row(const BenchmarkRow& row);

}  // namespace dlrt
