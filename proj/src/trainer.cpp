#include "dlrt/trainer.hpp"

#include "dlrt/random.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dlrt {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class Forward>
EvalResult evaluate_chunks(const Dataset& ds, std::size_t chunk, Forward&& fwd) {
  EvalResult total;
  if (ds.size() == 0) {
    return total;
  }
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = ds.gather(idx);
    const Matrix logits = fwd(batch.inputs);
    const auto n = static_cast<double>(idx.size());
    total.loss += cross_entropy_loss(logits, batch.labels) * n;
    total.accuracy += accuracy(logits, batch.labels) * n;
  }
  total.loss /= static_cast<double>(ds.size());
  total.accuracy /= static_cast<double>(ds.size());
  return total;
}

std::string join_ranks(const std::vector<int>& ranks, char sep) {
  std::string out;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    out += (i ? std::string(1, sep) : std::string()) + std::to_string(ranks[i]);
  }
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << header << '\n';
  return out;
}

int deploy_input_width(const DeployLayer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    return static_cast<int>(d->weight.cols());
  }
  if (const auto* l = std::get_if<DeployLowRank>(&layer)) {
    return static_cast<int>(l->v.rows());
  }
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    return c->shape.in_features();
  }
  if (const auto* c = std::get_if<DeployConv>(&layer)) {
    return c->shape.in_features();
  }
  return std::get<MaxPool>(layer).in_features();
}

CheckpointInfo info_for(const RunConfig& config, const EpochMetrics* m) {
  CheckpointInfo info;
  info.architecture = config.architecture.name;
  info.seed = config.seed;
  if (m != nullptr) {
    info.epoch = m->epoch;
    info.metrics = {{"train_loss", m->train_loss}, {"train_acc", m->train_acc}, {"val_loss", m->val_loss},
                    {"val_acc", m->val_acc}};
  }
  return info;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) {
    return out;
  }
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) {
      ss += (x - out.mean) * (x - out.mean);
    }
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

double median(std::vector<double> xs) {
  if (xs.empty()) {
    return 0.0;
  }
  const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
  std::nth_element(xs.begin(), mid, xs.end());
  if (xs.size() % 2 == 1) {
    return *mid;
  }
  return 0.5 * (*mid + *std::max_element(xs.begin(), mid));
}

Batch synthetic_batch(int inputs, int classes, int size, SplitMix64& rng) {
  Batch b;
  b.inputs.resize(inputs, size);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  for (Eigen::Index j = 0; j < b.inputs.cols(); ++j) {
    for (Eigen::Index i = 0; i < b.inputs.rows(); ++i) {
      b.inputs(i, j) = pixel(rng);
    }
  }
  b.labels.resize(static_cast<std::size_t>(size));
  for (int& y : b.labels) {
    y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  }
  return b;
}

}  // namespace

EvalResult evaluate(const Network& net, const Dataset& ds, std::size_t chunk) {
  return evaluate_chunks(ds, chunk, [&](const Matrix& x) { return forward(net, x, false).logits; });
}

EvalResult evaluate(const DeployModel& model, const Dataset& ds, std::size_t chunk) {
  if (model.layers.empty()) {
    throw std::invalid_argument("evaluate: empty model");
  }
  if (deploy_input_width(model.layers.front()) != ds.images.rows()) {
    throw std::invalid_argument("evaluate: model expects " + std::to_string(deploy_input_width(model.layers.front())) +
                                " inputs but the data has " + std::to_string(ds.images.rows()) + " features");
  }
  return evaluate_chunks(ds, chunk, [&](const Matrix& x) { return deploy_forward(model, x); });
}

Network initial_network(const RunConfig& config) {
  return build_network(config.architecture, config.mode, config.fixed_ranks, config.seed);
}

TrainOutcome train(Network net, const RunConfig& config, const Dataset& train_set, const Dataset& val_set,
                   const TrainHooks& hooks) {
  validate_training(config);
  if (train_set.size() == 0) {
    throw std::invalid_argument("train: empty training set");
  }
  if (train_set.images.rows() != input_width(net)) {
    throw std::invalid_argument("train: network expects " + std::to_string(input_width(net)) +
                                " inputs but the data has " + std::to_string(train_set.images.rows()));
  }
  const bool dense = config.mode == TrainMode::kDense;
  TruncationPolicy policy = FixedTruncation{};
  if (config.mode == TrainMode::kAdaptive) {
    policy = AdaptiveTruncation{*config.tau};
  }
  IntegratorKind kind = config.integrator;
  OptimizerStates states;

  TrainOutcome out;
  double best_acc = -1.0;
  const auto start = Clock::now();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = batches(train_set.size(), static_cast<std::size_t>(config.batch_size), config.seed,
                               static_cast<std::uint64_t>(epoch));
    std::size_t steps = order.size();
    if (config.max_steps_per_epoch > 0) {
      steps = std::min(steps, static_cast<std::size_t>(config.max_steps_per_epoch));
    }
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const Batch batch = train_set.gather(order[s]);
      const StepReport report =
          dense ? dense_step(net, batch, kind, states) : dlrt_step(net, batch, policy, kind, states);
      const auto n = static_cast<double>(batch.labels.size());
      loss_sum += report.loss * n;
      acc_sum += report.accuracy * n;
      seen += batch.labels.size();
      if (hooks.log != nullptr && config.log_every > 0 && (s + 1) % static_cast<std::size_t>(config.log_every) == 0) {
        *hooks.log << "  epoch " << epoch << " step " << (s + 1) << "/" << steps << " loss " << report.loss
                   << " ranks [" << join_ranks(layer_ranks(net), ',') << "]\n"
                   << std::flush;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = acc_sum / static_cast<double>(seen);
    const EvalResult val = evaluate(net, val_set);
    m.val_loss = val.loss;
    m.val_acc = val.accuracy;
    m.ranks = layer_ranks(net);
    m.counts = parameter_counts(net);
    m.wall_time = seconds_since(start);
    out.history.push_back(m);
    if (val_set.size() == 0 || m.val_acc > best_acc) {
      best_acc = m.val_acc;
      out.best = net;
      out.best_epoch = epoch;
    }
    if (hooks.log != nullptr) {
      *hooks.log << "epoch " << epoch << "  loss " << std::fixed << std::setprecision(4) << m.train_loss
                 << "  acc " << m.train_acc << "  val_loss " << m.val_loss << "  val_acc " << m.val_acc
                 << "  ranks [" << join_ranks(m.ranks, ',') << "]  " << std::setprecision(1) << m.wall_time << "s\n"
                 << std::defaultfloat << std::setprecision(6) << std::flush;
    }
    if (hooks.on_epoch) {
      hooks.on_epoch(m, net);
    }
    set_learning_rate(kind, learning_rate(kind) * config.lr_decay);
    if (config.freeze_after > 0 && epoch == config.freeze_after && is_adaptive(policy)) {
      policy = FixedTruncation{};
      if (hooks.log != nullptr) {
        *hooks.log << "ranks frozen at [" << join_ranks(m.ranks, ',') << "]\n";
      }
    }
  }
  if (out.history.empty()) {
    out.best = net;
  }
  out.last = std::move(net);
  return out;
}

std::string metrics_header() {
  return "epoch,train_loss,train_acc,val_loss,val_acc,ranks,eval_params,train_params,eval_cr,train_cr,wall_time";
}

std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(17) << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.val_loss << ','
     << m.val_acc << ',' << join_ranks(m.ranks, ';') << ',' << m.counts.eval << ',' << m.counts.train << ','
     << m.counts.eval_compression() << ',' << m.counts.train_compression() << ',' << std::setprecision(6)
     << m.wall_time;
  return os.str();
}

std::string ranks_header(const Network& net) {
  std::string out = "epoch";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (factors_of(net.layers[i]) != nullptr) {
      out += ",layer" + std::to_string(i);
    }
  }
  return out;
}

std::string ranks_row(const EpochMetrics& m) { return std::to_string(m.epoch) + "," + join_ranks(m.ranks, ','); }

TrainRun cmd_train(const RunConfig& config, std::ostream& log) {
  validate(config);
  if (config.data_dir.empty()) {
    throw ConfigError("no data directory given (--data-dir, config data.dir or DLRT_DATA_DIR)");
  }
  const Dataset pool = load_mnist_pool(config.data_dir);
  const Splits data = split(pool, config.split_spec());
  return cmd_train(config, data, log);
}

TrainRun cmd_train(const RunConfig& config, const Splits& data, std::ostream& log) {
  validate(config);
  std::filesystem::create_directories(config.out_dir);
  save_config(config, config.out_dir / "config.json");

  Network net = initial_network(config);
  auto metrics = open_csv(config.out_dir / "metrics.csv", metrics_header());
  auto ranks = open_csv(config.out_dir / "ranks.csv", ranks_header(net));
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const EpochMetrics& m, const Network&) {
    metrics << metrics_row(m) << '\n' << std::flush;
    ranks << ranks_row(m) << '\n' << std::flush;
  };

  TrainRun run;
  run.outcome = train(std::move(net), config, data.train, data.val, hooks);
  const EpochMetrics* last = run.outcome.history.empty() ? nullptr : &run.outcome.history.back();
  const EpochMetrics* best =
      run.outcome.best_epoch > 0 ? &run.outcome.history[static_cast<std::size_t>(run.outcome.best_epoch - 1)] : nullptr;
  save_checkpoint(run.outcome.last, info_for(config, last), config.out_dir / "last");
  save_checkpoint(run.outcome.best, info_for(config, best), config.out_dir / "best");
  save_deploy(to_deploy(run.outcome.last), info_for(config, last), config.out_dir / "deploy");

  run.test = evaluate(run.outcome.last, data.test);
  const ParameterCounts counts = parameter_counts(run.outcome.last);
  log << "test loss " << run.test.loss << "  test acc " << run.test.accuracy << "  ranks ["
      << join_ranks(layer_ranks(run.outcome.last), ',') << "]  eval params " << counts.eval << " (c.r. "
      << counts.eval_compression() << ")\n";
  return run;
}

long long deploy_parameter_count(const DeployModel& model) {
  long long total = 0;
  for (const DeployLayer& layer : model.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      total += d->weight.size();
    } else if (const auto* l = std::get_if<DeployLowRank>(&layer)) {
      total += l->us.size() + l->v.size();
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      total += c->weight.size();
    } else if (const auto* c = std::get_if<DeployConv>(&layer)) {
      total += c->factors.us.size() + c->factors.v.size();
    }
  }
  return total;
}

long long dense_parameter_count(const DeployModel& model) {
  long long total = 0;
  for (const DeployLayer& layer : model.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      total += d->weight.size();
    } else if (const auto* l = std::get_if<DeployLowRank>(&layer)) {
      total += l->us.rows() * l->v.rows();
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      total += c->weight.size();
    } else if (const auto* c = std::get_if<DeployConv>(&layer)) {
      total += c->factors.us.rows() * c->factors.v.rows();
    }
  }
  return total;
}

EvaluateReport cmd_evaluate(const std::filesystem::path& checkpoint, const Dataset& ds) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const DeployModel model =
      ck.variant == "deploy" ? std::get<DeployModel>(std::move(ck.model)) : to_deploy(std::get<Network>(ck.model));
  EvaluateReport report;
  report.result = evaluate(model, ds);
  report.ranks = layer_ranks(model);
  report.eval_params = deploy_parameter_count(model);
  report.full_params = dense_parameter_count(model);
  return report;
}

Network prune(const Network& dense, const PruneTarget& target) {
  std::size_t prunable = 0;
  for (const Layer& layer : dense.layers) {
    if (is_low_rank(layer)) {
      throw std::invalid_argument("prune: expected a dense network");
    }
    const auto* d = std::get_if<DenseLayer>(&layer);
    const auto* c = std::get_if<ConvLayer>(&layer);
    prunable += ((d && d->activation == Activation::kRelu) || (c && c->activation == Activation::kRelu)) ? 1 : 0;
  }
  if (!target.ranks.empty() && target.ranks.size() != 1 && target.ranks.size() != prunable) {
    throw std::invalid_argument("prune: " + std::to_string(target.ranks.size()) + " ranks for " +
                                std::to_string(prunable) + " prunable layers");
  }
  if (target.ranks.empty() && !(target.tau > 0.0 && target.tau < 1.0)) {
    throw std::invalid_argument("prune: need ranks or tau in (0, 1)");
  }
  auto pick_rank = [&](const Matrix& w, std::size_t k) {
    if (!target.ranks.empty()) {
      return target.ranks.size() == 1 ? target.ranks[0] : target.ranks[k];
    }
    const Vector sigma = Eigen::BDCSVD<Matrix>(w).singularValues();
    return std::max(1, truncation_rank(sigma, target.tau * sigma.norm()));
  };

  Network out;
  std::size_t k = 0;
  for (const Layer& layer : dense.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer); d && d->activation == Activation::kRelu) {
      out.layers.emplace_back(factors_from_dense(d->weight, d->bias, pick_rank(d->weight, k++), d->activation));
    } else if (const auto* c = std::get_if<ConvLayer>(&layer); c && c->activation == Activation::kRelu) {
      out.layers.emplace_back(
          LowRankConv{c->shape, factors_from_dense(c->weight, c->bias, pick_rank(c->weight, k++), c->activation)});
    } else {
      out.layers.push_back(layer);
    }
  }
  validate(out);
  return out;
}

PruneReport cmd_prune_retrain(const Network& dense, const PruneTarget& target, const RunConfig& config,
                              const Splits& data, std::ostream& log) {
  RunConfig retrain = config;
  retrain.mode = TrainMode::kFixed;
  PruneReport report;
  Network pruned = prune(dense, target);
  report.ranks = layer_ranks(pruned);
  retrain.fixed_ranks = report.ranks;
  report.before = evaluate(pruned, data.test);
  log << "pruned to ranks [" << join_ranks(report.ranks, ',') << "]  test acc before retraining "
      << report.before.accuracy << '\n';

  std::filesystem::create_directories(retrain.out_dir);
  auto metrics = open_csv(retrain.out_dir / "metrics.csv", metrics_header());
  auto ranks = open_csv(retrain.out_dir / "ranks.csv", ranks_header(pruned));
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const EpochMetrics& m, const Network&) {
    metrics << metrics_row(m) << '\n' << std::flush;
    ranks << ranks_row(m) << '\n' << std::flush;
  };
  report.outcome = train(std::move(pruned), retrain, data.train, data.val, hooks);
  report.after = evaluate(report.outcome.last, data.test);
  const EpochMetrics* last = report.outcome.history.empty() ? nullptr : &report.outcome.history.back();
  save_checkpoint(report.outcome.last, info_for(retrain, last), retrain.out_dir / "last");
  save_deploy(to_deploy(report.outcome.last), info_for(retrain, last), retrain.out_dir / "deploy");
  log << "test acc after retraining " << report.after.accuracy << '\n';
  return report;
}

long long step_op_count(const Network& net) {
  long long ops = 0;
  for (const Layer& layer : net.layers) {
    if (const LowRankFactors* f = factors_of(layer)) {
      const long long r = f->rank();
      ops += r * r * (f->n_out() + f->n_in());
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      ops += d->weight.size();
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      ops += c->weight.size();
    }
  }
  return ops;
}

std::vector<BenchmarkRow> cmd_benchmark(const RunConfig& config, const BenchmarkOptions& options, std::ostream& log) {
  if (options.warm_batches < 1 || options.predict_repeats < 1) {
    throw std::invalid_argument("benchmark: need at least one timed batch and one prediction repeat");
  }
  struct Entry {
    Network net;
    BenchmarkRow row;
    OptimizerStates states;
    std::vector<double> step_times;
    std::vector<double> predict_times;
  };
  std::vector<Entry> entries;
  for (int r : options.ranks) {
    const std::vector<int> ranks{r};
    entries.push_back({build_network(config.architecture, TrainMode::kFixed, ranks, config.seed),
                       {.label = "rank=" + std::to_string(r), .rank = r}, {}, {}, {}});
  }
  if (options.include_dense) {
    entries.push_back({build_network(config.architecture, TrainMode::kDense, {}, config.seed), {.label = "dense"}, {}, {}, {}});
  }
  if (entries.empty()) {
    return {};
  }

  SplitMix64 rng(derive_seed(config.seed, 0xbe4c));
  const int n0 = input_width(entries.front().net);
  const int classes = output_width(entries.front().net);
  std::vector<Batch> pool;
  for (int i = 0; i < 4; ++i) {
    pool.push_back(synthetic_batch(n0, classes, config.batch_size, rng));
  }
  const Batch predict_set = synthetic_batch(n0, classes, static_cast<int>(options.predict_samples), rng);

  auto step = [&](Entry& e, const Batch& b) {
    if (e.row.rank == 0) {
      (void)dense_step(e.net, b, config.integrator, e.states);
    } else {
      (void)dlrt_step(e.net, b, FixedTruncation{e.row.rank}, config.integrator, e.states);
    }
  };
  for (Entry& e : entries) {
    for (int i = 0; i < options.warmup; ++i) {
      step(e, pool[static_cast<std::size_t>(i) % pool.size()]);
    }
  }
  // Round-robin over the configurations so drift in machine load hits all
  // of them alike.
  for (int i = 0; i < options.warm_batches; ++i) {
    const Batch& b = pool[static_cast<std::size_t>(i) % pool.size()];
    for (Entry& e : entries) {
      const auto t0 = Clock::now();
      step(e, b);
      e.step_times.push_back(seconds_since(t0));
    }
  }
  std::vector<DeployModel> models;
  for (const Entry& e : entries) {
    models.push_back(to_deploy(e.net));
  }
  for (int i = 0; i < options.predict_repeats; ++i) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto t0 = Clock::now();
      const Matrix logits = deploy_forward(models[k], predict_set.inputs);
      entries[k].predict_times.push_back(seconds_since(t0));
      if (!logits.allFinite()) {
        throw NumericError("benchmark: non-finite logits");
      }
    }
  }

  std::vector<BenchmarkRow> rows;
  for (Entry& e : entries) {
    BenchmarkRow& row = e.row;
    const MeanStd st = mean_std(e.step_times);
    const MeanStd pt = mean_std(e.predict_times);
    row.step_mean = st.mean;
    row.step_std = st.std;
    row.step_median = median(e.step_times);
    row.predict_mean = pt.mean;
    row.predict_std = pt.std;
    row.step_ops = step_op_count(e.net);
    row.eval_params = parameter_counts(e.net).eval;
    log << row.label << ": step " << st.mean * 1e3 << " +- " << st.std * 1e3 << " ms (median "
        << row.step_median * 1e3 << "), predict " << pt.mean * 1e3 << " +- " << pt.std * 1e3 << " ms, ops "
        << row.step_ops << '\n'
        << std::flush;
    rows.push_back(row);
  }
  return rows;
}

std::string timings_header() {
  return "label,rank,step_mean_s,step_std_s,step_median_s,predict_mean_s,predict_std_s,step_ops,eval_params";
}

std::string timings_row(const BenchmarkRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.label << ',' << r.rank << ',' << r.step_mean << ',' << r.step_std << ','
     << r.step_median << ',' << r.predict_mean << ',' << r.predict_std << ',' << r.step_ops << ',' << r.eval_params;
  return os.str();
}

}  // namespace dlrt
