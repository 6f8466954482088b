#include "dlrt/config.hpp"

#include <fstream>

namespace dlrt {
namespace {

using nlohmann::json;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) {
    return fallback;
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

json conv_to_json(const ConvShape& s) {
  return {{"filters", s.filters}, {"channels", s.channels}, {"kernel_h", s.kernel_h}, {"kernel_w", s.kernel_w},
          {"stride", s.stride},   {"padding", s.padding},   {"in_h", s.in_h},         {"in_w", s.in_w}};
}

ConvShape conv_from_json(const json& j) {
  ConvShape s;
  s.filters = get_or(j, "filters", s.filters);
  s.channels = get_or(j, "channels", s.channels);
  s.kernel_h = get_or(j, "kernel_h", s.kernel_h);
  s.kernel_w = get_or(j, "kernel_w", s.kernel_w);
  s.stride = get_or(j, "stride", s.stride);
  s.padding = get_or(j, "padding", s.padding);
  s.in_h = get_or(j, "in_h", s.in_h);
  s.in_w = get_or(j, "in_w", s.in_w);
  return s;
}

}  // namespace

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kRelu:
      return "relu";
    case Activation::kSoftmax:
      return "softmax";
    case Activation::kIdentity:
      return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") {
    return Activation::kRelu;
  }
  if (name == "softmax") {
    return Activation::kSoftmax;
  }
  if (name == "identity") {
    return Activation::kIdentity;
  }
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kAdaptive:
      return "adaptive";
    case TrainMode::kFixed:
      return "fixed";
    case TrainMode::kDense:
      return "dense";
  }
  return "?";
}

json to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) {
    json e;
    switch (l.kind) {
      case LayerKind::kDense:
        e = {{"type", "dense"}, {"in", l.n_in}, {"out", l.n_out}};
        break;
      case LayerKind::kConv:
        e = conv_to_json(l.conv);
        e["type"] = "conv";
        break;
      case LayerKind::kPool:
        e = {{"type", "pool"}, {"channels", l.pool.channels}, {"in_h", l.pool.in_h}, {"in_w", l.pool.in_w}};
        layers.push_back(e);
        continue;
    }
    e["activation"] = to_string(l.activation);
    e["low_rank"] = l.low_rank;
    e["initial_rank"] = l.initial_rank;
    e["min_rank"] = l.min_rank;
    layers.push_back(e);
  }
  return {{"name", spec.name}, {"layers", layers}};
}

NetworkSpec spec_from_json(const json& j) {
  if (j.is_string()) {
    return preset(j.get<std::string>());
  }
  if (j.contains("preset")) {
    return preset(j.at("preset").get<std::string>(), get_or(j, "width", 0));
  }
  NetworkSpec spec;
  spec.name = get_or<std::string>(j, "name", "custom");
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw ConfigError("architecture needs a 'preset' or a 'layers' array");
  }
  for (const json& e : j.at("layers")) {
    const auto type = get_or<std::string>(e, "type", "dense");
    LayerSpec l;
    if (type == "dense") {
      l.n_in = get_or(e, "in", 0);
      l.n_out = get_or(e, "out", 0);
    } else if (type == "conv") {
      l.kind = LayerKind::kConv;
      l.conv = conv_from_json(e);
    } else if (type == "pool") {
      l.kind = LayerKind::kPool;
      l.pool = MaxPool{get_or(e, "channels", 1), get_or(e, "in_h", 2), get_or(e, "in_w", 2)};
      l.activation = Activation::kIdentity;
      spec.layers.push_back(l);
      continue;
    } else {
      throw ConfigError("unknown layer type '" + type + "'");
    }
    l.activation = activation_from_string(get_or<std::string>(e, "activation", "relu"));
    l.low_rank = get_or(e, "low_rank", false);
    l.initial_rank = get_or(e, "initial_rank", 0);
    l.min_rank = get_or(e, "min_rank", 0);
    spec.layers.push_back(l);
  }
  return spec;
}

void validate(const RunConfig& c) {
  if (c.architecture.layers.empty()) {
    throw ConfigError("architecture has no layers");
  }
  try {
    // Building a throwaway network checks conformability of all widths.
    const std::vector<int> ranks(c.mode == TrainMode::kFixed && !c.fixed_ranks.empty() ? c.fixed_ranks
                                                                                           : std::vector<int>{1});
    (void)build_network(c.architecture, c.mode, ranks, c.seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  validate_training(c);
}

void validate_training(const RunConfig& c) {
  if (c.mode == TrainMode::kAdaptive) {
    if (!c.tau) {
      throw ConfigError("adaptive mode requires tau");
    }
    if (!(*c.tau > 0.0 && *c.tau < 1.0)) {
      throw ConfigError("tau must lie in (0, 1)");
    }
  }
  if (c.mode == TrainMode::kFixed && c.fixed_ranks.empty()) {
    throw ConfigError("fixed mode requires fixed_ranks");
  }
  try {
    validate(c.integrator);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) {
    throw ConfigError("lr_decay must lie in (0, 1]");
  }
  if (c.epochs < 0) {
    throw ConfigError("epochs must be non-negative");
  }
  if (c.batch_size < 1) {
    throw ConfigError("batch_size must be positive");
  }
  if (c.train_size < 1) {
    throw ConfigError("train split must be non-empty");
  }
  if (c.freeze_after < 0 || c.log_every < 0 || c.max_steps_per_epoch < 0) {
    throw ConfigError("freeze_after, log_every and max_steps_per_epoch must be non-negative");
  }
}

json to_json(const RunConfig& c) {
  json policy = {{"mode", to_string(c.mode)}};
  if (c.tau) {
    policy["tau"] = *c.tau;
  }
  if (!c.fixed_ranks.empty()) {
    policy["fixed_ranks"] = c.fixed_ranks;
  }
  policy["freeze_after"] = c.freeze_after;
  json integrator;
  if (const auto* adam = std::get_if<Adam>(&c.integrator)) {
    integrator = {{"kind", "adam"}, {"lr", adam->lr}, {"beta1", adam->beta1}, {"beta2", adam->beta2},
                  {"eps", adam->eps}};
  } else {
    integrator = {{"kind", "euler"}, {"lr", learning_rate(c.integrator)}};
  }
  integrator["lr_decay"] = c.lr_decay;
  return {{"architecture", to_json(c.architecture)},
          {"policy", policy},
          {"integrator", integrator},
          {"training",
           {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"max_steps_per_epoch", c.max_steps_per_epoch},
            {"log_every", c.log_every}}},
          {"data",
           {{"dir", c.data_dir.string()}, {"train", c.train_size}, {"val", c.val_size}, {"test", c.test_size}}},
          {"output", {{"dir", c.out_dir.string()}}}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("architecture")) {
      c.architecture = spec_from_json(j.at("architecture"));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("architecture: ") + e.what());
  }
  const json empty = json::object();
  const json& policy = j.contains("policy") ? j.at("policy") : empty;
  const auto mode = get_or<std::string>(policy, "mode", "adaptive");
  if (mode == "adaptive") {
    c.mode = TrainMode::kAdaptive;
  } else if (mode == "fixed") {
    c.mode = TrainMode::kFixed;
  } else if (mode == "dense") {
    c.mode = TrainMode::kDense;
  } else {
    throw ConfigError("unknown policy mode '" + mode + "'");
  }
  if (policy.contains("tau")) {
    c.tau = get_or(policy, "tau", 0.0);
  }
  c.fixed_ranks = get_or(policy, "fixed_ranks", std::vector<int>{});
  c.freeze_after = get_or(policy, "freeze_after", 0);

  const json& integ = j.contains("integrator") ? j.at("integrator") : empty;
  const auto kind = get_or<std::string>(integ, "kind", "adam");
  if (kind == "adam") {
    Adam a;
    a.lr = get_or(integ, "lr", a.lr);
    a.beta1 = get_or(integ, "beta1", a.beta1);
    a.beta2 = get_or(integ, "beta2", a.beta2);
    a.eps = get_or(integ, "eps", a.eps);
    c.integrator = a;
  } else if (kind == "euler" || kind == "sgd") {
    c.integrator = Euler{get_or(integ, "lr", Euler{}.lr)};
  } else {
    throw ConfigError("unknown integrator '" + kind + "' (euler, adam)");
  }
  c.lr_decay = get_or(integ, "lr_decay", 1.0);

  const json& training = j.contains("training") ? j.at("training") : empty;
  c.epochs = get_or(training, "epochs", c.epochs);
  c.batch_size = get_or(training, "batch_size", c.batch_size);
  c.seed = get_or(training, "seed", c.seed);
  c.max_steps_per_epoch = get_or(training, "max_steps_per_epoch", 0);
  c.log_every = get_or(training, "log_every", 0);

  const json& data = j.contains("data") ? j.at("data") : empty;
  c.data_dir = get_or<std::string>(data, "dir", "");
  c.train_size = get_or(data, "train", c.train_size);
  c.val_size = get_or(data, "val", c.val_size);
  c.test_size = get_or(data, "test", c.test_size);

  const json& output = j.contains("output") ? j.at("output") : empty;
  c.out_dir = get_or<std::string>(output, "dir", c.out_dir.string());
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  try {
    return config_from_json(json::parse(in, nullptr, true, true));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write config " + path.string());
  }
  out << to_json(config).dump(2) << '\n';
}

}  // namespace dlrt
