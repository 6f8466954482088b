#include "dlrt/model.hpp"

#include "dlrt/random.hpp"

#include <cmath>
#include <stdexcept>

namespace dlrt {
namespace {

int default_initial_rank(int r_max) { return (r_max + 1) / 2; }

}  // namespace

NetworkSpec mlp_spec(int inputs, int width, int hidden, int classes) {
  if (inputs < 1 || width < 1 || hidden < 1 || classes < 2) {
    throw std::invalid_argument("mlp_spec: sizes must be positive and classes >= 2");
  }
  NetworkSpec spec;
  spec.name = "mlp" + std::to_string(width);
  int n_in = inputs;
  for (int i = 0; i < hidden; ++i) {
    LayerSpec layer;
    layer.n_in = n_in;
    layer.n_out = width;
    layer.low_rank = true;
    spec.layers.push_back(layer);
    n_in = width;
  }
  LayerSpec head;
  head.n_in = n_in;
  head.n_out = classes;
  head.activation = Activation::kSoftmax;
  spec.layers.push_back(head);
  return spec;
}

NetworkSpec lenet5_spec() {
  NetworkSpec spec;
  spec.name = "lenet5";

  LayerSpec conv1;
  conv1.kind = LayerKind::kConv;
  conv1.conv = ConvShape{.filters = 20, .channels = 1, .kernel_h = 5, .kernel_w = 5, .in_h = 28, .in_w = 28};
  conv1.low_rank = true;
  spec.layers.push_back(conv1);

  LayerSpec pool1;
  pool1.kind = LayerKind::kPool;
  pool1.pool = MaxPool{.channels = 20, .in_h = 24, .in_w = 24};
  pool1.activation = Activation::kIdentity;
  spec.layers.push_back(pool1);

  LayerSpec conv2;
  conv2.kind = LayerKind::kConv;
  conv2.conv = ConvShape{.filters = 50, .channels = 20, .kernel_h = 5, .kernel_w = 5, .in_h = 12, .in_w = 12};
  conv2.low_rank = true;
  spec.layers.push_back(conv2);

  LayerSpec pool2;
  pool2.kind = LayerKind::kPool;
  pool2.pool = MaxPool{.channels = 50, .in_h = 8, .in_w = 8};
  pool2.activation = Activation::kIdentity;
  spec.layers.push_back(pool2);

  LayerSpec fc;
  fc.n_in = 800;
  fc.n_out = 500;
  fc.low_rank = true;
  spec.layers.push_back(fc);

  LayerSpec head;
  head.n_in = 500;
  head.n_out = 10;
  head.activation = Activation::kSoftmax;
  head.low_rank = true;
  head.initial_rank = 10;
  head.min_rank = 10;
  spec.layers.push_back(head);
  return spec;
}

NetworkSpec preset(const std::string& name, int width) {
  if (name == "lenet5") {
    if (width > 0) {
      throw std::invalid_argument("preset: lenet5 has no adjustable width");
    }
    return lenet5_spec();
  }
  int default_width = 0;
  if (name == "mlp500") {
    default_width = 500;
  } else if (name == "mlp784") {
    default_width = 784;
  } else if (name == "mlp5120") {
    default_width = 5120;
  } else {
    throw std::invalid_argument("unknown architecture preset '" + name + "' (mlp500, mlp784, mlp5120, lenet5)");
  }
  return mlp_spec(784, width > 0 ? width : default_width, 4, 10);
}

int low_rank_layer_count(const NetworkSpec& spec) {
  int count = 0;
  for (const auto& layer : spec.layers) {
    count += (layer.low_rank && layer.kind != LayerKind::kPool) ? 1 : 0;
  }
  return count;
}

Network build_network(const NetworkSpec& spec, TrainMode mode, std::span<const int> fixed_ranks,
                      std::uint64_t seed) {
  const int low_rank_count = low_rank_layer_count(spec);
  if (mode == TrainMode::kFixed && fixed_ranks.size() != 1 &&
      static_cast<int>(fixed_ranks.size()) != low_rank_count) {
    throw std::invalid_argument("build_network: " + std::to_string(fixed_ranks.size()) + " fixed ranks for " +
                                std::to_string(low_rank_count) + " low-rank layers");
  }
  Network net;
  int low_rank_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const std::uint64_t layer_seed = derive_seed(seed, i);
    if (ls.kind == LayerKind::kPool) {
      net.layers.emplace_back(ls.pool);
      continue;
    }
    const bool conv = ls.kind == LayerKind::kConv;
    const int n_out = conv ? ls.conv.filters : ls.n_out;
    const int n_in = conv ? ls.conv.patch_size() : ls.n_in;
    if (conv) {
      ls.conv.validate();
    }
    if (!ls.low_rank || mode == TrainMode::kDense) {
      SplitMix64 rng(layer_seed);
      Matrix w = gaussian_matrix(n_out, n_in, rng) * std::sqrt(2.0 / n_in);
      if (conv) {
        net.layers.emplace_back(ConvLayer{ls.conv, std::move(w), Vector::Zero(n_out), ls.activation});
      } else {
        net.layers.emplace_back(DenseLayer{std::move(w), Vector::Zero(n_out), ls.activation});
      }
      continue;
    }
    const int r_max = std::min(n_in, n_out);
    const int r_min = ls.min_rank > 0 ? std::min(ls.min_rank, r_max) : std::min(2, r_max);
    int rank = ls.initial_rank > 0 ? ls.initial_rank : default_initial_rank(r_max);
    if (mode == TrainMode::kFixed) {
      rank = fixed_ranks.size() == 1 ? fixed_ranks[0] : fixed_ranks[static_cast<std::size_t>(low_rank_index)];
      if (fixed_ranks.size() == 1) {
        rank = std::clamp(rank, r_min, r_max);
      } else if (rank < 1 || rank > r_max) {
        throw std::invalid_argument("build_network: rank " + std::to_string(rank) + " for layer " +
                                    std::to_string(i) + " outside [1, " + std::to_string(r_max) + "]");
      }
    }
    rank = std::clamp(rank, 1, r_max);
    LowRankFactors f = random_factors(n_out, n_in, rank, layer_seed, ls.activation);
    f.r_min = std::min(r_min, rank);
    if (conv) {
      net.layers.emplace_back(LowRankConv{ls.conv, std::move(f)});
    } else {
      net.layers.emplace_back(std::move(f));
    }
    ++low_rank_index;
  }
  validate(net);
  return net;
}

}  // namespace dlrt
