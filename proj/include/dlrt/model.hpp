#pragma once
//
// Architecture descriptions and network construction.
//

#include "dlrt/network.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dlrt {

enum class LayerKind { kDense, kConv, kPool };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  int n_in = 0;  // dense
  int n_out = 0;
  ConvShape conv;  // conv
  MaxPool pool;    // pool
  Activation activation = Activation::kRelu;
  bool low_rank = false;
  int initial_rank = 0;  // 0: ceil(min(n_in, n_out) / 2)
  int min_rank = 0;      // 0: min(2, r_max)
};

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;
};

enum class TrainMode { kAdaptive, kFixed, kDense };

/// Fully connected classifier: `hidden` ReLU layers of `width` followed by a
/// dense softmax head. Hidden layers are low-rank.
[[nodiscard]] NetworkSpec mlp_spec(int inputs, int width, int hidden, int classes);

/// LeNet5 on 28x28 single-channel input: conv 20@5x5, pool, conv 50@5x5,
/// pool, 800 -> 500 ReLU, 500 -> 10 softmax. All four weight layers are
/// low-rank; the head is pinned to rank 10.
[[nodiscard]] NetworkSpec lenet5_spec();

/// mlp500, mlp784, mlp5120 or lenet5. `width` > 0 overrides the hidden
/// width of the mlp presets.
[[nodiscard]] NetworkSpec preset(const std::string& name, int width = 0);

/// Initialise a network. kDense ignores the low-rank flags; kFixed takes
/// one rank per low-rank layer, or a single rank for all of them (clamped
/// into each layer's bounds); kAdaptive starts from the spec's initial
/// ranks.
[[nodiscard]] Network build_network(const NetworkSpec& spec, TrainMode mode, std::span<const int> fixed_ranks,
                                    std::uint64_t seed);

/// Number of low-rank layers the spec would produce outside dense mode.
[[nodiscard]] int low_rank_layer_count(const NetworkSpec& spec);

}  // namespace dlrt
