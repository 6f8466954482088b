#include "dlrt/dlrt.hpp"
#include "dlrt/model.hpp"

#include <gtest/gtest.h>

namespace {

TEST(Model, MlpPresetsHaveExpectedShapes) {
  for (const auto& [name, width] : {std::pair{"mlp500", 500}, {"mlp784", 784}, {"mlp5120", 5120}}) {
    const auto spec = dlrt::preset(name);
    ASSERT_EQ(spec.layers.size(), 5u) << name;
    EXPECT_EQ(spec.layers.front().n_in, 784);
    EXPECT_EQ(spec.layers.front().n_out, width);
    EXPECT_EQ(spec.layers.back().n_out, 10);
    EXPECT_FALSE(spec.layers.back().low_rank);
    EXPECT_EQ(spec.layers.back().activation, dlrt::Activation::kSoftmax);
    EXPECT_EQ(dlrt::low_rank_layer_count(spec), 4);
  }
  EXPECT_EQ(dlrt::preset("mlp500", 1024).layers[1].n_in, 1024);
  EXPECT_THROW((void)dlrt::preset("resnet"), std::invalid_argument);
  EXPECT_THROW((void)dlrt::preset("lenet5", 8), std::invalid_argument);
}

TEST(Model, DenseFullCountsOfPresets) {
  EXPECT_EQ(dlrt::parameter_counts(dlrt::build_network(dlrt::preset("mlp784"), dlrt::TrainMode::kDense, {}, 0)).full,
            4LL * 784 * 784 + 7840);
}

TEST(Model, AdaptiveStartsAtHalfRankWithinBounds) {
  const auto net = dlrt::build_network(dlrt::preset("mlp500"), dlrt::TrainMode::kAdaptive, {}, 3);
  dlrt::validate(net);
  EXPECT_EQ(dlrt::layer_ranks(net), (std::vector<int>{250, 250, 250, 250}));
  for (const auto& layer : net.layers) {
    if (const auto* f = dlrt::factors_of(layer)) {
      EXPECT_EQ(f->r_max, 500);
      EXPECT_EQ(f->r_min, 2);
    }
  }
}

TEST(Model, FixedRanksBroadcastAndValidate) {
  const auto spec = dlrt::preset("mlp500");
  const std::vector<int> one{20};
  EXPECT_EQ(dlrt::layer_ranks(dlrt::build_network(spec, dlrt::TrainMode::kFixed, one, 1)),
            (std::vector<int>{20, 20, 20, 20}));
  const std::vector<int> wrong_count{20, 20};
  EXPECT_THROW((void)dlrt::build_network(spec, dlrt::TrainMode::kFixed, wrong_count, 1), std::invalid_argument);
}

TEST(Model, SeedDeterminesWeights) {
  const auto spec = dlrt::preset("mlp500", 16);
  const auto a = dlrt::build_network(spec, dlrt::TrainMode::kAdaptive, {}, 5);
  const auto b = dlrt::build_network(spec, dlrt::TrainMode::kAdaptive, {}, 5);
  const auto c = dlrt::build_network(spec, dlrt::TrainMode::kAdaptive, {}, 6);
  EXPECT_EQ(dlrt::factors_of(a.layers[0])->u, dlrt::factors_of(b.layers[0])->u);
  EXPECT_NE(dlrt::factors_of(a.layers[0])->u, dlrt::factors_of(c.layers[0])->u);
}

TEST(Model, LenetLayout) {
  const auto spec = dlrt::lenet5_spec();
  const auto net = dlrt::build_network(spec, dlrt::TrainMode::kAdaptive, {}, 1);
  dlrt::validate(net);
  EXPECT_EQ(dlrt::input_width(net), 784);
  EXPECT_EQ(dlrt::output_width(net.layers[0]), 20 * 24 * 24);
  EXPECT_EQ(dlrt::output_width(net.layers[3]), 800);
  const auto ranks = dlrt::layer_ranks(net);
  ASSERT_EQ(ranks.size(), 4u);
  EXPECT_EQ(ranks.back(), 10);
  EXPECT_EQ(dlrt::factors_of(net.layers.back())->r_min, 10);
  const auto dense = dlrt::build_network(spec, dlrt::TrainMode::kDense, {}, 1);
  EXPECT_TRUE(std::holds_alternative<dlrt::ConvLayer>(dense.layers[0]));
  EXPECT_EQ(dlrt::parameter_counts(dense).full, 430500);
}

}  // namespace
