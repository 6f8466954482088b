#pragma once
//
// Convolution as a matrix contraction. Image batches travel through the
// network as (C*H*W) x N matrices, one column per sample, with feature
// index c*H*W + y*W + x. A kernel bank of F filters over C channels with
// a J x K window is the F x (C*J*K) matrix W^resh; the unfolded input is
// a (C*J*K) x (L*N) patch matrix whose column n*L + l feeds output
// location l of sample n, so the convolution is W^resh * patches.
//

#include "dlrt/factors.hpp"

#include <vector>

namespace dlrt {

struct ConvShape {
  int filters = 1;
  int channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int in_h = 1;
  int in_w = 1;

  [[nodiscard]] int out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  [[nodiscard]] int out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  [[nodiscard]] int patch_size() const { return channels * kernel_h * kernel_w; }
  [[nodiscard]] int locations() const { return out_h() * out_w(); }
  [[nodiscard]] int in_features() const { return channels * in_h * in_w; }
  [[nodiscard]] int out_features() const { return filters * locations(); }

  /// Throws unless all sizes are positive and the output grid is exact.
  void validate() const;
};

/// Full-kernel convolution layer.
struct ConvLayer {
  ConvShape shape;
  Matrix weight;  // F x (C*J*K)
  Vector bias;    // F
  Activation activation = Activation::kRelu;
};

/// Convolution whose reshaped kernel is kept as low-rank factors with
/// n_out = F and n_in = C*J*K. Bias and activation live in the factors.
struct LowRankConv {
  ConvShape shape;
  LowRankFactors factors;
};

/// 2x2 max pooling with stride 2.
struct MaxPool {
  int channels = 1;
  int in_h = 2;
  int in_w = 2;

  [[nodiscard]] int out_h() const { return in_h / 2; }
  [[nodiscard]] int out_w() const { return in_w / 2; }
  [[nodiscard]] int in_features() const { return channels * in_h * in_w; }
  [[nodiscard]] int out_features() const { return channels * out_h() * out_w(); }
  void validate() const;
};

/// im2col: (C*U*V) x N images to the (C*J*K) x (L*N) patch matrix.
/// Out-of-range (padding) positions read as zero.
[[nodiscard]] Matrix unfold(const Matrix& images, const ConvShape& shape);

/// Adjoint of unfold: scatter-add patch columns back to image layout.
[[nodiscard]] Matrix fold(const Matrix& patches, const ConvShape& shape, Eigen::Index batch);

/// (F) x (L*N) contraction result to (F*L) x N network layout.
[[nodiscard]] Matrix locations_to_features(const Matrix& per_location, int locations);

/// Inverse of locations_to_features.
[[nodiscard]] Matrix features_to_locations(const Matrix& features, int filters, int locations);

/// Factored convolution U (S (V^T patches)) + bias, reshaped to network
/// layout; the kernel is never assembled. Activation is not applied.
[[nodiscard]] Matrix conv_forward(const Matrix& images, const LowRankConv& layer);

struct PoolResult {
  Matrix out;
  std::vector<Eigen::Index> argmax;  // per output entry, flat index into the input column
};

/// Ties route to the first maximal element in row-major window order.
[[nodiscard]] PoolResult max_pool_forward(const Matrix& images, const MaxPool& pool);
[[nodiscard]] Matrix max_pool_backward(const Matrix& upstream, const std::vector<Eigen::Index>& argmax,
                                       const MaxPool& pool);

}  // namespace dlrt
