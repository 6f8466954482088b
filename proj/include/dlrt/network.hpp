#pragma once
//
// Layer stack, forward pass, fused softmax cross-entropy and reverse-mode
// gradients. Activations are (features x batch) matrices.
//
// A low-rank layer can be evaluated in one of several parameterisations;
// the backward pass then returns the gradient with respect to that
// parameter (see GradientTarget). All other layers are unaffected.
//

#include "dlrt/conv.hpp"
#include "dlrt/factors.hpp"

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dlrt {

struct DenseLayer {
  Matrix weight;  // n_out x n_in
  Vector bias;
  Activation activation = Activation::kRelu;
};

using Layer = std::variant<DenseLayer, LowRankFactors, ConvLayer, LowRankConv, MaxPool>;

struct Network {
  std::vector<Layer> layers;
};

struct Batch {
  Matrix inputs;            // n_0 x B
  std::vector<int> labels;  // B entries in [0, n_M)
};

/// Which parameter the backward pass differentiates for low-rank layers.
///   kWeight: the full weight W = U S V^T (dense reference)
///   kK:      K = U S with V frozen, forward as K (V^T x)
///   kL:      L = V S^T with U frozen, forward as U (L^T x)
///   kS:      S with U and V frozen, forward as U (S (V^T x))
enum class GradientTarget { kWeight, kK, kL, kS };

[[nodiscard]] int input_width(const Layer& layer);
[[nodiscard]] int output_width(const Layer& layer);
[[nodiscard]] int input_width(const Network& net);
[[nodiscard]] int output_width(const Network& net);
[[nodiscard]] std::string layer_name(const Layer& layer);
[[nodiscard]] bool is_low_rank(const Layer& layer);

/// Factors of a low-rank layer (dense or conv), nullptr otherwise.
[[nodiscard]] LowRankFactors* factors_of(Layer& layer);
[[nodiscard]] const LowRankFactors* factors_of(const Layer& layer);

/// Conformable widths, softmax only on the final layer, parameter shapes.
void validate(const Network& net);

struct LayerRecord {
  Matrix patches;  // conv layers only: unfolded input
  Matrix proj;     // low-rank layers: V^T x, or L^T x under kL
  Matrix pre;      // pre-activation, network layout
  Matrix post;     // activation output
  std::vector<Eigen::Index> argmax;  // pooling
};

struct ForwardTape {
  GradientTarget target = GradientTarget::kWeight;
  Matrix input;
  std::vector<LayerRecord> layers;
};

struct ForwardResult {
  Matrix logits;
  std::optional<ForwardTape> tape;
};

/// Network output for a batch. A softmax final layer yields pre-softmax
/// scores; the softmax is fused into the loss.
[[nodiscard]] ForwardResult forward(const Network& net, const Matrix& inputs, bool record,
                                    GradientTarget target = GradientTarget::kWeight);

[[nodiscard]] Matrix softmax(const Matrix& logits);

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
[[nodiscard]] double cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

/// Fraction of columns whose argmax (lowest index on ties) equals the label.
[[nodiscard]] double accuracy(const Matrix& logits, std::span<const int> labels);

/// Per-layer gradient. `weight` holds dW, dK, dL or dS depending on the
/// tape's target and the layer kind (dense layers always give dW). Both
/// members are empty for pooling layers.
struct LayerGradient {
  Matrix weight;
  Vector bias;
};

using Gradients = std::vector<LayerGradient>;

/// Reverse pass for the mean cross-entropy loss over the taped batch.
[[nodiscard]] Gradients backprop(const Network& net, const ForwardTape& tape, std::span<const int> labels);

/// Full-weight gradients for every layer (low-rank layers give dW of the
/// effective weight). Requires a tape recorded with GradientTarget::kWeight.
[[nodiscard]] Gradients dense_backprop(const Network& net, const ForwardTape& tape, std::span<const int> labels);

struct ConvGradient {
  Matrix weight;  // dW^resh, dK, dL or dS
  Vector bias;
  Matrix input;   // gradient with respect to the layer input images
};

/// Backward through a low-rank convolution given the gradient with
/// respect to its pre-activation output (network layout).
[[nodiscard]] ConvGradient conv_backward(const LowRankConv& layer, const LayerRecord& record, const Matrix& upstream,
                                         GradientTarget target, bool input_grad = true);

}  // namespace dlrt
