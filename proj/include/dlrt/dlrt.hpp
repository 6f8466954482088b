#pragma once
//
// Dynamical low-rank training step (rank-adaptive KLS integrator) and the
// factor gradients it consumes.
//
// One step on every low-rank layer:
//   K = U S and L = V S^T are advanced by one integrator step along their
//   taped gradients, new bases are taken from QR of K (and L), optionally
//   augmented by the old bases; the old core is projected into the new
//   bases, advanced along its own gradient, and in adaptive mode compressed
//   by SVD truncation. Three taped passes serve all layers: one each for K,
//   L and S.
//

#include "dlrt/factors.hpp"
#include "dlrt/network.hpp"
#include "dlrt/optim.hpp"

#include <limits>
#include <vector>

namespace dlrt {

/// dL/dK for every low-rank layer (dense layers: dL/dW) at the current
/// parameters; equals (dL/dW) V.
[[nodiscard]] Gradients k_gradients(const Network& net, const Batch& batch);
/// dL/dL for every low-rank layer; equals (dL/dW)^T U.
[[nodiscard]] Gradients l_gradients(const Network& net, const Batch& batch);
/// dL/dS for every low-rank layer; equals U^T (dL/dW) V.
[[nodiscard]] Gradients s_gradients(const Network& net, const Batch& batch);

struct StepOptions {
  /// Measure |U_new S_init V_new^T - U S V^T|_F and the truncation error
  /// per layer. Forms full matrices, so only for tests and diagnostics.
  bool audit = false;
};

struct LayerStepReport {
  int layer = 0;
  int rank_before = 0;
  int rank_after = 0;
  double threshold = 0.0;
  double augmentation_residual = std::numeric_limits<double>::quiet_NaN();
  double truncation_error = std::numeric_limits<double>::quiet_NaN();
};

struct StepReport {
  double loss = 0.0;      // at the parameters before the step
  double accuracy = 0.0;  // same
  std::vector<LayerStepReport> layers;
};

/// One DLRT iteration on `batch`. Adaptive policies augment the bases and
/// truncate; fixed policies keep every layer's rank. Dense layers take a
/// plain integrator step on their full gradient.
StepReport dlrt_step(Network& net, const Batch& batch, const TruncationPolicy& policy, const IntegratorKind& kind,
                     OptimizerStates& states, const StepOptions& options = {});

/// Plain full-weight step W <- integrate(W, dL/dW) on a network without
/// low-rank layers.
StepReport dense_step(Network& net, const Batch& batch, const IntegratorKind& kind, OptimizerStates& states);

struct ParameterCounts {
  long long eval = 0;   // weights needed for inference
  long long train = 0;  // weights touched by an augmented step
  long long full = 0;   // dense twin of the same architecture

  [[nodiscard]] double eval_compression() const { return 1.0 - static_cast<double>(eval) / static_cast<double>(full); }
  [[nodiscard]] double train_compression() const {
    return 1.0 - static_cast<double>(train) / static_cast<double>(full);
  }
};

/// Weight-only counts (biases excluded). A dense layer contributes
/// n_out n_in to every count; a rank-r layer r (n_in + n_out) to eval and
/// 2r (n_in + n_out) + 4r^2 to train. Convolutions use n_out = F and
/// n_in = C J K.
[[nodiscard]] ParameterCounts parameter_counts(const Network& net);

/// Ranks of the low-rank layers, in layer order.
[[nodiscard]] std::vector<int> layer_ranks(const Network& net);

}  // namespace dlrt
