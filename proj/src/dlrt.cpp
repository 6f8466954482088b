#include "dlrt/dlrt.hpp"

#include <stdexcept>

namespace dlrt {
namespace {

Gradients taped_gradients(const Network& net, const Batch& batch, GradientTarget target) {
  ForwardResult pass = forward(net, batch.inputs, true, target);
  return backprop(net, *pass.tape, batch.labels);
}

// Full-weight parameter of a dense or conv layer, nullptr otherwise.
Matrix* dense_weight(Layer& layer) {
  if (auto* d = std::get_if<DenseLayer>(&layer)) {
    return &d->weight;
  }
  if (auto* c = std::get_if<ConvLayer>(&layer)) {
    return &c->weight;
  }
  return nullptr;
}

Vector* dense_bias(Layer& layer) {
  if (auto* d = std::get_if<DenseLayer>(&layer)) {
    return &d->bias;
  }
  if (auto* c = std::get_if<ConvLayer>(&layer)) {
    return &c->bias;
  }
  return nullptr;
}

void integrate_dense_layers(Network& net, const Gradients& grads, const IntegratorKind& kind,
                            OptimizerStates& states) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Matrix* weight = dense_weight(net.layers[i]);
    if (weight == nullptr) {
      continue;
    }
    const int idx = static_cast<int>(i);
    one_step_integrate(*weight, grads[i].weight, kind, states, {idx, "W"});
    one_step_integrate(*dense_bias(net.layers[i]), grads[i].bias, kind, states, {idx, "b"});
  }
}

}  // namespace

Gradients k_gradients(const Network& net, const Batch& batch) {
  return taped_gradients(net, batch, GradientTarget::kK);
}

Gradients l_gradients(const Network& net, const Batch& batch) {
  return taped_gradients(net, batch, GradientTarget::kL);
}

Gradients s_gradients(const Network& net, const Batch& batch) {
  return taped_gradients(net, batch, GradientTarget::kS);
}

StepReport dlrt_step(Network& net, const Batch& batch, const TruncationPolicy& policy, const IntegratorKind& kind,
                     OptimizerStates& states, const StepOptions& options) {
  validate(kind);
  if (const auto* adaptive = std::get_if<AdaptiveTruncation>(&policy);
      adaptive != nullptr && !(adaptive->tau > 0.0 && adaptive->tau < 1.0)) {
    throw std::invalid_argument("dlrt_step: tau must lie in (0, 1)");
  }
  const bool adaptive = is_adaptive(policy);
  StepReport report;

  // K and L passes both see the parameters as they are now.
  Gradients grad_k;
  {
    ForwardResult pass = forward(net, batch.inputs, true, GradientTarget::kK);
    report.loss = cross_entropy_loss(pass.logits, batch.labels);
    report.accuracy = accuracy(pass.logits, batch.labels);
    grad_k = backprop(net, *pass.tape, batch.labels);
  }
  const Gradients grad_l = l_gradients(net, batch);

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LowRankFactors* f = factors_of(net.layers[i]);
    if (f == nullptr) {
      continue;
    }
    const int idx = static_cast<int>(i);
    LayerStepReport layer_report;
    layer_report.layer = idx;
    layer_report.rank_before = f->rank();

    Matrix k = f->u * f->s;
    one_step_integrate(k, grad_k[i].weight, kind, states, {idx, "K"});
    Matrix l = f->v * f->s.transpose();
    one_step_integrate(l, grad_l[i].weight, kind, states, {idx, "L"});

    BasisUpdate basis = basis_update(*f, k, l, adaptive);
    Matrix core = s_init(f->s, basis.m, basis.n);
    if (options.audit) {
      layer_report.augmentation_residual =
          (basis.u * core * basis.v.transpose() - effective_weight(*f)).norm();
    }
    f->u = std::move(basis.u);
    f->v = std::move(basis.v);
    f->s = std::move(core);
    report.layers.push_back(layer_report);
  }

  // S pass at the new bases; it also supplies the bias gradients.
  const Gradients grad_s = s_gradients(net, batch);
  std::size_t next_report = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LowRankFactors* f = factors_of(net.layers[i]);
    if (f == nullptr) {
      continue;
    }
    const int idx = static_cast<int>(i);
    LayerStepReport& layer_report = report.layers[next_report++];
    one_step_integrate(f->s, grad_s[i].weight, kind, states, {idx, "S"});
    if (adaptive) {
      Truncated cut = truncate(f->s, f->u, f->v, policy, f->r_min, f->r_max);
      if (options.audit) {
        layer_report.truncation_error =
            (f->u * f->s * f->v.transpose() - cut.u * cut.s * cut.v.transpose()).norm();
      }
      layer_report.threshold = cut.threshold;
      f->u = std::move(cut.u);
      f->s = std::move(cut.s);
      f->v = std::move(cut.v);
    }
    one_step_integrate(f->bias, grad_s[i].bias, kind, states, {idx, "b"});
    layer_report.rank_after = f->rank();
    if (layer_report.rank_after != layer_report.rank_before) {
      states.reset({idx, "K"});
      states.reset({idx, "L"});
      states.reset({idx, "S"});
    }
  }

  integrate_dense_layers(net, grad_k, kind, states);
  return report;
}

StepReport dense_step(Network& net, const Batch& batch, const IntegratorKind& kind, OptimizerStates& states) {
  validate(kind);
  for (const Layer& layer : net.layers) {
    if (is_low_rank(layer)) {
      throw std::invalid_argument("dense_step: network contains low-rank layers");
    }
  }
  ForwardResult pass = forward(net, batch.inputs, true, GradientTarget::kWeight);
  StepReport report;
  report.loss = cross_entropy_loss(pass.logits, batch.labels);
  report.accuracy = accuracy(pass.logits, batch.labels);
  const Gradients grads = dense_backprop(net, *pass.tape, batch.labels);
  pass.tape.reset();
  integrate_dense_layers(net, grads, kind, states);
  return report;
}

ParameterCounts parameter_counts(const Network& net) {
  ParameterCounts counts;
  for (const Layer& layer : net.layers) {
    long long n_out = 0;
    long long n_in = 0;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      n_out = d->weight.rows();
      n_in = d->weight.cols();
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      n_out = c->shape.filters;
      n_in = c->shape.patch_size();
    } else if (const LowRankFactors* f = factors_of(layer)) {
      const long long r = f->rank();
      const long long width = f->n_in() + f->n_out();
      counts.eval += r * width;
      counts.train += 2 * r * width + 4 * r * r;
      counts.full += static_cast<long long>(f->n_in()) * f->n_out();
      continue;
    } else {
      continue;
    }
    counts.eval += n_out * n_in;
    counts.train += n_out * n_in;
    counts.full += n_out * n_in;
  }
  return counts;
}

std::vector<int> layer_ranks(const Network& net) {
  std::vector<int> ranks;
  for (const Layer& layer : net.layers) {
    if (const LowRankFactors* f = factors_of(layer)) {
      ranks.push_back(f->rank());
    }
  }
  return ranks;
}

}  // namespace dlrt
