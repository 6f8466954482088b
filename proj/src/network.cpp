#include "dlrt/network.hpp"

#include <cmath>
#include <stdexcept>

namespace dlrt {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Activation activation_of(const Layer& layer) {
  return std::visit(overloaded{[](const DenseLayer& l) { return l.activation; },
                               [](const LowRankFactors& l) { return l.activation; },
                               [](const ConvLayer& l) { return l.activation; },
                               [](const LowRankConv& l) { return l.factors.activation; },
                               [](const MaxPool&) { return Activation::kIdentity; }},
                    layer);
}

Matrix activate(const Matrix& pre, Activation act) {
  if (act == Activation::kRelu) {
    return pre.cwiseMax(0.0);
  }
  return pre;
}

// dL/dpre from dL/dpost. ReLU'(0) is taken as 0.
void activation_backward(Matrix& grad, const Matrix& pre, Activation act) {
  if (act == Activation::kRelu) {
    grad = (pre.array() > 0.0).select(grad, 0.0);
  }
}

// Linear part of a low-rank layer on input columns x.
Matrix low_rank_apply(const LowRankFactors& f, const Matrix& x, GradientTarget target, Matrix* proj_out) {
  Matrix proj;
  Matrix out;
  switch (target) {
    case GradientTarget::kK: {
      proj = f.v.transpose() * x;
      const Matrix k = f.u * f.s;
      out.noalias() = k * proj;
      break;
    }
    case GradientTarget::kL: {
      const Matrix lt = f.s * f.v.transpose();
      proj.noalias() = lt * x;
      out.noalias() = f.u * proj;
      break;
    }
    case GradientTarget::kS:
    case GradientTarget::kWeight: {
      proj = f.v.transpose() * x;
      const Matrix core = f.s * proj;
      out.noalias() = f.u * core;
      break;
    }
  }
  if (proj_out != nullptr) {
    *proj_out = std::move(proj);
  }
  return out;
}

// Gradient with respect to the target parameter and, if requested, the
// layer input, given delta = dL/d(linear output) on the same columns as x.
Matrix low_rank_backward(const LowRankFactors& f, const Matrix& x, const Matrix& proj, const Matrix& delta,
                         GradientTarget target, Matrix* dx) {
  Matrix grad;
  switch (target) {
    case GradientTarget::kK: {
      grad.noalias() = delta * proj.transpose();
      if (dx != nullptr) {
        const Matrix k = f.u * f.s;
        const Matrix back = k.transpose() * delta;
        dx->noalias() = f.v * back;
      }
      break;
    }
    case GradientTarget::kL: {
      const Matrix ut_delta = f.u.transpose() * delta;
      grad.noalias() = x * ut_delta.transpose();
      if (dx != nullptr) {
        const Matrix l = f.v * f.s.transpose();
        dx->noalias() = l * ut_delta;
      }
      break;
    }
    case GradientTarget::kS: {
      const Matrix ut_delta = f.u.transpose() * delta;
      grad.noalias() = ut_delta * proj.transpose();
      if (dx != nullptr) {
        const Matrix back = f.s.transpose() * ut_delta;
        dx->noalias() = f.v * back;
      }
      break;
    }
    case GradientTarget::kWeight: {
      grad.noalias() = delta * x.transpose();
      if (dx != nullptr) {
        const Matrix ut_delta = f.u.transpose() * delta;
        const Matrix back = f.s.transpose() * ut_delta;
        dx->noalias() = f.v * back;
      }
      break;
    }
  }
  return grad;
}

void check_columns(const Matrix& x, int width, const std::string& where) {
  if (x.rows() != width) {
    throw std::invalid_argument(where + ": input has " + std::to_string(x.rows()) + " rows, expected " +
                                std::to_string(width));
  }
}

}  // namespace

int input_width(const Layer& layer) {
  return std::visit(overloaded{[](const DenseLayer& l) { return static_cast<int>(l.weight.cols()); },
                               [](const LowRankFactors& l) { return l.n_in(); },
                               [](const ConvLayer& l) { return l.shape.in_features(); },
                               [](const LowRankConv& l) { return l.shape.in_features(); },
                               [](const MaxPool& l) { return l.in_features(); }},
                    layer);
}

int output_width(const Layer& layer) {
  return std::visit(overloaded{[](const DenseLayer& l) { return static_cast<int>(l.weight.rows()); },
                               [](const LowRankFactors& l) { return l.n_out(); },
                               [](const ConvLayer& l) { return l.shape.out_features(); },
                               [](const LowRankConv& l) { return l.shape.out_features(); },
                               [](const MaxPool& l) { return l.out_features(); }},
                    layer);
}

int input_width(const Network& net) {
  if (net.layers.empty()) {
    throw std::invalid_argument("network has no layers");
  }
  return input_width(net.layers.front());
}

int output_width(const Network& net) {
  if (net.layers.empty()) {
    throw std::invalid_argument("network has no layers");
  }
  return output_width(net.layers.back());
}

std::string layer_name(const Layer& layer) {
  return std::visit(overloaded{[](const DenseLayer&) { return std::string("dense"); },
                               [](const LowRankFactors&) { return std::string("lowrank"); },
                               [](const ConvLayer&) { return std::string("conv"); },
                               [](const LowRankConv&) { return std::string("lowrank_conv"); },
                               [](const MaxPool&) { return std::string("maxpool"); }},
                    layer);
}

bool is_low_rank(const Layer& layer) { return factors_of(layer) != nullptr; }

LowRankFactors* factors_of(Layer& layer) {
  if (auto* f = std::get_if<LowRankFactors>(&layer)) {
    return f;
  }
  if (auto* c = std::get_if<LowRankConv>(&layer)) {
    return &c->factors;
  }
  return nullptr;
}

const LowRankFactors* factors_of(const Layer& layer) {
  if (const auto* f = std::get_if<LowRankFactors>(&layer)) {
    return f;
  }
  if (const auto* c = std::get_if<LowRankConv>(&layer)) {
    return &c->factors;
  }
  return nullptr;
}

void validate(const Network& net) {
  if (net.layers.empty()) {
    throw std::invalid_argument("network has no layers");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_name(layer) + ")";
    if (activation_of(layer) == Activation::kSoftmax && i + 1 != net.layers.size()) {
      throw std::invalid_argument(where + ": softmax is only allowed on the final layer");
    }
    if (i > 0 && input_width(layer) != output_width(net.layers[i - 1])) {
      throw std::invalid_argument(where + ": expects " + std::to_string(input_width(layer)) +
                                  " inputs but the previous layer yields " +
                                  std::to_string(output_width(net.layers[i - 1])));
    }
    std::visit(overloaded{[&](const DenseLayer& l) {
                            if (l.bias.size() != l.weight.rows()) {
                              throw std::invalid_argument(where + ": bias length mismatch");
                            }
                          },
                          [&](const LowRankFactors& l) { check_factors(l, 1e-8); },
                          [&](const ConvLayer& l) {
                            l.shape.validate();
                            if (l.weight.rows() != l.shape.filters || l.weight.cols() != l.shape.patch_size() ||
                                l.bias.size() != l.shape.filters) {
                              throw std::invalid_argument(where + ": kernel does not match its shape");
                            }
                          },
                          [&](const LowRankConv& l) {
                            l.shape.validate();
                            check_factors(l.factors, 1e-8);
                            if (l.factors.n_out() != l.shape.filters || l.factors.n_in() != l.shape.patch_size()) {
                              throw std::invalid_argument(where + ": factors do not match the kernel shape");
                            }
                          },
                          [&](const MaxPool& l) { l.validate(); }},
               layer);
  }
}

ForwardResult forward(const Network& net, const Matrix& inputs, bool record, GradientTarget target) {
  check_columns(inputs, input_width(net), "forward");
  ForwardResult result;
  if (record) {
    result.tape.emplace();
    result.tape->target = target;
    result.tape->input = inputs;
    result.tape->layers.resize(net.layers.size());
  }
  Matrix z = inputs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    check_columns(z, input_width(layer), "forward: layer " + std::to_string(i));
    LayerRecord* rec = record ? &result.tape->layers[i] : nullptr;
    Matrix* proj = rec != nullptr ? &rec->proj : nullptr;
    Matrix pre = std::visit(
        overloaded{[&](const DenseLayer& l) -> Matrix {
                     Matrix a = l.weight * z;
                     a.colwise() += l.bias;
                     return a;
                   },
                   [&](const LowRankFactors& l) -> Matrix {
                     Matrix a = low_rank_apply(l, z, target, proj);
                     a.colwise() += l.bias;
                     return a;
                   },
                   [&](const ConvLayer& l) -> Matrix {
                     Matrix patches = unfold(z, l.shape);
                     Matrix a = l.weight * patches;
                     a.colwise() += l.bias;
                     if (rec != nullptr) {
                       rec->patches = std::move(patches);
                     }
                     return locations_to_features(a, l.shape.locations());
                   },
                   [&](const LowRankConv& l) -> Matrix {
                     Matrix patches = unfold(z, l.shape);
                     Matrix a = low_rank_apply(l.factors, patches, target, proj);
                     a.colwise() += l.factors.bias;
                     if (rec != nullptr) {
                       rec->patches = std::move(patches);
                     }
                     return locations_to_features(a, l.shape.locations());
                   },
                   [&](const MaxPool& l) -> Matrix {
                     PoolResult pooled = max_pool_forward(z, l);
                     if (rec != nullptr) {
                       rec->argmax = std::move(pooled.argmax);
                     }
                     return std::move(pooled.out);
                   }},
        layer);
    z = activate(pre, activation_of(layer));
    if (rec != nullptr) {
      rec->pre = std::move(pre);
      rec->post = z;
    }
  }
  result.logits = std::move(z);
  return result;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    const double shift = logits.col(n).maxCoeff();
    p.col(n) = (logits.col(n).array() - shift).exp().matrix();
    p.col(n) /= p.col(n).sum();
  }
  return p;
}

double cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols()) {
    throw std::invalid_argument("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(logits.cols()) + " samples");
  }
  if (logits.cols() == 0) {
    return 0.0;
  }
  double total = 0.0;
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= logits.rows()) {
      throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(logits.rows()) + ")");
    }
    const double shift = logits.col(n).maxCoeff();
    const double lse = shift + std::log((logits.col(n).array() - shift).exp().sum());
    total += lse - logits(label, n);
  }
  return total / static_cast<double>(logits.cols());
}

double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols()) {
    throw std::invalid_argument("accuracy: label count does not match the batch");
  }
  if (logits.cols() == 0) {
    return 0.0;
  }
  Eigen::Index correct = 0;
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    Eigen::Index best = 0;
    logits.col(n).maxCoeff(&best);  // first maximal index
    if (best == labels[static_cast<std::size_t>(n)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(logits.cols());
}

ConvGradient conv_backward(const LowRankConv& layer, const LayerRecord& record, const Matrix& upstream,
                           GradientTarget target, bool input_grad) {
  const ConvShape& shape = layer.shape;
  const Eigen::Index batch = upstream.cols();
  if (upstream.rows() != shape.out_features() || record.patches.rows() != shape.patch_size() ||
      record.patches.cols() != shape.locations() * batch) {
    throw std::invalid_argument("conv_backward: stale tape");
  }
  const Matrix delta = features_to_locations(upstream, shape.filters, shape.locations());
  ConvGradient out;
  out.bias = delta.rowwise().sum();
  Matrix dpatches;
  out.weight = low_rank_backward(layer.factors, record.patches, record.proj, delta, target,
                                 input_grad ? &dpatches : nullptr);
  if (input_grad) {
    out.input = fold(dpatches, shape, batch);
  }
  return out;
}

Gradients backprop(const Network& net, const ForwardTape& tape, std::span<const int> labels) {
  const auto count = net.layers.size();
  if (tape.layers.size() != count || tape.layers.empty()) {
    throw std::invalid_argument("backprop: tape does not belong to this network");
  }
  const Matrix& logits = tape.layers.back().post;
  const Eigen::Index batch = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch) {
    throw std::invalid_argument("backprop: label count does not match the taped batch");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto& rec = tape.layers[i];
    if (rec.pre.rows() != output_width(net.layers[i]) || rec.pre.cols() != batch) {
      throw std::invalid_argument("backprop: stale tape at layer " + std::to_string(i));
    }
    if (const auto* f = factors_of(net.layers[i]); f != nullptr && rec.proj.rows() != f->rank()) {
      throw std::invalid_argument("backprop: stale tape at layer " + std::to_string(i) + " (rank changed)");
    }
  }

  Matrix grad = softmax(logits);
  for (Eigen::Index n = 0; n < batch; ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= grad.rows()) {
      throw std::invalid_argument("backprop: label " + std::to_string(label) + " out of range");
    }
    grad(label, n) -= 1.0;
  }
  grad /= static_cast<double>(batch);

  Gradients out(count);
  for (std::size_t idx = count; idx-- > 0;) {
    const Layer& layer = net.layers[idx];
    const LayerRecord& rec = tape.layers[idx];
    const Matrix& x = idx == 0 ? tape.input : tape.layers[idx - 1].post;
    const bool need_dx = idx > 0;
    Matrix dx;
    // A final softmax is already folded into `grad`; only ReLU acts here.
    activation_backward(grad, rec.pre, activation_of(layer));
    std::visit(overloaded{[&](const DenseLayer& l) {
                            out[idx].weight.noalias() = grad * x.transpose();
                            out[idx].bias = grad.rowwise().sum();
                            if (need_dx) {
                              dx.noalias() = l.weight.transpose() * grad;
                            }
                          },
                          [&](const LowRankFactors& l) {
                            out[idx].weight = low_rank_backward(l, x, rec.proj, grad, tape.target,
                                                                need_dx ? &dx : nullptr);
                            out[idx].bias = grad.rowwise().sum();
                          },
                          [&](const ConvLayer& l) {
                            const Matrix delta = features_to_locations(grad, l.shape.filters, l.shape.locations());
                            out[idx].weight.noalias() = delta * rec.patches.transpose();
                            out[idx].bias = delta.rowwise().sum();
                            if (need_dx) {
                              const Matrix dpatches = l.weight.transpose() * delta;
                              dx = fold(dpatches, l.shape, batch);
                            }
                          },
                          [&](const LowRankConv& l) {
                            ConvGradient g = conv_backward(l, rec, grad, tape.target, need_dx);
                            out[idx].weight = std::move(g.weight);
                            out[idx].bias = std::move(g.bias);
                            dx = std::move(g.input);
                          },
                          [&](const MaxPool& l) {
                            if (need_dx) {
                              dx = max_pool_backward(grad, rec.argmax, l);
                            }
                          }},
               layer);
    grad = std::move(dx);
  }
  return out;
}

Gradients dense_backprop(const Network& net, const ForwardTape& tape, std::span<const int> labels) {
  if (tape.target != GradientTarget::kWeight) {
    throw std::invalid_argument("dense_backprop: tape was recorded for factor gradients");
  }
  return backprop(net, tape, labels);
}

}  // namespace dlrt
