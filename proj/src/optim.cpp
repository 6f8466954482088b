#include "dlrt/optim.hpp"

#include <cmath>

namespace dlrt {

void validate(const IntegratorKind& kind) {
  if (const auto* adam = std::get_if<Adam>(&kind)) {
    if (!(adam->lr > 0.0) || adam->beta1 < 0.0 || adam->beta1 >= 1.0 || adam->beta2 < 0.0 || adam->beta2 >= 1.0 ||
        !(adam->eps > 0.0)) {
      throw std::invalid_argument("adam: need lr > 0, 0 <= beta < 1, eps > 0");
    }
  } else if (!(std::get<Euler>(kind).lr > 0.0)) {
    throw std::invalid_argument("euler: learning rate must be positive");
  }
}

double learning_rate(const IntegratorKind& kind) {
  return std::visit([](const auto& k) { return k.lr; }, kind);
}

void set_learning_rate(IntegratorKind& kind, double lr) {
  std::visit([lr](auto& k) { k.lr = lr; }, kind);
}

const AdamState* OptimizerStates::find(const ParamId& id) const {
  const auto it = states_.find(id);
  return it == states_.end() ? nullptr : &it->second;
}

AdamState& OptimizerStates::slot(const ParamId& id, Eigen::Index rows, Eigen::Index cols) {
  AdamState& state = states_[id];
  if (state.m.rows() != rows || state.m.cols() != cols) {
    state.m = Matrix::Zero(rows, cols);
    state.v = Matrix::Zero(rows, cols);
    state.step = 0;
  }
  return state;
}

void OptimizerStates::reset_layer(int layer) {
  for (auto it = states_.begin(); it != states_.end();) {
    it = it->first.layer == layer ? states_.erase(it) : std::next(it);
  }
}

void one_step_integrate(Eigen::Ref<Matrix> param, const Eigen::Ref<const Matrix>& grad, const IntegratorKind& kind,
                        OptimizerStates& states, const ParamId& id) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw std::invalid_argument("one_step_integrate(" + id.str() + "): parameter is " + std::to_string(param.rows()) +
                                "x" + std::to_string(param.cols()) + " but gradient is " +
                                std::to_string(grad.rows()) + "x" + std::to_string(grad.cols()));
  }
  if (!grad.allFinite()) {
    throw NumericError("non-finite gradient for " + id.str());
  }
  if (const auto* euler = std::get_if<Euler>(&kind)) {
    param -= euler->lr * grad;
    return;
  }
  const Adam& adam = std::get<Adam>(kind);
  AdamState& state = states.slot(id, param.rows(), param.cols());
  ++state.step;
  state.m = adam.beta1 * state.m + (1.0 - adam.beta1) * grad;
  state.v = adam.beta2 * state.v + (1.0 - adam.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
  param.array() -= adam.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + adam.eps);
}

}  // namespace dlrt
