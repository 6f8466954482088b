#pragma once
//
// One-step integrators for the gradient flow of a parameter tensor.
// Explicit Euler is plain SGD; Adam keeps per-tensor moment state.
//

#include "dlrt/linalg.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace dlrt {

struct Euler {
  double lr = 0.2;
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using IntegratorKind = std::variant<Euler, Adam>;

/// Throws std::invalid_argument for lr <= 0, betas outside [0,1) or eps <= 0.
void validate(const IntegratorKind& kind);

[[nodiscard]] double learning_rate(const IntegratorKind& kind);
void set_learning_rate(IntegratorKind& kind, double lr);

/// Layer index plus a factor tag ("K", "L", "S", "W", "b").
struct ParamId {
  int layer = 0;
  std::string tag;

  auto operator<=>(const ParamId&) const = default;
  [[nodiscard]] std::string str() const { return "layer " + std::to_string(layer) + "/" + tag; }
};

struct AdamState {
  Matrix m;
  Matrix v;
  long step = 0;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Moment state keyed by parameter. Entries whose shape no longer
/// matches their parameter are dropped on the next update.
class OptimizerStates {
 public:
  [[nodiscard]] const AdamState* find(const ParamId& id) const;
  AdamState& slot(const ParamId& id, Eigen::Index rows, Eigen::Index cols);
  void reset(const ParamId& id) { states_.erase(id); }
  void reset_layer(int layer);
  void clear() { states_.clear(); }
  [[nodiscard]] std::size_t size() const { return states_.size(); }

 private:
  std::map<ParamId, AdamState> states_;
};

/// Advance `param` by one step of `kind` along -grad. Vectors bind as
/// single-column matrices.
void one_step_integrate(Eigen::Ref<Matrix> param, const Eigen::Ref<const Matrix>& grad, const IntegratorKind& kind,
                        OptimizerStates& states, const ParamId& id);

inline void reset_state(OptimizerStates& states, const ParamId& id) { states.reset(id); }

}  // namespace dlrt
