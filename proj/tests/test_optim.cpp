#include "dlrt/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace {

using dlrt::Matrix;

TEST(Euler, IsPlainGradientDescent) {
  Matrix p(2, 2);
  p << 1, 2, 3, 4;
  Matrix g(2, 2);
  g << 0.5, -1, 0, 2;
  dlrt::OptimizerStates states;
  dlrt::one_step_integrate(p, g, dlrt::Euler{0.1}, states, {0, "W"});
  Matrix expected(2, 2);
  expected << 0.95, 2.1, 3.0, 3.8;
  EXPECT_LE((p - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(states.size(), 0u);
}

TEST(Adam, MatchesHandUnrolledScalarRecurrence) {
  const dlrt::Adam adam{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8};
  Matrix p = Matrix::Constant(1, 1, 1.0);
  dlrt::OptimizerStates states;
  const double grads[3] = {0.3, -0.2, 0.5};
  double x = 1.0;
  double m = 0.0;
  double v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    dlrt::one_step_integrate(p, Matrix::Constant(1, 1, g), adam, states, {1, "S"});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    x -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(p(0, 0), x, 1e-15) << "step " << t;
  }
  ASSERT_NE(states.find({1, "S"}), nullptr);
  EXPECT_EQ(states.find({1, "S"})->step, 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p = Matrix::Zero(3, 1);
  Matrix g(3, 1);
  g << 2.0, -7.0, 1e-3;
  dlrt::OptimizerStates states;
  dlrt::one_step_integrate(p, g, dlrt::Adam{.lr = 0.1}, states, {0, "K"});
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(std::abs(p(i, 0)), 0.1, 1e-5);
    EXPECT_LT(p(i, 0) * g(i, 0), 0.0);
  }
}

TEST(Adam, StateResetsWhenShapeChanges) {
  dlrt::OptimizerStates states;
  Matrix p = Matrix::Zero(2, 2);
  dlrt::one_step_integrate(p, Matrix::Ones(2, 2), dlrt::Adam{}, states, {0, "S"});
  dlrt::one_step_integrate(p, Matrix::Ones(2, 2), dlrt::Adam{}, states, {0, "S"});
  EXPECT_EQ(states.find({0, "S"})->step, 2);
  Matrix q = Matrix::Zero(3, 3);
  dlrt::one_step_integrate(q, Matrix::Ones(3, 3), dlrt::Adam{}, states, {0, "S"});
  EXPECT_EQ(states.find({0, "S"})->step, 1);
  EXPECT_EQ(states.find({0, "S"})->m.rows(), 3);
}

TEST(Adam, ExplicitResets) {
  dlrt::OptimizerStates states;
  Matrix p = Matrix::Zero(1, 1);
  for (const char* tag : {"K", "L", "S"}) {
    dlrt::one_step_integrate(p, Matrix::Ones(1, 1), dlrt::Adam{}, states, {0, tag});
    dlrt::one_step_integrate(p, Matrix::Ones(1, 1), dlrt::Adam{}, states, {1, tag});
  }
  EXPECT_EQ(states.size(), 6u);
  dlrt::reset_state(states, {0, "K"});
  EXPECT_EQ(states.find({0, "K"}), nullptr);
  states.reset_layer(1);
  EXPECT_EQ(states.size(), 2u);
  states.clear();
  EXPECT_EQ(states.size(), 0u);
}

TEST(Integrate, RejectsNonFiniteAndMismatchedGradients) {
  dlrt::OptimizerStates states;
  Matrix p = Matrix::Zero(2, 1);
  Matrix g = Matrix::Zero(2, 1);
  g(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(dlrt::one_step_integrate(p, g, dlrt::Adam{}, states, {0, "b"}), dlrt::NumericError);
  EXPECT_EQ(p, Matrix::Zero(2, 1));
  EXPECT_THROW(dlrt::one_step_integrate(p, Matrix::Zero(3, 1), dlrt::Euler{}, states, {0, "b"}),
               std::invalid_argument);
}

TEST(Integrate, ValidatesHyperparameters) {
  EXPECT_THROW(dlrt::validate(dlrt::IntegratorKind{dlrt::Euler{0.0}}), std::invalid_argument);
  EXPECT_THROW(dlrt::validate(dlrt::IntegratorKind{dlrt::Adam{.beta1 = 1.0}}), std::invalid_argument);
  EXPECT_THROW(dlrt::validate(dlrt::IntegratorKind{dlrt::Adam{.eps = 0.0}}), std::invalid_argument);
  dlrt::IntegratorKind k = dlrt::Adam{};
  dlrt::set_learning_rate(k, 0.5);
  EXPECT_EQ(dlrt::learning_rate(k), 0.5);
}

}  // namespace
