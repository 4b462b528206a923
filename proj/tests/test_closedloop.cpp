#include "memlqr/closedloop.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracle_helpers.hpp"

namespace memlqr {
namespace {

ProblemInstance scalar_lqr(int N, double q = 1.0) {
  ProblemInstance p;
  p.n = 1;
  p.m = 1;
  p.A = Matrix::Zero(1, 1);
  p.B = Matrix::Identity(1, 1);
  p.Q = q * Matrix::Identity(1, 1);
  p.T = 1.0;
  p.N = N;
  p.init.tau_index = 0;
  p.init.xi0 = Vector::Ones(1);
  validate(p);
  return p;
}

ProblemInstance scalar_memory(int N, double q = 1.0) {
  ProblemInstance p = scalar_lqr(N, q);
  p.kernel.type = KernelType::Constant;
  p.kernel.c = -1.0;
  validate(p);
  return p;
}

double state_gap(const AugmentedState& a, const AugmentedState& b) {
  double g = max_abs(a.xi0 - b.xi0);
  EXPECT_EQ(a.history.size(), b.history.size());
  for (size_t k = 0; k < a.history.size(); ++k)
    g = std::max(g, max_abs(a.history[k] - b.history[k]));
  return g;
}

GTEST_TEST(ClosedLoopTest, ZeroCostGivesUncontrolledPath) {
  const ProblemInstance p = scalar_memory(60, 0.0);
  const FeedbackLaw law = feedback_gains(integrate_backward(p, Scheme::Heun));
  const ClosedLoopTrajectory cl = simulate_feedback(p, law);

  Trajectory zero_u;
  zero_u.first_node = 0;
  zero_u.x.assign(p.N + 1, Vector::Zero(1));
  const Trajectory free_w = simulate_direct(p, zero_u);

  EXPECT_EQ(cl.J_cl, 0.0);
  for (int i = 0; i <= p.N; ++i) {
    EXPECT_EQ(max_abs(cl.u.at(i)), 0.0);
    EXPECT_EQ(max_abs(cl.w.at(i) - free_w.at(i)), 0.0);
  }
}

GTEST_TEST(ClosedLoopTest, MemorylessControlMatchesOpenLoop) {
  const ProblemInstance p = scalar_lqr(200);
  const OpenLoopSolution ol = solve_open_loop(p, compute_tables(p));
  const FeedbackLaw law = feedback_gains(integrate_backward(p, Scheme::Heun));
  const ClosedLoopTrajectory cl = simulate_feedback(p, law);

  double gap = 0.0;
  for (int i = 0; i <= p.N; ++i)
    gap = std::max(gap, max_abs(cl.u.at(i) - ol.u.at(i)));
  EXPECT_LE(gap, 5e-3);
  EXPECT_GE(cl.J_cl, 0.0);
}

GTEST_TEST(ClosedLoopTest, ScalarMemoryCostGapShrinksAtSchemeOrder) {
  // The open-loop optimum is the lower-bound oracle; the feedback loop pays
  // at most a scheme-order premium, and the premium decays like h^2.
  auto gaps_at = [](int N) {
    const ProblemInstance p = scalar_memory(N);
    const OpenLoopSolution ol = solve_open_loop(p, compute_tables(p));
    const FeedbackLaw law =
        feedback_gains(integrate_backward(p, Scheme::Heun));
    const ClosedLoopTrajectory cl = simulate_feedback(p, law);

    double u_inf = 0.0, u_gap = 0.0;
    for (int i = 0; i <= p.N; ++i) {
      u_inf = std::max(u_inf, max_abs(ol.u.at(i)));
      u_gap = std::max(u_gap, max_abs(cl.u.at(i) - ol.u.at(i)));
    }
    struct Out {
      double u_inf, u_gap, j_ol, j_cl;
    };
    return Out{u_inf, u_gap, ol.J, cl.J_cl};
  };

  const auto g50 = gaps_at(50);
  const auto g100 = gaps_at(100);
  const auto g200 = gaps_at(200);

  EXPECT_LE(g200.u_gap, 5e-3 * (1.0 + g200.u_inf));
  EXPECT_LE(g200.j_cl - g200.j_ol, 1e-3 * (1.0 + g200.j_ol));
  EXPECT_GE(g200.j_cl, g200.j_ol - 1e-3 * (1.0 + g200.j_ol));

  const double order_u =
      oracle::observed_order(g100.u_gap, g200.u_gap, 2.0);
  EXPECT_GE(order_u, 1.6);
  EXPECT_LE(order_u, 2.4);

  const double gap50 = std::abs(g50.j_cl - g50.j_ol);
  const double gap200 = std::abs(g200.j_cl - g200.j_ol);
  // Two halvings: the cost gap itself is a difference of second-order
  // quantities, so judge the decay over the wider span.
  const double order_j = oracle::observed_order(gap50, gap200, 4.0);
  EXPECT_GE(order_j, 1.4);
  EXPECT_LE(order_j, 2.6);
}

GTEST_TEST(ClosedLoopTest, EvolutionIdentityAtEqualNodes) {
  const ProblemInstance p = scalar_memory(40);
  const FeedbackLaw law = feedback_gains(integrate_backward(p, Scheme::Heun));
  const AugmentedState X0 = augmented_from_instance(p);
  const AugmentedState mid = evolution_apply(p, law, 0, 15, X0);

  for (InnerStepper kind : {InnerStepper::Euler, InnerStepper::Trapezoid}) {
    const AugmentedState same = evolution_apply(p, law, 15, 15, mid, kind);
    EXPECT_EQ(state_gap(same, mid), 0.0);
  }
}

GTEST_TEST(ClosedLoopTest, EvolutionComposition) {
  // Stopping at a middle node and restarting replays the same arithmetic:
  // exact for the explicit stepper, and within 1e-12 for the
  // predictor-corrector.
  auto check = [](const ProblemInstance& p) {
    const FeedbackLaw law =
        feedback_gains(integrate_backward(p, Scheme::Heun));
    const AugmentedState X0 = augmented_from_instance(p);
    const int k = p.N / 3, i = (4 * p.N) / 5;

    {
      const AugmentedState direct =
          evolution_apply(p, law, 0, i, X0, InnerStepper::Euler);
      const AugmentedState mid =
          evolution_apply(p, law, 0, k, X0, InnerStepper::Euler);
      const AugmentedState composed =
          evolution_apply(p, law, k, i, mid, InnerStepper::Euler);
      EXPECT_EQ(state_gap(composed, direct), 0.0);
    }
    {
      const AugmentedState direct =
          evolution_apply(p, law, 0, i, X0, InnerStepper::Trapezoid);
      const AugmentedState mid =
          evolution_apply(p, law, 0, k, X0, InnerStepper::Trapezoid);
      const AugmentedState composed =
          evolution_apply(p, law, k, i, mid, InnerStepper::Trapezoid);
      EXPECT_LE(state_gap(composed, direct), 1e-12);
    }
  };
  check(scalar_memory(60));
  check(build_heat_system(4, 0.5, 1.0, 0.4, 1.0, 40));
}

GTEST_TEST(ClosedLoopTest, EvolutionIsLinearInTheDatum) {
  const ProblemInstance p = scalar_memory(40);
  const FeedbackLaw law = feedback_gains(integrate_backward(p, Scheme::Heun));
  const int j = 5, i = 30;

  auto make_state = [&](int seed) {
    AugmentedState X;
    X.xi0 = oracle::random_vector(1, seed);
    X.history.resize(j + 1);
    for (int k = 0; k <= j; ++k)
      X.history[k] = oracle::random_vector(1, seed + 10 * (k + 1));
    X.history[j] = X.xi0;
    return X;
  };
  const AugmentedState X = make_state(7);
  const AugmentedState Y = make_state(19);
  const double a = 0.7, b = -1.3;

  AugmentedState mix;
  mix.xi0 = a * X.xi0 + b * Y.xi0;
  mix.history.resize(j + 1);
  for (int k = 0; k <= j; ++k)
    mix.history[k] = a * X.history[k] + b * Y.history[k];

  const AugmentedState fx = evolution_apply(p, law, j, i, X);
  const AugmentedState fy = evolution_apply(p, law, j, i, Y);
  const AugmentedState fmix = evolution_apply(p, law, j, i, mix);

  double scale = 1.0;
  for (const Vector& v : fmix.history) scale = std::max(scale, max_abs(v));
  for (size_t k = 0; k < fmix.history.size(); ++k)
    EXPECT_LE(max_abs(fmix.history[k] -
                      (a * fx.history[k] + b * fy.history[k])),
              1e-12 * scale);
  EXPECT_LE(max_abs(fmix.xi0 - (a * fx.xi0 + b * fy.xi0)), 1e-12 * scale);

  // The zero datum propagates to the zero datum.
  AugmentedState zero;
  zero.xi0 = Vector::Zero(1);
  zero.history.assign(j + 1, Vector::Zero(1));
  const AugmentedState fz = evolution_apply(p, law, j, i, zero);
  EXPECT_EQ(max_abs(fz.xi0), 0.0);
  for (const Vector& v : fz.history) EXPECT_EQ(max_abs(v), 0.0);
}

GTEST_TEST(ClosedLoopTest, ValueConsistencyTrivialNodes) {
  // Empty remaining horizon: both the measured tail cost and the quadratic
  // form vanish identically.
  {
    const ProblemInstance p = scalar_memory(40);
    const RiccatiSolution sol =
        integrate_backward(p, Scheme::Heun, {40});
    const FeedbackLaw law = feedback_gains(sol);
    const ValueSample v = value_sample(p, law, sol, 40);
    EXPECT_EQ(v.cost_to_go, 0.0);
    EXPECT_EQ(v.quadratic, 0.0);
  }
  // Zero running cost: the value function is identically zero.
  {
    const ProblemInstance p = scalar_memory(40, 0.0);
    const RiccatiSolution sol =
        integrate_backward(p, Scheme::Heun, {20});
    const FeedbackLaw law = feedback_gains(sol);
    EXPECT_EQ(value_consistency(p, law, sol, 20), 0.0);
  }
}

GTEST_TEST(ClosedLoopTest, ValueConsistencyAtMidHorizon) {
  const ProblemInstance p = scalar_memory(200);
  const RiccatiSolution sol = integrate_backward(p, Scheme::Heun, {100});
  const FeedbackLaw law = feedback_gains(sol);
  const ClosedLoopTrajectory cl = simulate_feedback(p, law);
  EXPECT_LE(value_consistency(p, law, sol, 100), 1e-3 * (1.0 + cl.J_cl));
}

GTEST_TEST(ClosedLoopTest, ValueIsNonincreasingAlongTheLoop) {
  const ProblemInstance p = scalar_memory(60);
  std::vector<int> all_nodes;
  for (int i = 0; i <= p.N; ++i) all_nodes.push_back(i);
  const RiccatiSolution sol =
      integrate_backward(p, Scheme::Heun, all_nodes);
  const FeedbackLaw law = feedback_gains(sol);

  std::vector<double> tail(p.N + 1), quad(p.N + 1);
  for (int i = 0; i <= p.N; ++i) {
    const ValueSample v = value_sample(p, law, sol, i);
    tail[i] = v.cost_to_go;
    quad[i] = v.quadratic;
  }
  const double v0 = 1.0 + tail[0];
  for (int i = 0; i < p.N; ++i) {
    // The measured tail drops by one trapezoid panel of nonnegative running
    // cost per node; the quadratic surrogate follows at scheme order.
    EXPECT_GE(tail[i], tail[i + 1] - 1e-12 * v0);
    EXPECT_GE(quad[i], quad[i + 1] - 5e-3 * v0);
  }
}

GTEST_TEST(ClosedLoopTest, InputValidation) {
  const ProblemInstance p = scalar_memory(60);
  const ProblemInstance q = scalar_memory(50);
  const RiccatiSolution sol_q = integrate_backward(q, Scheme::Heun);
  const FeedbackLaw law_q = feedback_gains(sol_q);
  EXPECT_THROW(simulate_feedback(p, law_q), ValidationError);

  const RiccatiSolution sol = integrate_backward(p, Scheme::Heun);
  const FeedbackLaw law = feedback_gains(sol);
  EXPECT_THROW(value_sample(p, law, sol, 61), ValidationError);

  AugmentedState bad;
  bad.xi0 = Vector::Ones(1);
  bad.history.assign(3, Vector::Ones(1));  // claims node 2
  EXPECT_THROW(evolution_apply(p, law, 5, 10, bad), ValidationError);
  EXPECT_THROW(evolution_apply(p, law, 10, 5,
                               evolution_apply(p, law, 0, 10,
                                               augmented_from_instance(p))),
               ValidationError);
}

}  // namespace
}  // namespace memlqr
