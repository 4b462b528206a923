#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memlqr/openloop.hpp"
#include "memlqr/riccati.hpp"

namespace memlqr {

using FeedbackLaw = FeedbackGains;

// Feedback value at a node of the current path:
//   u(t_i) = -G0[i] y_i - sum_{j<=i} w_j G1[i][j] y_j
// with trapezoid weights over [0, t_i]; at j = i the weight is h/2, the same
// value the L-operator diagonal carries.
inline Vector feedback_control(const FeedbackLaw& law, const ExtendedPath& ep,
                               int i) {
  Vector u = -(law.G0[i] * ep.y[i]);
  for (int j = 0; j <= i; ++j) {
    const double wj = trap_weight(j, 0, i, law.grid.h);
    if (wj != 0.0) u -= wj * (law.g1(i, j) * ep.y[j]);
  }
  return u;
}

// Inner stepping of the closed-loop march.  Trapezoid is the second-order
// scheme simulate_direct uses; Euler is fully explicit, kept for exact
// arithmetic-path arguments (composition of the evolution map).
enum class InnerStepper { Euler, Trapezoid };

namespace detail {

// Marches the path from node `from` to node `to` under the law; y[0..from]
// must be filled.  Returns the applied controls at from..to, each evaluated
// on the final state of its node.  Within a trapezoid step the control at
// the right endpoint is lagged: an explicit predictor occupies the slot,
// the law is read there, and the implicit step then uses that sample.
inline std::vector<Vector> advance_feedback(const ProblemInstance& p,
                                            const FeedbackLaw& law,
                                            ExtendedPath& ep, int from, int to,
                                            InnerStepper kind) {
  const KernelTable kt(p.kernel, p.grid(), p.n);
  const DirectStepper st(p, kt);
  const double h = st.h;
  std::vector<Vector> u;
  u.reserve(to - from + 1);
  for (int i = from; i < to; ++i) {
    const Vector u_i = feedback_control(law, ep, i);
    u.push_back(u_i);
    const Vector f_i =
        p.A * ep.y[i] + st.memory_sum(ep, i, i) + p.B * u_i;
    ep.y[i + 1] = ep.y[i] + h * f_i;
    if (kind == InnerStepper::Trapezoid) {
      const Vector u_pred = feedback_control(law, ep, i + 1);
      st.step(ep, i, u_i, u_pred);
    }
    if (!ep.y[i + 1].allFinite())
      throw NumericalError("closed-loop state lost finiteness at node " +
                           std::to_string(i + 1));
  }
  u.push_back(feedback_control(law, ep, to));
  return u;
}

}  // namespace detail

struct ClosedLoopTrajectory {
  Trajectory w;  // state samples on [tau, N]
  Trajectory u;  // control samples on [tau, N]
  double J_cl = 0.0;
};

inline ClosedLoopTrajectory simulate_feedback(
    const ProblemInstance& p, const FeedbackLaw& law,
    InnerStepper kind = InnerStepper::Trapezoid) {
  if (law.grid.N != p.N || law.n != p.n || law.m != p.m)
    throw ValidationError("feedback law does not match the instance grid");
  ExtendedPath ep = begin_path(p);
  const int tau = p.init.tau_index;
  std::vector<Vector> u = detail::advance_feedback(p, law, ep, tau, p.N, kind);

  ClosedLoopTrajectory out;
  out.w.first_node = tau;
  out.w.x.assign(ep.y.begin() + tau, ep.y.end());
  out.u.first_node = tau;
  out.u.x = std::move(u);
  out.J_cl = evaluate_cost(p, out.w, out.u);
  return out;
}

// Augmented datum at a node: the state plus the path on [0, t_j].  The state
// sample supersedes history[j] at the seam node, matching begin_path.
struct AugmentedState {
  Vector xi0;
  std::vector<Vector> history;  // nodes 0..j
};

inline AugmentedState augmented_from_instance(const ProblemInstance& p) {
  AugmentedState X;
  X.xi0 = p.init.xi0;
  X.history = p.init.history;
  X.history.resize(p.init.tau_index + 1);
  X.history[p.init.tau_index] = p.init.xi0;
  return X;
}

// Evolution map Phi(i <- j): closed-loop flow on the augmented space,
// realized by marching the path from t_j to t_i.  Phi(j <- j) is the
// identity, and composition over a middle node replays the same arithmetic.
inline AugmentedState evolution_apply(const ProblemInstance& p,
                                      const FeedbackLaw& law, int j, int i,
                                      const AugmentedState& X,
                                      InnerStepper kind = InnerStepper::Trapezoid) {
  if (j < 0 || i < j || i > p.N)
    throw ValidationError("evolution nodes must satisfy 0 <= j <= i <= N");
  if (static_cast<int>(X.history.size()) != j + 1)
    throw ValidationError("augmented history must hold nodes 0..j");
  if (X.xi0.size() != p.n)
    throw ValidationError("augmented state dimension mismatch");
  for (const Vector& v : X.history)
    if (v.size() != p.n)
      throw ValidationError("augmented history dimension mismatch");

  ExtendedPath ep;
  ep.tau = p.init.tau_index;
  ep.y.resize(p.N + 1);
  for (int k = 0; k <= j; ++k) ep.y[k] = X.history[k];
  ep.y[j] = X.xi0;
  detail::advance_feedback(p, law, ep, j, i, kind);

  AugmentedState out;
  out.xi0 = ep.y[i];
  out.history.assign(ep.y.begin(), ep.y.begin() + i + 1);
  return out;
}

// Cost-to-go of the closed loop on [t_i, T] next to the quadratic value
// <BigP(t_i) Phi X, Phi X> at the same node; equal up to scheme order by
// dynamic programming, exactly zero at i = N.
struct ValueSample {
  double cost_to_go = 0.0;
  double quadratic = 0.0;
};

inline ValueSample value_sample(const ProblemInstance& p,
                                const FeedbackLaw& law,
                                const RiccatiSolution& sol, int node) {
  const int tau = p.init.tau_index;
  if (node < tau || node > p.N)
    throw ValidationError("value node must lie in [tau, N]");
  const TimeGrid grid = p.grid();
  const ClosedLoopTrajectory cl = simulate_feedback(p, law);

  ValueSample v;
  for (int k = node; k <= p.N; ++k) {
    const double w = trap_weight(k, node, p.N, grid.h);
    v.cost_to_go +=
        w * (cl.w.at(k).dot(p.Q * cl.w.at(k)) + cl.u.at(k).squaredNorm());
  }

  std::vector<Vector> hist(node + 1);
  for (int k = 0; k <= node; ++k)
    hist[k] = k < tau ? p.init.history[k] : cl.w.at(k);
  const Vector x = stack_augmented(cl.w.at(node), hist);
  const Matrix big = assemble_bigP(sol, node);
  v.quadratic = x.dot(big * x);
  return v;
}

inline double value_consistency(const ProblemInstance& p,
                                const FeedbackLaw& law,
                                const RiccatiSolution& sol, int node) {
  const ValueSample v = value_sample(p, law, sol, node);
  return std::abs(v.cost_to_go - v.quadratic);
}

}  // namespace memlqr
