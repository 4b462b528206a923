#pragma once

#include <vector>

#include "memlqr/propagator.hpp"

namespace memlqr {

// Node-sampled trajectory on [t_first, T]; x[k] lives at node first_node + k.
struct Trajectory {
  int first_node = 0;
  std::vector<Vector> x;

  const Vector& at(int node) const { return x[node - first_node]; }
  Vector& at(int node) { return x[node - first_node]; }
  int last_node() const { return first_node + static_cast<int>(x.size()) - 1; }
};

// Stacked discretization of the control-to-state map on [t_tau, T]:
//
//   (L u)_i = int_tau^{t_i} F(t_i, s) B u(s) ds
//           ~ sum_{j=tau}^{i} w_j^{[tau,i]} F[i][j] B u_j
//
// with trapezoid weights that depend on the row's upper limit, plus the
// free-evolution samples Ebar_i = F[i][tau] xi0 + sum_j w_j M[i][j] xi_j.
// wx / wu are the cost quadrature weights on [tau, T] per node.
struct StackedSystem {
  int tau = 0;
  int N = 0;
  int n = 0;
  int m = 0;
  double h = 0.0;
  Matrix L;
  Vector Ebar;
  std::vector<double> w_node;  // quadrature weights on [tau, T], index i - tau

  int rows() const { return (N - tau + 1) * n; }
  int cols() const { return (N - tau + 1) * m; }
};

// L and the cost weights for the tail [t_tau, T]; independent of the datum.
inline StackedSystem assemble_L(const ProblemInstance& p,
                                const PropagatorTables& t, int tau) {
  StackedSystem s;
  s.tau = tau;
  s.N = p.N;
  s.n = p.n;
  s.m = p.m;
  s.h = t.grid.h;
  const int nb = s.N - s.tau + 1;
  s.w_node = trap_weights(s.tau, s.N, s.h);

  s.L = Matrix::Zero(nb * p.n, nb * p.m);
  for (int i = s.tau; i <= s.N; ++i)
    for (int j = s.tau; j <= i; ++j) {
      const double w = trap_weight(j, s.tau, i, s.h);
      if (w != 0.0)
        s.L.block((i - s.tau) * p.n, (j - s.tau) * p.m, p.n, p.m) =
            w * (t.F[i][j] * p.B);
    }
  return s;
}

// Free-evolution samples Ebar_i = F[i][tau] xi0 + sum_j w_j M[i][j] xi_j.
inline Vector assemble_E(const ProblemInstance& p, const PropagatorTables& t,
                         const HistoryTables& ht) {
  const int tau = p.init.tau_index;
  const int nb = p.N - tau + 1;
  Vector Ebar = Vector::Zero(nb * p.n);
  const std::vector<double> wh = trap_weights(0, tau, t.grid.h);
  for (int i = tau; i <= p.N; ++i) {
    Vector e = t.F[i][tau] * p.init.xi0;
    for (int j = 0; j <= tau && tau > 0; ++j)
      e += wh[j] * (ht.m(i, j) * p.init.history[j]);
    Ebar.segment((i - tau) * p.n, p.n) = e;
  }
  return Ebar;
}

inline StackedSystem assemble_system(const ProblemInstance& p,
                                     const PropagatorTables& t,
                                     const HistoryTables& ht) {
  StackedSystem s = assemble_L(p, t, p.init.tau_index);
  s.Ebar = assemble_E(p, t, ht);
  return s;
}

// Block-diagonal action of the weighted state cost: (QW v)_i = w_i Q v_i.
inline Matrix apply_state_weight(const StackedSystem& s, const Matrix& Q,
                                 const Matrix& V) {
  Matrix out(V.rows(), V.cols());
  const int nb = s.N - s.tau + 1;
  for (int b = 0; b < nb; ++b)
    out.middleRows(b * s.n, s.n) = s.w_node[b] * (Q * V.middleRows(b * s.n, s.n));
  return out;
}

inline Vector control_weight_diagonal(const StackedSystem& s) {
  Vector wu(s.cols());
  const int nb = s.N - s.tau + 1;
  for (int b = 0; b < nb; ++b)
    wu.segment(b * s.m, s.m).setConstant(s.w_node[b]);
  return wu;
}

// Normal-equation matrix W_u + L^T W_x Qbar L of the discrete quadratic cost.
inline Matrix assemble_gram(const StackedSystem& s, const Matrix& Q) {
  Matrix gram = s.L.transpose() * apply_state_weight(s, Q, s.L);
  gram += Matrix(control_weight_diagonal(s).asDiagonal());
  return gram;
}

struct OpenLoopSolution {
  Trajectory u;      // optimal control samples on [tau, N]
  Trajectory w;      // induced state samples (representation formula)
  double J = 0.0;
  double residual = 0.0;  // normal-equation defect
  double rcond = 0.0;     // reciprocal condition estimate of the Gram matrix
};

inline Trajectory split_stacked(const Vector& v, int first_node, int dim) {
  Trajectory tr;
  tr.first_node = first_node;
  const int nb = static_cast<int>(v.size()) / dim;
  tr.x.resize(nb);
  for (int b = 0; b < nb; ++b) tr.x[b] = v.segment(b * dim, dim);
  return tr;
}

// Minimizes the trapezoid cost over stacked controls.  The system matrix is
// I-shifted PSD, so Cholesky never pivots and two factorizations of the same
// data agree to roundoff.
inline OpenLoopSolution solve_open_loop(const ProblemInstance& p,
                                        const PropagatorTables& t,
                                        const HistoryTables& ht) {
  const StackedSystem s = assemble_system(p, t, ht);
  const Matrix gram = assemble_gram(s, p.Q);
  const Vector rhs = -s.L.transpose() * apply_state_weight(s, p.Q, s.Ebar);

  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success)
    throw NumericalError("open-loop normal equations are not positive definite");
  const Vector u = llt.solve(rhs);

  OpenLoopSolution sol;
  sol.u = split_stacked(u, s.tau, p.m);
  sol.w = split_stacked(s.Ebar + s.L * u, s.tau, p.n);
  sol.residual = (gram * u - rhs).cwiseAbs().maxCoeff();
  sol.rcond = llt.rcond();

  double J = 0.0;
  for (int i = s.tau; i <= s.N; ++i)
    J += s.w_node[i - s.tau] *
         (sol.w.at(i).dot(p.Q * sol.w.at(i)) + sol.u.at(i).squaredNorm());
  sol.J = J;
  return sol;
}

inline OpenLoopSolution solve_open_loop(const ProblemInstance& p,
                                        const PropagatorTables& t) {
  const HistoryTables ht = compute_history_tables(t, p.init.tau_index);
  return solve_open_loop(p, t, ht);
}

// Trapezoid cost of given samples on [t_first, T].
inline double evaluate_cost(const ProblemInstance& p, const Trajectory& w,
                            const Trajectory& u) {
  const TimeGrid g = p.grid();
  double J = 0.0;
  for (int i = w.first_node; i <= g.N; ++i)
    J += trap_weight(i, w.first_node, g.N, g.h) *
         (w.at(i).dot(p.Q * w.at(i)) + u.at(i).squaredNorm());
  return J;
}

// Extended trajectory samples y_j on [0, t_i]: recorded history below tau,
// the running state at and above tau.  The node-tau slot carries xi0 (the
// state), which equals the final history sample whenever the datum is the
// trace of an actual trajectory; every consumer here uses this one array so
// that restarting a run at a later node replays identical arithmetic.
struct ExtendedPath {
  int tau = 0;
  std::vector<Vector> y;  // nodes 0..last filled so far
};

inline ExtendedPath begin_path(const ProblemInstance& p) {
  ExtendedPath ep;
  ep.tau = p.init.tau_index;
  ep.y.resize(p.N + 1);
  for (int j = 0; j < ep.tau; ++j) ep.y[j] = p.init.history[j];
  ep.y[ep.tau] = p.init.xi0;
  return ep;
}

// Crank-Nicolson-class step of the memory dynamics.  The memory term is one
// trapezoid sum over [0, t_i] of K(t_i - s_j) y_j; the unknown node enters
// both through A and through its own h/2 convolution weight, giving the
// implicit matrix I - (h/2) A - (h^2/4) K(0).
struct DirectStepper {
  const ProblemInstance* p = nullptr;
  const KernelTable* K = nullptr;
  double h = 0.0;
  Eigen::PartialPivLU<Matrix> lu;

  DirectStepper(const ProblemInstance& prob, const KernelTable& kt)
      : p(&prob), K(&kt), h(prob.grid().h) {
    Matrix Mstep = Matrix::Identity(prob.n, prob.n) - 0.5 * h * prob.A -
                   0.25 * h * h * kt.mat(0);
    lu.compute(Mstep);
  }

  Vector memory_sum(const ExtendedPath& ep, int upto, int at) const {
    // sum_{j=0}^{upto} w_j^{[0, at]} K_{at-j} y_j
    Vector acc = Vector::Zero(p->n);
    for (int j = 0; j <= upto; ++j) {
      const double w = trap_weight(j, 0, at, h);
      if (w != 0.0) acc += w * K->apply(at - j, ep.y[j]);
    }
    return acc;
  }

  // Advance y from node i to i+1 given both control samples.
  Vector step(ExtendedPath& ep, int i, const Vector& u_i,
              const Vector& u_ip1) const {
    const Vector f_i = p->A * ep.y[i] + memory_sum(ep, i, i) + p->B * u_i;
    const Vector g_known = memory_sum(ep, i, i + 1) + p->B * u_ip1;
    ep.y[i + 1] = lu.solve(ep.y[i] + 0.5 * h * (f_i + g_known));
    return ep.y[i + 1];
  }
};

// Integrates the state equation for a prescribed control; second order.
inline Trajectory simulate_direct(const ProblemInstance& p,
                                  const Trajectory& u) {
  const KernelTable kt(p.kernel, p.grid(), p.n);
  DirectStepper st(p, kt);
  ExtendedPath ep = begin_path(p);
  const int tau = p.init.tau_index;
  for (int i = tau; i < p.N; ++i) st.step(ep, i, u.at(i), u.at(i + 1));

  Trajectory w;
  w.first_node = tau;
  w.x.assign(ep.y.begin() + tau, ep.y.end());
  return w;
}

// Central-difference directional derivative of the simulated cost at u in
// direction v; vanishes at the discrete optimum up to quadrature mismatch.
inline double optimality_probe(const ProblemInstance& p, const Trajectory& u,
                               const Trajectory& v, double eps) {
  auto shifted = [&](double sgn) {
    Trajectory up = u;
    for (size_t k = 0; k < up.x.size(); ++k) up.x[k] += sgn * eps * v.x[k];
    const Trajectory w = simulate_direct(p, up);
    return evaluate_cost(p, w, up);
  };
  return (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
}

// Instance describing the tail problem at node k of a run: the state there
// becomes xi0 and the extended path up to k becomes the history.
inline ProblemInstance make_tail_instance(const ProblemInstance& p,
                                          const ExtendedPath& ep, int k) {
  ProblemInstance tail = p;
  tail.init.tau_index = k;
  tail.init.xi0 = ep.y[k];
  tail.init.history.assign(ep.y.begin(), ep.y.begin() + k + 1);
  if (k == 0) tail.init.history.clear();
  return tail;
}

}  // namespace memlqr
