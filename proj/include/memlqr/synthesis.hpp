#pragma once

#include <array>
#include <vector>

#include "memlqr/openloop.hpp"

namespace memlqr {

// Variational synthesis rebased at a node t: the optimal tail pair for the
// datum (xi0, xi) on [t, T] is
//
//   u(p) = Psi1(p, t) xi0 + int_0^t Psi2(p, s, t) xi(s) ds
//   w(p) = Z1(p, t)  xi0 + int_0^t Z2(p, s, t)  xi(s) ds
//
// where Psi1 = -Lambda^{-1} L* Q F(., t) columnwise and Z = F/M + L Psi.
// Everything is stored stacked over p = t..N so the quadratic cost operators
// reduce to weighted Gram products of the stacks.
struct NodeOperators {
  int t_index = 0;
  int N = 0, n = 0, m = 0;
  double h = 0.0;
  std::vector<double> w_node;          // weights on [t, T], index p - t
  Matrix SF;                           // stacked F(p, t), (np*n) x n
  std::vector<Matrix> SM;              // stacked M(p, s, t) per history node s
  Matrix Psi1;                         // stacked, (np*m) x n
  std::vector<Matrix> Psi2;            // per s
  Matrix Z1;                           // stacked, (np*n) x n
  std::vector<Matrix> Z2;              // per s
  StackedSystem sys;                   // L and weights of the tail
  Eigen::LLT<Matrix> gram_llt;         // factorization of W_u + L^T W_x Q L

  int np() const { return N - t_index + 1; }
  // Block accessors at absolute node p.
  auto psi1(int p) const { return Psi1.middleRows((p - t_index) * m, m); }
  auto psi2(int p, int s) const { return Psi2[s].middleRows((p - t_index) * m, m); }
  auto z1(int p) const { return Z1.middleRows((p - t_index) * n, n); }
  auto z2(int p, int s) const { return Z2[s].middleRows((p - t_index) * n, n); }
  auto f(int p) const { return SF.middleRows((p - t_index) * n, n); }
  auto mhist(int p, int s) const { return SM[s].middleRows((p - t_index) * n, n); }
};

enum class ZRoute { Definition, Projector };

// Psi stacks: one Cholesky factorization of the tail Gram matrix serves the
// n columns of Psi1 and the n columns of each history node's Psi2.
inline NodeOperators compute_psi(const ProblemInstance& p,
                                 const PropagatorTables& t, int t_index) {
  NodeOperators ops;
  ops.t_index = t_index;
  ops.N = p.N;
  ops.n = p.n;
  ops.m = p.m;
  ops.h = t.grid.h;
  ops.w_node = trap_weights(t_index, p.N, t.grid.h);
  ops.sys = assemble_L(p, t, t_index);

  const int np = ops.np();
  ops.SF.resize(np * p.n, p.n);
  for (int i = t_index; i <= p.N; ++i)
    ops.SF.middleRows((i - t_index) * p.n, p.n) = t.F[i][t_index];

  const HistoryTables ht = compute_history_tables(t, t_index);
  ops.SM.resize(t_index + 1);
  for (int s = 0; s <= t_index; ++s) {
    ops.SM[s].resize(np * p.n, p.n);
    for (int i = t_index; i <= p.N; ++i)
      ops.SM[s].middleRows((i - t_index) * p.n, p.n) = ht.m(i, s);
  }

  if (t_index == p.N) {
    // Terminal node: the tail [T, T] carries all-zero quadrature weights, so
    // the Gram matrix degenerates to zero and the minimizer is the zero
    // control.  Factor the identity to keep the object usable; every stored
    // right-hand side is zero anyway.
    ops.gram_llt.compute(Matrix::Identity(p.m, p.m));
    ops.Psi1 = Matrix::Zero(np * p.m, p.n);
    ops.Psi2.assign(t_index + 1, Matrix::Zero(np * p.m, p.n));
    return ops;
  }

  ops.gram_llt.compute(assemble_gram(ops.sys, p.Q));
  if (ops.gram_llt.info() != Eigen::Success)
    throw NumericalError("synthesis Gram matrix is not positive definite");

  ops.Psi1 = ops.gram_llt.solve(
      -ops.sys.L.transpose() * apply_state_weight(ops.sys, p.Q, ops.SF));
  ops.Psi2.resize(t_index + 1);
  for (int s = 0; s <= t_index; ++s)
    ops.Psi2[s] = ops.gram_llt.solve(
        -ops.sys.L.transpose() * apply_state_weight(ops.sys, p.Q, ops.SM[s]));
  return ops;
}

// Z stacks by either route: the definition Z = F/M + L Psi, or the projected
// form Z1 = [I - L Lambda^{-1} L* Q] F(., t) resolved through a fresh solve.
inline void compute_Z(const ProblemInstance& p, NodeOperators& ops,
                      ZRoute route) {
  if (route == ZRoute::Definition) {
    ops.Z1 = ops.SF + ops.sys.L * ops.Psi1;
    ops.Z2.resize(ops.SM.size());
    for (size_t s = 0; s < ops.SM.size(); ++s)
      ops.Z2[s] = ops.SM[s] + ops.sys.L * ops.Psi2[s];
  } else {
    auto project = [&](const Matrix& S) {
      const Matrix y = ops.gram_llt.solve(
          ops.sys.L.transpose() * apply_state_weight(ops.sys, p.Q, S));
      return Matrix(S - ops.sys.L * y);
    };
    ops.Z1 = project(ops.SF);
    ops.Z2.resize(ops.SM.size());
    for (size_t s = 0; s < ops.SM.size(); ++s) ops.Z2[s] = project(ops.SM[s]);
  }
}

inline NodeOperators compute_node_operators(const ProblemInstance& p,
                                            const PropagatorTables& t,
                                            int t_index,
                                            ZRoute route = ZRoute::Definition) {
  NodeOperators ops = compute_psi(p, t, t_index);
  compute_Z(p, ops, route);
  return ops;
}

// Cost operators at the base node: P0 on the state, P1(t, s) pairing state
// with history, P2(t, s, q) on the history square.
struct CostOperators {
  int t_index = 0;
  Matrix P0;
  std::vector<Matrix> P1;               // [s]
  std::vector<std::vector<Matrix>> P2;  // [s][q]
};

inline Vector control_weight_stack(const NodeOperators& ops) {
  Vector w(ops.np() * ops.m);
  for (int b = 0; b < ops.np(); ++b)
    w.segment(b * ops.m, ops.m).setConstant(ops.w_node[b]);
  return w;
}

inline Vector state_weight_stack(const NodeOperators& ops) {
  Vector w(ops.np() * ops.n);
  for (int b = 0; b < ops.np(); ++b)
    w.segment(b * ops.n, ops.n).setConstant(ops.w_node[b]);
  return w;
}

// P0 = int [Psi1* Psi1 + Z1* Q Z1], P1 = int [Psi1* Psi2 + Z1* Q Z2],
// P2 = int [Psi2(q)* Psi2(s) + Z2(q)* Q Z2(s)].
inline CostOperators cost_ops_definitional(const ProblemInstance& p,
                                           const NodeOperators& ops) {
  CostOperators c;
  c.t_index = ops.t_index;
  const Vector wu = control_weight_stack(ops);
  const Matrix WuPsi1 = wu.asDiagonal() * ops.Psi1;
  const Matrix WQZ1 = apply_state_weight(ops.sys, p.Q, ops.Z1);
  c.P0 = ops.Psi1.transpose() * WuPsi1 + ops.Z1.transpose() * WQZ1;

  const int tn = ops.t_index;
  c.P1.resize(tn + 1);
  std::vector<Matrix> WuPsi2(tn + 1), WQZ2(tn + 1);
  for (int s = 0; s <= tn; ++s) {
    WuPsi2[s] = wu.asDiagonal() * ops.Psi2[s];
    WQZ2[s] = apply_state_weight(ops.sys, p.Q, ops.Z2[s]);
    c.P1[s] = ops.Psi1.transpose() * WuPsi2[s] + ops.Z1.transpose() * WQZ2[s];
  }
  c.P2.assign(tn + 1, std::vector<Matrix>(tn + 1));
  for (int s = 0; s <= tn; ++s)
    for (int q = 0; q <= tn; ++q)
      c.P2[s][q] = ops.Psi2[q].transpose() * WuPsi2[s] +
                   ops.Z2[q].transpose() * WQZ2[s];
  return c;
}

// The reduced forms P0 = int F* Q Z1, P1 = int F* Q Z2,
// P2(s, q) = int M(., q)* Q Z2(., s); equal to the definitional forms by the
// exactness of the discrete normal equations.
inline CostOperators cost_ops_reduced(const ProblemInstance& p,
                                      const NodeOperators& ops) {
  CostOperators c;
  c.t_index = ops.t_index;
  const Matrix WQZ1 = apply_state_weight(ops.sys, p.Q, ops.Z1);
  c.P0 = ops.SF.transpose() * WQZ1;

  const int tn = ops.t_index;
  c.P1.resize(tn + 1);
  std::vector<Matrix> WQZ2(tn + 1);
  for (int s = 0; s <= tn; ++s) {
    WQZ2[s] = apply_state_weight(ops.sys, p.Q, ops.Z2[s]);
    c.P1[s] = ops.SF.transpose() * WQZ2[s];
  }
  c.P2.assign(tn + 1, std::vector<Matrix>(tn + 1));
  for (int s = 0; s <= tn; ++s)
    for (int q = 0; q <= tn; ++q)
      c.P2[s][q] = ops.SM[q].transpose() * WQZ2[s];
  return c;
}

// Componentwise gaps between the two constructions of (P0, P1, P2); these
// are the three integral identities the synthesis rests on.
struct KeyLemmaResiduals {
  double p0 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
};

inline KeyLemmaResiduals key_lemma_residuals(const CostOperators& a,
                                             const CostOperators& b) {
  KeyLemmaResiduals r;
  r.p0 = max_abs(a.P0 - b.P0);
  for (size_t s = 0; s < a.P1.size(); ++s)
    r.p1 = std::max(r.p1, max_abs(a.P1[s] - b.P1[s]));
  for (size_t s = 0; s < a.P2.size(); ++s)
    for (size_t q = 0; q < a.P2[s].size(); ++q)
      r.p2 = std::max(r.p2, max_abs(a.P2[s][q] - b.P2[s][q]));
  return r;
}

// Discrepancies of the four adjoint identities under the discrete weighted
// inner products, probed with given stacked functions g_u (control space)
// and g_x (state space):
//
//   (1) sum_p w_p Psi1(p)^T g_u(p)  = -sum_p w_p F(p)^T Q [L Lam^{-1} g_u](p)
//   (2) same with Psi2(., s) and M(., s)          (max over s)
//   (3) sum_p w_p Z1(p)^T g_x(p)   =  sum_p w_p F(p)^T g_x(p)
//                                     + sum_p w_p Psi1(p)^T [L* g_x](p)
//   (4) same with Z2(., s) and M(., s)            (max over s)
inline std::array<double, 4> adjoint_residuals(const ProblemInstance& p,
                                               const NodeOperators& ops,
                                               const Vector& g_u,
                                               const Vector& g_x) {
  const Vector wu = control_weight_stack(ops);
  const Vector wx_gx = state_weight_stack(ops).cwiseProduct(g_x);

  // Lam^{-1} g in the weighted control space: (W_u + L^T W_x Q L)^{-1} W_u g.
  const Vector lam_inv_gu = ops.gram_llt.solve(wu.cwiseProduct(g_u));
  const Vector L_lam_gu = ops.sys.L * lam_inv_gu;
  const Vector QW_Llam =
      apply_state_weight(ops.sys, p.Q, Matrix(L_lam_gu)).col(0);

  // L* g_x = W_u^{-1} L^T W_x g_x.
  const Vector Lstar_gx =
      wu.cwiseInverse().cwiseProduct(ops.sys.L.transpose() * wx_gx);

  std::array<double, 4> r{};
  {
    const Vector lhs = ops.Psi1.transpose() * wu.cwiseProduct(g_u);
    const Vector rhs = -(ops.SF.transpose() * QW_Llam);
    r[0] = (lhs - rhs).cwiseAbs().maxCoeff();
  }
  for (int s = 0; s <= ops.t_index; ++s) {
    const Vector lhs = ops.Psi2[s].transpose() * wu.cwiseProduct(g_u);
    const Vector rhs = -(ops.SM[s].transpose() * QW_Llam);
    r[1] = std::max(r[1], (lhs - rhs).cwiseAbs().maxCoeff());
  }
  {
    const Vector lhs = ops.Z1.transpose() * wx_gx;
    const Vector rhs = ops.SF.transpose() * wx_gx +
                       ops.Psi1.transpose() * wu.cwiseProduct(Lstar_gx);
    r[2] = (lhs - rhs).cwiseAbs().maxCoeff();
  }
  for (int s = 0; s <= ops.t_index; ++s) {
    const Vector lhs = ops.Z2[s].transpose() * wx_gx;
    const Vector rhs = ops.SM[s].transpose() * wx_gx +
                       ops.Psi2[s].transpose() * wu.cwiseProduct(Lstar_gx);
    r[3] = std::max(r[3], (lhs - rhs).cwiseAbs().maxCoeff());
  }
  return r;
}

// Quadratic form <P(t) X, X> of the cost operators on a datum
// X = (xi0, xi(.) on [0, t]); the sole source of the optimal value.
inline double optimal_cost_via_P(const CostOperators& c, const Vector& xi0,
                                 const std::vector<Vector>& hist, double h) {
  double v = xi0.dot(c.P0 * xi0);
  const int tn = c.t_index;
  if (tn == 0) return v;
  const std::vector<double> w = trap_weights(0, tn, h);
  for (int s = 0; s <= tn; ++s) v += 2.0 * w[s] * xi0.dot(c.P1[s] * hist[s]);
  for (int s = 0; s <= tn; ++s)
    for (int q = 0; q <= tn; ++q)
      v += w[s] * w[q] * hist[q].dot(c.P2[s][q] * hist[s]);
  return v;
}

// Optimal tail pair for the instance's own datum, assembled from the stacks;
// coincides with solve_open_loop by linearity of the normal equations.
inline void apply_node_operators(const ProblemInstance& p,
                                 const NodeOperators& ops, Trajectory& u,
                                 Trajectory& w) {
  const int tn = ops.t_index;
  Vector ustack = ops.Psi1 * p.init.xi0;
  Vector wstack = ops.Z1 * p.init.xi0;
  if (tn > 0) {
    const std::vector<double> wh = trap_weights(0, tn, ops.h);
    for (int s = 0; s <= tn; ++s) {
      ustack += wh[s] * (ops.Psi2[s] * p.init.history[s]);
      wstack += wh[s] * (ops.Z2[s] * p.init.history[s]);
    }
  }
  u = split_stacked(ustack, tn, p.m);
  w = split_stacked(wstack, tn, p.n);
}

}  // namespace memlqr
