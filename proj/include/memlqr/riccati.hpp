#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "memlqr/problem.hpp"
#include "memlqr/propagator.hpp"

namespace memlqr {

enum class Scheme { Euler, Heun };

inline const char* scheme_name(Scheme s) {
  return s == Scheme::Euler ? "euler" : "heun";
}

inline Scheme scheme_from_name(const std::string& s) {
  if (s == "euler") return Scheme::Euler;
  if (s == "heun") return Scheme::Heun;
  throw ParseError("unknown scheme '" + s + "' (expected euler or heun)");
}

// View of the coupled unknowns at one node of the backward march, as handed
// to an observer.  P1 stacks the blocks P1(t_i, s_j) at rows j*n; P2 holds
// the block P2(t_i, s_j, s_k) at (j, k).  Rows and blocks with index beyond
// `node` are stale storage and must not be read.  The quadratic pairing is
//   <P0 x, x> + 2 sum_j w_j <P1[j] xi_j, x> + sum_{j,k} w_j w_k xi_k.P2[j][k] xi_j.
struct RiccatiState {
  int node = 0;
  int n = 0;
  const Matrix& P0;
  const Matrix& P1;
  const Matrix& P2;

  auto p1(int j) const { return P1.middleRows(j * n, n); }
  auto p2(int j, int k) const { return P2.block(j * n, k * n, n, n); }
};

using RiccatiObserver = std::function<void(const RiccatiState&)>;

struct RiccatiDerivative {
  Matrix dP0;
  std::vector<Matrix> dP1;               // j = 0..node
  std::vector<std::vector<Matrix>> dP2;  // (j, k), j,k = 0..node
};

namespace detail {

// Right-hand side core shared by the march and the standalone rhs().
// Reads the state stacked as in RiccatiState (diagonal entries at `node`),
// writes forward-time derivatives for history indices up to jmax.  Sbuf is
// scratch of at least (jmax+1)*n rows.  With a vanishing kernel the memory
// blocks stay identically zero, so only dP0 is produced.
inline void riccati_rhs_core(const Matrix& A, const Matrix& At,
                             const Matrix& BBt, const Matrix& Q,
                             const KernelTable& K, bool memoryless, int n,
                             int node, int jmax, const Matrix& P0,
                             const Matrix& P1, const Matrix& P2, Matrix& dP0,
                             Matrix& dP1, Matrix& dP2, Matrix& Sbuf) {
  const Matrix P0BBt = P0 * BBt;
  const auto P1diag = P1.middleRows(node * n, n);
  dP0 = -(At * P0 + P0 * A + Q - P0BBt * P0 + P1diag +
          P1diag.transpose());
  if (memoryless) return;

  const Matrix M0 = At - P0BBt;
  for (int j = 0; j <= jmax; ++j) {
    const Matrix P1j = P1.middleRows(j * n, n);
    dP1.middleRows(j * n, n) = -(M0 * P1j + K.rmul(P0, node - j) +
                                 P2.block(j * n, node * n, n, n));
    Sbuf.middleRows(j * n, n) = BBt * P1j;
  }
  for (int j = 0; j <= jmax; ++j) {
    const Matrix P1j = P1.middleRows(j * n, n);
    for (int k = 0; k <= jmax; ++k) {
      const Matrix P1kt = P1.middleRows(k * n, n).transpose();
      dP2.block(j * n, k * n, n, n) =
          -(K.lmul(node - k, P1j) + K.rmul(P1kt, node - j) -
            P1kt * Sbuf.middleRows(j * n, n));
    }
  }
}

}  // namespace detail

// Forward-time derivatives of the coupled system at a node:
//   dP0     = -(A'P0 + P0 A + Q - P0 B B' P0 + P1[i] + P1[i]')
//   dP1[j]  = -(A'P1[j] + P0 K(t_i - s_j) + P2[j][i] - P0 B B' P1[j])
//   dP2[jk] = -(K(t_i - s_k) P1[j] + P1[k]' K(t_i - s_j) - P1[k]' B B' P1[j])
// Scalar kernels scale blocks; matrix kernels multiply on the side written.
inline RiccatiDerivative rhs(const Matrix& A, const Matrix& B, const Matrix& Q,
                             const KernelTable& K, int node, const Matrix& P0,
                             const std::vector<Matrix>& P1,
                             const std::vector<std::vector<Matrix>>& P2) {
  const int n = static_cast<int>(A.rows());
  const int d = (node + 1) * n;
  Matrix P1s = Matrix::Zero(d, n);
  Matrix P2s = Matrix::Zero(d, d);
  for (int j = 0; j <= node; ++j) {
    P1s.middleRows(j * n, n) = P1[j];
    for (int k = 0; k <= node; ++k) P2s.block(j * n, k * n, n, n) = P2[j][k];
  }
  Matrix dP0, dP1 = Matrix::Zero(d, n), dP2 = Matrix::Zero(d, d);
  Matrix Sbuf(d, n);
  detail::riccati_rhs_core(A, A.transpose(), B * B.transpose(), Q, K,
                           /*memoryless=*/false, n, node, node, P0, P1s, P2s,
                           dP0, dP1, dP2, Sbuf);
  RiccatiDerivative out;
  out.dP0 = dP0;
  out.dP1.resize(node + 1);
  out.dP2.assign(node + 1, std::vector<Matrix>(node + 1));
  for (int j = 0; j <= node; ++j) {
    out.dP1[j] = dP1.middleRows(j * n, n);
    for (int k = 0; k <= node; ++k)
      out.dP2[j][k] = dP2.block(j * n, k * n, n, n);
  }
  return out;
}

// Backward solution of the coupled system.  P0 is kept at every node and P1
// on the whole triangle j <= i; the P2 slice is O((N n)^2) per node, so it is
// persisted only at checkpoint nodes (node 0 and the datum node always
// included).  Drift monitors are relative: |drift| / (1 + |P|) at the node.
struct RiccatiSolution {
  TimeGrid grid;
  Scheme scheme = Scheme::Heun;
  int n = 0, m = 0;
  int tau_index = 0;
  Matrix B;
  std::vector<Matrix> P0;      // node -> n x n
  std::vector<Matrix> P1;      // node i -> ((i+1) n) x n stacked rows
  std::map<int, Matrix> P2;    // checkpoint node i -> ((i+1) n) square slice
  double p0_sym_drift = 0.0;
  double p0_psd_drift = 0.0;
  double p2_sym_drift = 0.0;
  std::vector<std::string> warnings;

  auto p1(int i, int j) const { return P1[i].middleRows(j * n, n); }

  bool has_p2(int node) const { return P2.count(node) > 0; }
  const Matrix& p2_slice(int node) const {
    auto it = P2.find(node);
    if (it == P2.end())
      throw ValidationError("no P2 checkpoint stored at node " +
                            std::to_string(node));
    return it->second;
  }
  auto p2(int node, int j, int k) const {
    return p2_slice(node).block(j * n, k * n, n, n);
  }
};

// Marches i = N..0 with the explicit scheme:
//   Euler  P(i) = P(i+1) - h rhs(i+1)
//   Heun   predict P~ = P(i+1) - h rhs(i+1), then
//          P(i) = P(i+1) - h/2 [rhs(i+1, P(i+1)) + rhs(i, P~)],
// where the corrector's diagonal couplings P1[i], P2[.][i] come from the
// predictor.  The index set {j <= i} shrinks with i; rows above it are never
// read again.  terminal_p0 overrides the zero final condition on P0 only
// (stability probes); the default keeps the terminal state bitwise zero.
inline RiccatiSolution integrate_backward(const ProblemInstance& p,
                                          const PropagatorTables* prop,
                                          Scheme scheme,
                                          const std::vector<int>& checkpoints = {},
                                          const RiccatiObserver& observer = {},
                                          const Matrix& terminal_p0 = Matrix()) {
  const TimeGrid grid = p.grid();
  const int N = grid.N, n = p.n;
  const double h = grid.h;
  const KernelTable K =
      prop ? prop->K : KernelTable(p.kernel, grid, p.n);
  const bool memoryless = p.kernel.is_zero();
  const Matrix At = p.A.transpose();
  const Matrix BBt = p.B * p.B.transpose();

  std::set<int> cps(checkpoints.begin(), checkpoints.end());
  cps.insert(0);
  cps.insert(p.init.tau_index);
  for (int c : cps)
    if (c < 0 || c > N)
      throw ValidationError("checkpoint node " + std::to_string(c) +
                            " outside the grid 0.." + std::to_string(N));

  RiccatiSolution sol;
  sol.grid = grid;
  sol.scheme = scheme;
  sol.n = n;
  sol.m = p.m;
  sol.tau_index = p.init.tau_index;
  sol.B = p.B;
  sol.P0.resize(N + 1);
  sol.P1.resize(N + 1);

  const int d = (N + 1) * n;
  Matrix P0 = Matrix::Zero(n, n);
  Matrix P1 = Matrix::Zero(d, n);
  Matrix P2 = Matrix::Zero(d, d);
  if (terminal_p0.size() != 0) {
    if (terminal_p0.rows() != n || terminal_p0.cols() != n)
      throw ValidationError("terminal P0 override must be n x n");
    P0 = terminal_p0;
  }

  // Scratch for the march; the P2-sized blocks are skipped entirely when the
  // kernel vanishes, which keeps the memory blocks bitwise zero.
  Matrix dP0a, dP0b, T0;
  Matrix dP1a, dP1b, T1, Sbuf;
  Matrix dP2a, dP2b, T2;
  if (!memoryless) {
    dP1a = Matrix::Zero(d, n);
    dP1b = Matrix::Zero(d, n);
    T1 = Matrix::Zero(d, n);
    Sbuf.resize(d, n);
    dP2a = Matrix::Zero(d, d);
    dP2b = Matrix::Zero(d, d);
    T2 = Matrix::Zero(d, d);
  } else {
    Sbuf.resize(0, n);
  }

  constexpr double kBlowUp = 1e12;
  double worst_p0_sym = 0.0, worst_p0_neg = 0.0, worst_p2_sym = 0.0;
  int worst_p0_sym_node = N, worst_p0_neg_node = N, worst_p2_sym_node = N;

  auto record_node = [&](int i) {
    const int di = (i + 1) * n;
    const double p0n = max_abs(P0);
    if (!P0.allFinite() || p0n > kBlowUp ||
        (!memoryless &&
         (!P1.topRows(di).allFinite() ||
          !P2.topLeftCorner(di, di).allFinite() ||
          max_abs(P1.topRows(di)) > kBlowUp ||
          max_abs(P2.topLeftCorner(di, di)) > kBlowUp)))
      throw NumericalError("backward march diverged at node " +
                           std::to_string(i) + " (t = " +
                           std::to_string(grid.node(i)) + ")");

    sol.P0[i] = P0;
    sol.P1[i] = P1.topRows(di);
    if (cps.count(i)) sol.P2[i] = P2.topLeftCorner(di, di);

    const double sym = max_abs(P0 - P0.transpose()) / (1.0 + p0n);
    if (sym > worst_p0_sym) {
      worst_p0_sym = sym;
      worst_p0_sym_node = i;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (P0 + P0.transpose()),
                                             Eigen::EigenvaluesOnly);
    const double neg = std::max(0.0, -es.eigenvalues()(0)) / (1.0 + p0n);
    if (neg > worst_p0_neg) {
      worst_p0_neg = neg;
      worst_p0_neg_node = i;
    }
    if (!memoryless && di > 0) {
      const Matrix slice = P2.topLeftCorner(di, di);
      const double s2 =
          max_abs(slice - slice.transpose()) / (1.0 + max_abs(slice));
      if (s2 > worst_p2_sym) {
        worst_p2_sym = s2;
        worst_p2_sym_node = i;
      }
    }
    if (observer) observer(RiccatiState{i, n, P0, P1, P2});
  };

  record_node(N);

  for (int i = N - 1; i >= 0; --i) {
    const int di = (i + 1) * n;
    detail::riccati_rhs_core(p.A, At, BBt, p.Q, K, memoryless, n, i + 1, i,
                             P0, P1, P2, dP0a, dP1a, dP2a, Sbuf);
    if (scheme == Scheme::Euler) {
      P0 -= h * dP0a;
      if (!memoryless) {
        P1.topRows(di) -= h * dP1a.topRows(di);
        P2.topLeftCorner(di, di) -= h * dP2a.topLeftCorner(di, di);
      }
    } else {
      T0 = P0 - h * dP0a;
      if (!memoryless) {
        T1.topRows(di) = P1.topRows(di) - h * dP1a.topRows(di);
        T2.topLeftCorner(di, di) =
            P2.topLeftCorner(di, di) - h * dP2a.topLeftCorner(di, di);
      }
      detail::riccati_rhs_core(p.A, At, BBt, p.Q, K, memoryless, n, i, i, T0,
                               T1, T2, dP0b, dP1b, dP2b, Sbuf);
      P0 -= 0.5 * h * (dP0a + dP0b);
      if (!memoryless) {
        P1.topRows(di) -=
            0.5 * h * (dP1a.topRows(di) + dP1b.topRows(di));
        P2.topLeftCorner(di, di) -=
            0.5 * h *
            (dP2a.topLeftCorner(di, di) + dP2b.topLeftCorner(di, di));
      }
    }
    record_node(i);
  }

  sol.p0_sym_drift = worst_p0_sym;
  sol.p0_psd_drift = worst_p0_neg;
  sol.p2_sym_drift = worst_p2_sym;
  const double drift = p.tol.drift_tol;
  std::ostringstream w;
  if (worst_p0_sym > drift) {
    w.str("");
    w << "P0 symmetry drift " << worst_p0_sym << " at node "
      << worst_p0_sym_node << " exceeds " << drift;
    sol.warnings.push_back(w.str());
  }
  if (worst_p0_neg > drift) {
    w.str("");
    w << "P0 lost positive semidefiniteness by " << worst_p0_neg
      << " at node " << worst_p0_neg_node;
    sol.warnings.push_back(w.str());
  }
  if (worst_p2_sym > drift) {
    w.str("");
    w << "P2 block-symmetry drift " << worst_p2_sym << " at node "
      << worst_p2_sym_node << " exceeds " << drift;
    sol.warnings.push_back(w.str());
  }
  return sol;
}

inline RiccatiSolution integrate_backward(const ProblemInstance& p,
                                          Scheme scheme,
                                          const std::vector<int>& checkpoints = {},
                                          const RiccatiObserver& observer = {},
                                          const Matrix& terminal_p0 = Matrix()) {
  return integrate_backward(p, nullptr, scheme, checkpoints, observer,
                            terminal_p0);
}

// Augmented-space operator at a checkpoint node.  On X = (xi0, xi(s_0..s_i))
// the quadratic form <BigP X, X> reproduces
//   <P0 xi0, xi0> + 2 sum_j w_j <P1[j] xi_j, xi0>
//                 + sum_{j,k} w_j w_k xi_k . P2[j][k] xi_j
// with w the history trapezoid weights, embedded as
//   [ P0        w_s P1[s]          ]
//   [ w_q P1[q]'  w_q w_s P2[s][q] ]   (row block 1+q, column block 1+s).
inline Matrix assemble_bigP(const RiccatiSolution& sol, int node) {
  const int n = sol.n;
  const Matrix& slice = sol.p2_slice(node);
  const std::vector<double> w = trap_weights(0, node, sol.grid.h);
  const int dim = n * (node + 2);
  Matrix big = Matrix::Zero(dim, dim);
  big.topLeftCorner(n, n) = sol.P0[node];
  for (int s = 0; s <= node; ++s) {
    big.block(0, (1 + s) * n, n, n) = w[s] * sol.p1(node, s);
    big.block((1 + s) * n, 0, n, n) = w[s] * sol.p1(node, s).transpose();
  }
  for (int q = 0; q <= node; ++q)
    for (int s = 0; s <= node; ++s)
      big.block((1 + q) * n, (1 + s) * n, n, n) =
          w[q] * w[s] * slice.block(s * n, q * n, n, n);
  return big;
}

// (xi0, xi(s_0..s_i)) stacked for pairing with assemble_bigP.
inline Vector stack_augmented(const Vector& xi0,
                              const std::vector<Vector>& hist) {
  const int n = static_cast<int>(xi0.size());
  Vector x(n * (1 + static_cast<int>(hist.size())));
  x.head(n) = xi0;
  for (size_t j = 0; j < hist.size(); ++j)
    x.segment(n * (1 + static_cast<int>(j)), n) = hist[j];
  return x;
}

// Gain tables of the feedback law
//   u(t_i) = -G0[i] w(t_i) - sum_{j<=i} w_j G1[i][j] y(s_j)
// with G0 = B'P0 and G1 = B'P1; the history weights are applied by the
// simulator, not baked into the tables.
struct FeedbackGains {
  TimeGrid grid;
  int n = 0, m = 0;
  std::vector<Matrix> G0;  // node -> m x n
  std::vector<Matrix> G1;  // node i -> m x ((i+1) n), column block j

  auto g1(int i, int j) const { return G1[i].middleCols(j * n, n); }
};

inline FeedbackGains feedback_gains(const RiccatiSolution& sol) {
  FeedbackGains g;
  g.grid = sol.grid;
  g.n = sol.n;
  g.m = sol.m;
  const int N = sol.grid.N;
  const Matrix Bt = sol.B.transpose();
  g.G0.resize(N + 1);
  g.G1.resize(N + 1);
  for (int i = 0; i <= N; ++i) {
    g.G0[i] = Bt * sol.P0[i];
    g.G1[i].resize(sol.m, (i + 1) * sol.n);
    for (int j = 0; j <= i; ++j)
      g.G1[i].middleCols(j * sol.n, sol.n) = Bt * sol.p1(i, j);
  }
  return g;
}

// Residuals of the three component equations, measured on the discrete
// solution itself.  The P0 equation has no history variable and is checked
// in strong form at every node.  The P1 and P2 equations are paired against
// test functions phi(s) e_d with phi in {1, s/T, (s/T)^2} that vanish at the
// two nodes nearest the moving boundary s = t, so the time derivative at
// fixed s is a plain centered difference (one-sided second-order stencils at
// the interval ends).  The diagonal couplings P1[i], P2[.][i] appear as
// ordinary matrix entries; no distributional term is ever discretized.
struct DREResiduals {
  double p0_eq = 0.0;
  double p1_eq = 0.0;
  double p2_eq = 0.0;
};

inline DREResiduals dre_residual(const RiccatiSolution& sol,
                                 const ProblemInstance& p) {
  const TimeGrid grid = p.grid();
  const int N = grid.N, n = p.n;
  const double h = grid.h;
  if (sol.grid.N != N || sol.n != n)
    throw ValidationError("riccati solution does not match the instance grid");
  const Matrix At = p.A.transpose();
  const Matrix BBt = p.B * p.B.transpose();
  const KernelTable K(p.kernel, grid, n);
  const bool memoryless = p.kernel.is_zero();

  DREResiduals r;

  // P0 equation, strong form from the persisted nodes.
  for (int i = 0; i <= N; ++i) {
    Matrix dt;
    if (i == 0)
      dt = (-3.0 * sol.P0[0] + 4.0 * sol.P0[1] - sol.P0[2]) / (2.0 * h);
    else if (i == N)
      dt = (3.0 * sol.P0[N] - 4.0 * sol.P0[N - 1] + sol.P0[N - 2]) /
           (2.0 * h);
    else
      dt = (sol.P0[i + 1] - sol.P0[i - 1]) / (2.0 * h);
    const Matrix p1d = sol.p1(i, i);
    const Matrix res = dt + At * sol.P0[i] + sol.P0[i] * p.A + p.Q -
                       sol.P0[i] * BBt * sol.P0[i] + p1d + p1d.transpose();
    r.p0_eq = std::max(r.p0_eq, max_abs(res));
  }
  if (memoryless || N < 2) return r;

  // Test basis over the history variable, normalized by the horizon.
  auto phi = [&](int b, int j) {
    const double sigma = grid.node(j) / grid.T;
    return b == 0 ? 1.0 : (b == 1 ? sigma : sigma * sigma);
  };

  // The P1 and P2 residuals need three consecutive P2 slices; the march is
  // replayed (same arithmetic, same scheme) with a rolling window of copies.
  std::deque<std::pair<int, Matrix>> win;  // front = largest node

  auto eval_at = [&](int c, const Matrix& Sm, const Matrix& Sc,
                     const Matrix& Sp, bool one_sided) {
    const int jmax = c - 2;
    if (jmax < 0) return;
    const std::vector<double> w = trap_weights(0, c, h);
    const Matrix M0 = At - sol.P0[c] * BBt;

    Matrix acc1[3];
    for (auto& a : acc1) a = Matrix::Zero(n, n);
    Matrix acc2[3][3];
    for (auto& row : acc2)
      for (auto& a : row) a = Matrix::Zero(n, n);

    std::vector<Matrix> S(jmax + 1);
    for (int j = 0; j <= jmax; ++j) {
      Matrix dt1;
      if (one_sided)
        dt1 = (3.0 * sol.p1(c, j) - 4.0 * sol.p1(c - 1, j) +
               sol.p1(c - 2, j)) /
              (2.0 * h);
      else
        dt1 = (sol.p1(c + 1, j) - sol.p1(c - 1, j)) / (2.0 * h);
      const Matrix res1 = dt1 + M0 * sol.p1(c, j) +
                          K.rmul(sol.P0[c], c - j) +
                          Sc.block(j * n, c * n, n, n);
      for (int b = 0; b < 3; ++b) acc1[b] += w[j] * phi(b, j) * res1;
      S[j] = BBt * Matrix(sol.p1(c, j));
    }
    for (int b = 0; b < 3; ++b) r.p1_eq = std::max(r.p1_eq, max_abs(acc1[b]));

    for (int j = 0; j <= jmax; ++j) {
      const Matrix P1j = sol.p1(c, j);
      for (int k = 0; k <= jmax; ++k) {
        const Matrix P1kt = sol.p1(c, k).transpose();
        Matrix dt2;
        if (one_sided)
          dt2 = (3.0 * Sc.block(j * n, k * n, n, n) -
                 4.0 * Sm.block(j * n, k * n, n, n) +
                 Sp.block(j * n, k * n, n, n)) /
                (2.0 * h);
        else
          dt2 = (Sp.block(j * n, k * n, n, n) -
                 Sm.block(j * n, k * n, n, n)) /
                (2.0 * h);
        const Matrix res2 = dt2 + K.lmul(c - k, P1j) +
                            K.rmul(P1kt, c - j) - P1kt * S[j];
        for (int b1 = 0; b1 < 3; ++b1)
          for (int b2 = 0; b2 < 3; ++b2)
            acc2[b1][b2] += w[j] * w[k] * phi(b1, j) * phi(b2, k) * res2;
      }
    }
    for (auto& row : acc2)
      for (auto& a : row) r.p2_eq = std::max(r.p2_eq, max_abs(a));
  };

  RiccatiObserver collect = [&](const RiccatiState& st) {
    const int dv = (st.node + 1) * n;
    win.emplace_front(st.node, Matrix(st.P2.topLeftCorner(dv, dv)));
    if (win.size() > 3) win.pop_back();
    if (win.size() < 3) return;
    // win = {i, i+1, i+2} with i = st.node.
    const Matrix& lower = win[0].second;
    const Matrix& mid = win[1].second;
    const Matrix& upper = win[2].second;
    if (st.node + 2 == N)
      // One-sided at the terminal node: slices N, N-1, N-2.
      eval_at(N, mid, upper, lower, /*one_sided=*/true);
    const int c = st.node + 1;
    if (c >= 2 && c <= N - 1)
      eval_at(c, lower, mid, upper, /*one_sided=*/false);
  };
  integrate_backward(p, nullptr, sol.scheme, {}, collect);
  return r;
}

}  // namespace memlqr
