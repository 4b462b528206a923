#pragma once

#include <ostream>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "memlqr/problem.hpp"

namespace memlqr {

// Node tables of the propagator family generated by (A, K) on the grid:
//
//   E_i            = exp(t_i A)
//   mu_i           = int_0^{t_i} e^{(t_i-s)A} K(s) ds
//   R              solves R - mu (*) R = -mu        ((*) = convolution)
//   F[i][j]        = E_{i-j} - int_{t_j}^{t_i} R(t_i-s) e^{(s-t_j)A} ds
//
// All convolution quadratures are trapezoidal on the node set, so on the
// uniform grid every kernel difference t_i - s_j is again a node and the
// tables close over themselves exactly.
struct PropagatorTables {
  TimeGrid grid;
  int n = 0;
  KernelTable K;
  std::vector<Matrix> E;                // E[i], i = 0..N
  std::vector<Matrix> mu;               // mu[i], i = 0..N
  std::vector<Matrix> R;                // R[i], i = 0..N
  std::vector<std::vector<Matrix>> F;   // F[i][j], 0 <= j <= i <= N
  bool resolvent_large = false;         // set when ||R||_max exceeds 1e6
};

// History-to-state kernels rebased at node tau:
//   G[i][j] = mu_{i-j} - E_{i-tau} mu_{tau-j}
//   M[i][j] = G[i][j] - int_{tau}^{t_i} R(t_i-s) G(s, s_j, tau) ds
// for tau <= i <= N, 0 <= j <= tau.
struct HistoryTables {
  int tau_index = 0;
  std::vector<std::vector<Matrix>> G;  // G[i - tau][j]
  std::vector<std::vector<Matrix>> M;  // M[i - tau][j]

  const Matrix& g(int i, int j) const { return G[i - tau_index][j]; }
  const Matrix& m(int i, int j) const { return M[i - tau_index][j]; }
};

inline PropagatorTables compute_tables(const ProblemInstance& p) {
  PropagatorTables t;
  t.grid = p.grid();
  t.n = p.n;
  t.K = KernelTable(p.kernel, t.grid, p.n);
  const int N = t.grid.N;
  const double h = t.grid.h;
  const Matrix I = Matrix::Identity(p.n, p.n);

  // Semigroup: one scaling-and-squaring exponential for the single step,
  // then powers.  exp((i h) A) = exp(h A)^i exactly in exact arithmetic.
  t.E.resize(N + 1);
  t.E[0] = I;
  const Matrix E1 = (h * p.A).exp();
  for (int i = 1; i <= N; ++i) t.E[i] = t.E[i - 1] * E1;

  // mu_i by trapezoid over [0, t_i]; mu_0 = 0 by the empty integral.
  t.mu.assign(N + 1, Matrix::Zero(p.n, p.n));
  for (int i = 1; i <= N; ++i) {
    Matrix acc = Matrix::Zero(p.n, p.n);
    for (int j = 0; j <= i; ++j)
      acc += trap_weight(j, 0, i, h) * t.K.rmul(t.E[i - j], j);
    t.mu[i] = acc;
  }

  // Resolvent by forward substitution.  The j = i term of the trapezoid
  // carries mu_0 = 0, so the diagonal never feeds back and each R_i is
  // explicit:  R_i = -mu_i + sum_{j<i} w_j mu_{i-j} R_j.
  t.R.assign(N + 1, Matrix::Zero(p.n, p.n));
  for (int i = 1; i <= N; ++i) {
    Matrix acc = -t.mu[i];
    for (int j = 1; j < i; ++j) acc += h * t.mu[i - j] * t.R[j];
    t.R[i] = acc;  // j = 0 carries R_0 = 0, j = i carries mu_0 = 0
  }
  for (int i = 0; i <= N; ++i)
    if (max_abs(t.R[i]) > 1e6) t.resolvent_large = true;

  // F[i][j]; the k = i term carries R_0 = 0 and the empty sum at i = j
  // leaves F[i][i] = E_0 = I exactly.
  t.F.resize(N + 1);
  for (int i = 0; i <= N; ++i) {
    t.F[i].resize(i + 1);
    for (int j = 0; j <= i; ++j) {
      Matrix acc = t.E[i - j];
      for (int k = j; k < i; ++k)
        acc -= trap_weight(k, j, i, h) * t.R[i - k] * t.E[k - j];
      t.F[i][j] = acc;
    }
  }
  return t;
}

// Max-norm defect of the discrete resolvent equation; forward substitution
// makes this roundoff-level by construction.
inline double resolvent_residual(const PropagatorTables& t) {
  const int N = t.grid.N;
  const double h = t.grid.h;
  double worst = 0.0;
  for (int i = 0; i <= N; ++i) {
    Matrix conv = Matrix::Zero(t.n, t.n);
    for (int j = 0; j <= i; ++j)
      conv += trap_weight(j, 0, i, h) * t.mu[i - j] * t.R[j];
    worst = std::max(worst, max_abs(t.R[i] - conv + t.mu[i]));
  }
  return worst;
}

inline HistoryTables compute_history_tables(const PropagatorTables& t, int tau) {
  HistoryTables ht;
  ht.tau_index = tau;
  const int N = t.grid.N;
  const double h = t.grid.h;
  ht.G.resize(N - tau + 1);
  ht.M.resize(N - tau + 1);
  for (int i = tau; i <= N; ++i) {
    ht.G[i - tau].resize(tau + 1);
    for (int j = 0; j <= tau; ++j)
      ht.G[i - tau][j] = t.mu[i - j] - t.E[i - tau] * t.mu[tau - j];
  }
  for (int i = tau; i <= N; ++i) {
    ht.M[i - tau].resize(tau + 1);
    for (int j = 0; j <= tau; ++j) {
      Matrix acc = ht.G[i - tau][j];
      for (int k = tau; k < i; ++k)
        acc -= trap_weight(k, tau, i, h) * t.R[i - k] * ht.G[k - tau][j];
      ht.M[i - tau][j] = acc;  // k = i term vanishes with R_0 = 0
    }
  }
  return ht;
}

// Centered differences of the tables reproduce the defining differential
// identities to O(h^2):
//   mu'(t)            = K(t) + mu(t) A
//   R'(t)             = -K(t) + R(t) A + int_0^t K(t - s) R(s) ds
//   d/dtau F(t,tau)   = -F(t,tau) A + R(t - tau)
//   d/dtau M(t,s,tau) = -F(t,tau) K(tau - s)
// Each field is the max-norm defect over all interior stencils.
struct IdentityResiduals {
  double mu_eq = 0.0;
  double r_eq = 0.0;
  double f_eq = 0.0;
  double m_eq = 0.0;
};

inline IdentityResiduals identity_residuals(const ProblemInstance& p,
                                            const PropagatorTables& t,
                                            int tau) {
  const int N = t.grid.N;
  const double h = t.grid.h;
  if (tau < 1 || tau + 1 > N)
    throw ValidationError(
        "identity residuals need an interior rebasement node");
  IdentityResiduals out;

  for (int i = 1; i < N; ++i) {
    const Matrix dmu = (t.mu[i + 1] - t.mu[i - 1]) / (2.0 * h);
    out.mu_eq = std::max(out.mu_eq,
                         max_abs(dmu - t.K.mat(i) - t.mu[i] * p.A));

    const Matrix dR = (t.R[i + 1] - t.R[i - 1]) / (2.0 * h);
    Matrix conv = Matrix::Zero(p.n, p.n);
    for (int j = 0; j <= i; ++j)
      conv += trap_weight(j, 0, i, h) * t.K.lmul(i - j, t.R[j]);
    out.r_eq = std::max(out.r_eq,
                        max_abs(dR + t.K.mat(i) - t.R[i] * p.A - conv));
  }

  for (int i = 2; i <= N; ++i)
    for (int j = 1; j < i; ++j) {
      const Matrix dF = (t.F[i][j + 1] - t.F[i][j - 1]) / (2.0 * h);
      out.f_eq = std::max(out.f_eq,
                          max_abs(dF + t.F[i][j] * p.A - t.R[i - j]));
    }

  const HistoryTables lo = compute_history_tables(t, tau - 1);
  const HistoryTables hi = compute_history_tables(t, tau + 1);
  for (int i = tau + 1; i <= N; ++i)
    for (int j = 0; j < tau; ++j) {
      const Matrix dM = (hi.m(i, j) - lo.m(i, j)) / (2.0 * h);
      out.m_eq = std::max(out.m_eq,
                          max_abs(dM + t.F[i][tau] * t.K.mat(tau - j)));
    }
  return out;
}

inline IdentityResiduals identity_residuals(const ProblemInstance& p,
                                            int tau) {
  return identity_residuals(p, compute_tables(p), tau);
}

// Binary table dump.  Layout (little-endian throughout):
//   magic "MLQR1" (5 bytes), uint32 n, uint32 N, float64 h,
//   then sections E, mu, R (N+1 matrices each) and F (rows i = 0..N,
//   entries j = 0..i), every matrix as n*n row-major float64.
inline void dump_tables(std::ostream& out, const PropagatorTables& t) {
  out.write("MLQR1", 5);
  const std::uint32_t n32 = static_cast<std::uint32_t>(t.n);
  const std::uint32_t N32 = static_cast<std::uint32_t>(t.grid.N);
  out.write(reinterpret_cast<const char*>(&n32), 4);
  out.write(reinterpret_cast<const char*>(&N32), 4);
  out.write(reinterpret_cast<const char*>(&t.grid.h), 8);
  auto put = [&](const Matrix& M) {
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j) {
        const double v = M(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  };
  for (const Matrix& M : t.E) put(M);
  for (const Matrix& M : t.mu) put(M);
  for (const Matrix& M : t.R) put(M);
  for (const auto& row : t.F)
    for (const Matrix& M : row) put(M);
}

}  // namespace memlqr
