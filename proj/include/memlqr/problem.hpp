#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "memlqr/kernel.hpp"
#include "memlqr/types.hpp"

namespace memlqr {

// Initial datum of the controlled run: the state xi0 at t_tau plus the
// recorded past xi(s) on [0, t_tau].  history holds tau_index + 1 node
// samples (empty when tau_index == 0: there is no past to remember).
struct InitialData {
  int tau_index = 0;
  Vector xi0;
  std::vector<Vector> history;
};

// One well-posed instance of the memory-LQ problem
//   w' = A w + int K(t-s) w(s) ds + B u,   J = int (<Q w, w> + |u|^2) dt
// on [t_tau, T] with a uniform N-step grid.
struct ProblemInstance {
  int n = 0;
  int m = 0;
  Matrix A, B, Q;
  MemoryKernel kernel;
  double T = 0.0;
  int N = 0;
  InitialData init;
  Tolerances tol;

  TimeGrid grid() const { return TimeGrid(N, T); }
};

inline void validate(const ProblemInstance& p) {
  auto fail = [](const std::string& what) { throw ValidationError(what); };

  if (p.n <= 0) fail("state dimension n must be positive");
  if (p.m <= 0) fail("control dimension m must be positive");
  if (!(p.T > 0.0)) fail("horizon T must be positive");
  if (p.N < 2) fail("grid size N must be at least 2");

  if (p.A.rows() != p.n || p.A.cols() != p.n)
    fail("dimension mismatch: A must be n x n");
  if (p.B.rows() != p.n || p.B.cols() != p.m)
    fail("dimension mismatch: B must be n x m");
  if (p.Q.rows() != p.n || p.Q.cols() != p.n)
    fail("dimension mismatch: Q must be n x n");

  if (!p.A.allFinite() || !p.B.allFinite() || !p.Q.allFinite())
    fail("matrix entries must be finite");

  if (max_abs(p.Q - p.Q.transpose()) > p.tol.sym_tol)
    fail("Q symmetry violated beyond sym_tol");
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (p.Q + p.Q.transpose()));
    if (es.eigenvalues().minCoeff() < -p.tol.psd_tol)
      fail("Q positive semidefiniteness violated beyond psd_tol");
  }

  switch (p.kernel.type) {
    case KernelType::ScalarSamples:
      if (static_cast<int>(p.kernel.scalar_samples.size()) != p.N + 1)
        fail("kernel samples must provide one value per grid node (N+1)");
      for (double v : p.kernel.scalar_samples)
        if (!std::isfinite(v)) fail("kernel samples must be finite");
      break;
    case KernelType::MatrixSamples: {
      if (static_cast<int>(p.kernel.matrix_samples.size()) != p.N + 1)
        fail("kernel samples must provide one value per grid node (N+1)");
      for (const Matrix& K : p.kernel.matrix_samples) {
        if (K.rows() != p.n || K.cols() != p.n)
          fail("dimension mismatch: matrix kernel samples must be n x n");
        if (!K.allFinite()) fail("kernel samples must be finite");
        // The propagator construction interchanges K with the semigroup of A,
        // so a matrix-valued kernel is accepted only when it commutes with A.
        if (max_abs(K * p.A - p.A * K) > p.tol.commute_tol)
          fail("matrix kernel does not commute with A beyond commute_tol");
      }
      break;
    }
    default:
      break;
  }

  const int tau = p.init.tau_index;
  if (tau < 0 || tau >= p.N)
    fail("tau must be a grid node index in [0, N)");
  if (p.init.xi0.size() != p.n) fail("dimension mismatch: xi0 must have length n");
  if (!p.init.xi0.allFinite()) fail("xi0 must be finite");
  if (tau == 0) {
    if (!p.init.history.empty()) fail("history must be empty when tau = 0");
  } else {
    if (static_cast<int>(p.init.history.size()) != tau + 1)
      fail("history must hold tau_index + 1 node samples");
    for (const Vector& v : p.init.history) {
      if (v.size() != p.n) fail("dimension mismatch: history samples must have length n");
      if (!v.allFinite()) fail("history samples must be finite");
    }
  }
}

// ----- builders ------------------------------------------------------------

// 1-d heat rod on (0,1), Dirichlet ends, n_space subintervals: the interior
// nodes carry A = nu/dx^2 * tridiag(1,-2,1), distributed control B = I, and
// Q = dx * I (the L2 mass of the grid), with K(t) = c * exp(-gamma t).
inline ProblemInstance build_heat_system(int n_space, double nu, double gamma,
                                         double c, double T, int N) {
  if (n_space < 2) throw ValidationError("heat builder needs n_space >= 2");
  const int n = n_space - 1;
  const double dx = 1.0 / n_space;

  ProblemInstance p;
  p.n = n;
  p.m = n;
  p.A = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    p.A(i, i) = -2.0 * nu / (dx * dx);
    if (i > 0) p.A(i, i - 1) = nu / (dx * dx);
    if (i + 1 < n) p.A(i, i + 1) = nu / (dx * dx);
  }
  p.B = Matrix::Identity(n, n);
  p.Q = dx * Matrix::Identity(n, n);
  p.kernel.type = KernelType::Exponential;
  p.kernel.c = c;
  p.kernel.gamma = gamma;
  p.T = T;
  p.N = N;
  p.init.tau_index = 0;
  // A bump profile as the default initial state; any nonzero vector works.
  p.init.xi0 = Vector(n);
  for (int i = 0; i < n; ++i) {
    const double x = dx * (i + 1);
    p.init.xi0[i] = std::sin(M_PI * x);
  }
  validate(p);
  return p;
}

namespace detail {
// splitmix64: deterministic and platform-stable (no std distributions, whose
// streams vary across standard libraries).
inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline double uniform_pm1(std::uint64_t& s) {
  return 2.0 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53) - 1.0;
}
}  // namespace detail

// Seeded random instance with guaranteed decay: A = -n*I + S with S
// skew-symmetric, so every eigenvalue has real part exactly -n.  Q = C^T C
// keeps the state cost PSD by construction.  Bitwise-reproducible for a
// fixed seed.
inline ProblemInstance build_random_stable(int n, int m, std::uint64_t seed,
                                           double T = 1.0, int N = 100) {
  std::uint64_t s = seed;
  ProblemInstance p;
  p.n = n;
  p.m = m;

  Matrix S = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = detail::uniform_pm1(s);
      S(i, j) = v;
      S(j, i) = -v;
    }
  p.A = -static_cast<double>(n) * Matrix::Identity(n, n) + S;

  p.B = Matrix(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) p.B(i, j) = detail::uniform_pm1(s);

  Matrix C(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) C(i, j) = detail::uniform_pm1(s);
  p.Q = C.transpose() * C;

  p.kernel.type = KernelType::Exponential;
  p.kernel.c = 0.5 + 0.5 * (detail::uniform_pm1(s) * 0.5 + 0.5);
  p.kernel.gamma = 1.0 + (detail::uniform_pm1(s) * 0.5 + 0.5);

  p.T = T;
  p.N = N;
  p.init.tau_index = 0;
  p.init.xi0 = Vector(n);
  for (int i = 0; i < n; ++i) p.init.xi0[i] = detail::uniform_pm1(s);

  validate(p);
  return p;
}

}  // namespace memlqr
