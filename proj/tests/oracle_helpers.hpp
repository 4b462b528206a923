#pragma once

// Reference values and independent mini-solvers used to cross-check the
// library. Everything in this header is deliberately self-contained (plain
// Eigen + <cmath>): none of it calls into memlqr/, so a bug in the library
// cannot leak into its own expected values.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// ----- closed forms -------------------------------------------------------

// Scalar Riccati p' = p^2 - 1 backward from p(T) = 0 has p(t) = tanh(T - t),
// so the memoryless instance (n = 1, A = 0, B = 1, Q = 1) costs
// J = p(0) * xi0^2 = tanh(T) for xi0 = 1.
inline double tanh_profile(double T, double t) { return std::tanh(T - t); }

inline constexpr double kTanh1 = 0.76159415595576485;  // tanh(1), frozen

// Resolvent of the convolution equation R - mu * R = -mu for a constant
// scalar kernel K = c with A = 0 (so mu(t) = c t).  Laplace transform:
// mu_hat = c / s^2, R_hat = -mu_hat / (1 - mu_hat) = -c / (s^2 - c), hence
//   c > 0:  R(t) = -sqrt(c)  * sinh(sqrt(c)  t)
//   c < 0:  R(t) = +sqrt(-c) * sin (sqrt(-c) t)
inline double resolvent_constant_kernel(double c, double t) {
  if (c > 0.0) {
    const double r = std::sqrt(c);
    return -r * std::sinh(r * t);
  }
  if (c < 0.0) {
    const double r = std::sqrt(-c);
    return r * std::sin(r * t);
  }
  return 0.0;
}

// State propagator for A = 0, K = -1: F_hat(s) = s / (s^2 + 1), so
// F(t, 0) = cos(t).  Same instance run force-free from w(0) = 1 satisfies
// w'' = -w, i.e. w(t) = cos(t) as well.
inline double cos_propagator(double t) { return std::cos(t); }

// mu(t) = int_0^t e^{(t-s)A} K(s) ds in closed form for scalar data.
inline double mu_scalar_constant(double a, double c, double t) {
  if (a == 0.0) return c * t;
  return c * (std::exp(a * t) - 1.0) / a;
}
inline double mu_scalar_exponential_a0(double c, double gamma, double t) {
  if (gamma == 0.0) return c * t;
  return c * (1.0 - std::exp(-gamma * t)) / gamma;
}

// Interior-Laplacian matrix for the 1-d heat builder with n_space = 3,
// nu = 1: dx = 1/3, A = nu/dx^2 * tridiag(1, -2, 1) on the 2 interior nodes.
inline Eigen::Matrix2d heat_A_nspace3() {
  Eigen::Matrix2d A;
  A << -18.0, 9.0, 9.0, -18.0;
  return A;
}

// ----- independent mini-solvers -------------------------------------------

// Classical RK4 for the matrix Riccati equation
//   P' = -(A^T P + P A + Q - P B B^T P),  P(T) = 0,
// integrated backward on a fine grid.  Used as the reference for the
// memoryless reduction of the coupled system.
inline Eigen::MatrixXd riccati_rk4_reference(const Eigen::MatrixXd& A,
                                             const Eigen::MatrixXd& B,
                                             const Eigen::MatrixXd& Q,
                                             double T, double t_eval,
                                             int steps) {
  const int n = static_cast<int>(A.rows());
  auto deriv = [&](const Eigen::MatrixXd& P) -> Eigen::MatrixXd {
    return -(A.transpose() * P + P * A + Q - P * B * B.transpose() * P);
  };
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  const double dt = (T - t_eval) / steps;
  double t = T;
  for (int k = 0; k < steps; ++k) {
    // Backward march: step size -dt in forward time.
    const Eigen::MatrixXd k1 = deriv(P);
    const Eigen::MatrixXd k2 = deriv(P - 0.5 * dt * k1);
    const Eigen::MatrixXd k3 = deriv(P - 0.5 * dt * k2);
    const Eigen::MatrixXd k4 = deriv(P - dt * k3);
    P -= (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t -= dt;
  }
  return P;
}

// Truncated iterated-kernel series for the resolvent of R - mu * R = -mu:
//   R = -mu - mu*mu - mu*mu*mu - ...   (* = convolution on [0, t])
// evaluated with trapezoid convolutions on the same uniform grid the library
// uses.  Scalar-valued; three terms.
inline std::vector<double> resolvent_series3(const std::vector<double>& mu,
                                             double h) {
  const int N = static_cast<int>(mu.size()) - 1;
  auto conv = [&](const std::vector<double>& f, const std::vector<double>& g) {
    std::vector<double> out(N + 1, 0.0);
    for (int i = 1; i <= N; ++i) {
      double s = 0.0;
      for (int j = 0; j <= i; ++j) {
        const double w = (j == 0 || j == i) ? 0.5 * h : h;
        s += w * f[i - j] * g[j];
      }
      out[i] = s;
    }
    return out;
  };
  const std::vector<double> mu2 = conv(mu, mu);
  const std::vector<double> mu3 = conv(mu2, mu);
  std::vector<double> R(N + 1, 0.0);
  for (int i = 0; i <= N; ++i) R[i] = -mu[i] - mu2[i] - mu3[i];
  return R;
}

// Deterministic pseudo-random vectors for probe directions.  splitmix64 is
// platform-stable: no library distribution objects involved.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

inline Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
  std::uint64_t s = seed;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = 2.0 * uniform01(s) - 1.0;
  return v;
}

// Observed convergence order from errors at two resolutions.
inline double observed_order(double err_coarse, double err_fine,
                             double ratio) {
  return std::log(err_coarse / err_fine) / std::log(ratio);
}

}  // namespace oracle
