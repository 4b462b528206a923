#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace memlqr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy mirrors the CLI exit codes: 1 parse, 2 validation,
// 3 numerical.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Uniform grid t_i = i * h, i = 0..N, with h = T / N.
struct TimeGrid {
  int N = 0;
  double T = 0.0;
  double h = 0.0;

  TimeGrid() = default;
  TimeGrid(int steps, double horizon)
      : N(steps), T(horizon), h(horizon / steps) {}

  double node(int i) const { return h * i; }
};

struct Tolerances {
  double sym_tol = 1e-10;
  double psd_tol = 1e-10;
  double commute_tol = 1e-10;
  double drift_tol = 1e-8;
};

// Trapezoid weight of node j for integration over [t_a, t_b], a <= j <= b.
// An empty interval (a == b) integrates to zero.
inline double trap_weight(int j, int a, int b, double h) {
  if (b <= a) return 0.0;
  return (j == a || j == b) ? 0.5 * h : h;
}

// All weights for [t_a, t_b] at once, indexed j - a.
inline std::vector<double> trap_weights(int a, int b, double h) {
  std::vector<double> w(static_cast<size_t>(b - a) + 1);
  for (int j = a; j <= b; ++j) w[j - a] = trap_weight(j, a, b, h);
  return w;
}

inline double max_abs(const Matrix& M) {
  return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff();
}

}  // namespace memlqr
