#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memlqr/types.hpp"

namespace memlqr {

enum class KernelType { Zero, Constant, Exponential, ScalarSamples, MatrixSamples };

// Convolution kernel K(.) of the memory term.  Scalar kinds act as
// K(t) * Identity; the matrix kind stores one n x n value per grid node and
// must commute with A (checked by the problem validator).  Closed-form kinds
// are sampled at the grid nodes once so that K(t_i - s_j) is always the
// node-exact value K[i - j]: on a uniform grid differences of nodes are
// nodes again, which keeps every convolution weight aligned.
struct MemoryKernel {
  KernelType type = KernelType::Zero;
  double c = 0.0;      // amplitude for Constant / Exponential
  double gamma = 0.0;  // decay rate for Exponential
  std::vector<double> scalar_samples;  // ScalarSamples: values at t_0..t_N
  std::vector<Matrix> matrix_samples;  // MatrixSamples: values at t_0..t_N

  bool is_scalar() const { return type != KernelType::MatrixSamples; }

  bool is_zero() const {
    switch (type) {
      case KernelType::Zero:
        return true;
      case KernelType::Constant:
      case KernelType::Exponential:
        return c == 0.0;
      case KernelType::ScalarSamples:
        for (double v : scalar_samples)
          if (v != 0.0) return false;
        return true;
      case KernelType::MatrixSamples:
        for (const Matrix& M : matrix_samples)
          if (max_abs(M) != 0.0) return false;
        return true;
    }
    return false;
  }

  double scalar_value(double t) const {
    switch (type) {
      case KernelType::Zero:
        return 0.0;
      case KernelType::Constant:
        return c;
      case KernelType::Exponential:
        return c * std::exp(-gamma * t);
      default:
        throw std::logic_error("scalar_value: sampled kernel needs a node index");
    }
  }

  std::string type_name() const {
    switch (type) {
      case KernelType::Zero: return "zero";
      case KernelType::Constant: return "constant";
      case KernelType::Exponential: return "exponential";
      case KernelType::ScalarSamples: return "samples";
      case KernelType::MatrixSamples: return "matrix_samples";
    }
    return "?";
  }
};

// Node-sampled view of a kernel on a fixed grid.  Keeps the scalar/matrix
// split so that scalar kernels multiply blocks instead of forming K*I
// products everywhere.
struct KernelTable {
  bool scalar = true;
  int n = 0;
  std::vector<double> ks;   // scalar samples k_0..k_N
  std::vector<Matrix> km;   // matrix samples

  KernelTable() = default;
  KernelTable(const MemoryKernel& kernel, const TimeGrid& grid, int dim)
      : scalar(kernel.is_scalar()), n(dim) {
    if (scalar) {
      ks.resize(grid.N + 1);
      if (kernel.type == KernelType::ScalarSamples) {
        ks = kernel.scalar_samples;
      } else {
        for (int i = 0; i <= grid.N; ++i) ks[i] = kernel.scalar_value(grid.node(i));
      }
    } else {
      km = kernel.matrix_samples;
    }
  }

  // K(t_idx) as a dense matrix (scalar kernels expand to k * I).
  Matrix mat(int idx) const {
    if (scalar) return ks[idx] * Matrix::Identity(n, n);
    return km[idx];
  }

  // K(t_idx) * M and M * K(t_idx) without forming k * I.
  Matrix lmul(int idx, const Matrix& M) const {
    if (scalar) return ks[idx] * M;
    return km[idx] * M;
  }
  Matrix rmul(const Matrix& M, int idx) const {
    if (scalar) return ks[idx] * M;
    return M * km[idx];
  }

  Vector apply(int idx, const Vector& v) const {
    if (scalar) return ks[idx] * v;
    return km[idx] * v;
  }
};

}  // namespace memlqr
