#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "memlqr/problem.hpp"

namespace memlqr {

namespace detail {

using nlohmann::json;

inline Matrix matrix_from_flat(const json& arr, int rows, int cols,
                               const std::string& name) {
  if (!arr.is_array())
    throw ParseError("field '" + name + "' must be an array of numbers");
  if (static_cast<int>(arr.size()) != rows * cols)
    throw ValidationError("dimension mismatch: '" + name + "' must hold " +
                          std::to_string(rows * cols) +
                          " row-major entries, got " +
                          std::to_string(arr.size()));
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const json& v = arr[static_cast<size_t>(i) * cols + j];
      if (!v.is_number())
        throw ParseError("field '" + name + "' must contain only numbers");
      M(i, j) = v.get<double>();
    }
  return M;
}

inline std::vector<double> matrix_to_flat(const Matrix& M) {
  std::vector<double> out;
  out.reserve(M.size());
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) out.push_back(M(i, j));
  return out;
}

template <typename T>
T require(const json& j, const std::string& key) {
  if (!j.contains(key)) throw ParseError("missing required field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError("field '" + key + "' has the wrong type");
  }
}

inline MemoryKernel kernel_from_json(const json& jk, int n, int N) {
  if (!jk.is_object()) throw ParseError("field 'kernel' must be an object");
  MemoryKernel k;
  const std::string type = require<std::string>(jk, "type");
  if (type == "zero") {
    k.type = KernelType::Zero;
  } else if (type == "constant") {
    k.type = KernelType::Constant;
    k.c = require<double>(jk, "c");
  } else if (type == "exponential") {
    k.type = KernelType::Exponential;
    k.c = require<double>(jk, "c");
    k.gamma = require<double>(jk, "gamma");
  } else if (type == "samples") {
    if (!jk.contains("values") || !jk.at("values").is_array())
      throw ParseError("sampled kernel needs an array field 'values'");
    const json& vals = jk.at("values");
    if (!vals.empty() && vals.front().is_array()) {
      k.type = KernelType::MatrixSamples;
      for (const json& v : vals)
        k.matrix_samples.push_back(matrix_from_flat(v, n, n, "kernel.values"));
    } else {
      k.type = KernelType::ScalarSamples;
      for (const json& v : vals) {
        if (!v.is_number())
          throw ParseError("kernel values must be numbers or row-major arrays");
        k.scalar_samples.push_back(v.get<double>());
      }
    }
  } else {
    throw ParseError("unknown kernel type '" + type + "'");
  }
  (void)N;
  return k;
}

inline json kernel_to_json(const MemoryKernel& k) {
  json jk;
  jk["type"] = k.type_name();
  switch (k.type) {
    case KernelType::Constant:
      jk["c"] = k.c;
      break;
    case KernelType::Exponential:
      jk["c"] = k.c;
      jk["gamma"] = k.gamma;
      break;
    case KernelType::ScalarSamples:
      jk["values"] = k.scalar_samples;
      break;
    case KernelType::MatrixSamples: {
      json vals = json::array();
      for (const Matrix& M : k.matrix_samples) vals.push_back(matrix_to_flat(M));
      jk["type"] = "samples";
      jk["values"] = vals;
      break;
    }
    default:
      break;
  }
  return jk;
}

}  // namespace detail

inline ProblemInstance problem_from_json(const nlohmann::json& j) {
  using detail::require;
  if (!j.is_object()) throw ParseError("problem file must hold a JSON object");

  ProblemInstance p;

  if (j.contains("builder")) {
    const std::string b = require<std::string>(j, "builder");
    if (b == "heat") {
      p = build_heat_system(require<int>(j, "n_space"), require<double>(j, "nu"),
                            require<double>(j, "gamma"), require<double>(j, "c"),
                            require<double>(j, "T"), require<int>(j, "N"));
    } else if (b == "random") {
      p = build_random_stable(require<int>(j, "n"), require<int>(j, "m"),
                              require<std::uint64_t>(j, "seed"),
                              require<double>(j, "T"), require<int>(j, "N"));
    } else {
      throw ParseError("unknown builder '" + b + "'");
    }
  } else {
    p.n = require<int>(j, "n");
    p.m = require<int>(j, "m");
    p.T = require<double>(j, "T");
    p.N = require<int>(j, "N");
    if (p.n <= 0 || p.m <= 0) throw ValidationError("n and m must be positive");
    if (p.N <= 0) throw ValidationError("N must be positive");
    for (const char* key : {"A", "B", "Q", "kernel"})
      if (!j.contains(key))
        throw ParseError(std::string("missing required field '") + key + "'");
    p.A = detail::matrix_from_flat(j.at("A"), p.n, p.n, "A");
    p.B = detail::matrix_from_flat(j.at("B"), p.n, p.m, "B");
    p.Q = detail::matrix_from_flat(j.at("Q"), p.n, p.n, "Q");
    p.kernel = detail::kernel_from_json(j.at("kernel"), p.n, p.N);
    p.init.xi0 = Vector::Zero(p.n);
  }

  const TimeGrid grid = p.grid();

  if (j.contains("tau")) {
    const double tau = require<double>(j, "tau");
    const int idx = static_cast<int>(std::lround(tau / grid.h));
    if (std::abs(tau - grid.node(idx)) > 1e-9 * std::max(1.0, p.T))
      throw ValidationError("tau must sit on a grid node");
    p.init.tau_index = idx;
  }

  if (j.contains("xi0")) {
    p.init.xi0 =
        detail::matrix_from_flat(j.at("xi0"), p.n, 1, "xi0").col(0);
  }

  if (j.contains("history")) {
    p.init.history.clear();
    if (!j.at("history").is_array())
      throw ParseError("field 'history' must be an array of node samples");
    for (const nlohmann::json& row : j.at("history"))
      p.init.history.push_back(
          detail::matrix_from_flat(row, p.n, 1, "history").col(0));
  }

  if (j.contains("tolerances")) {
    const nlohmann::json& jt = j.at("tolerances");
    if (!jt.is_object()) throw ParseError("field 'tolerances' must be an object");
    if (jt.contains("sym_tol")) p.tol.sym_tol = require<double>(jt, "sym_tol");
    if (jt.contains("psd_tol")) p.tol.psd_tol = require<double>(jt, "psd_tol");
    if (jt.contains("commute_tol"))
      p.tol.commute_tol = require<double>(jt, "commute_tol");
    if (jt.contains("drift_tol")) p.tol.drift_tol = require<double>(jt, "drift_tol");
  }

  validate(p);
  return p;
}

inline nlohmann::json problem_to_json(const ProblemInstance& p) {
  nlohmann::json j;
  j["n"] = p.n;
  j["m"] = p.m;
  j["A"] = detail::matrix_to_flat(p.A);
  j["B"] = detail::matrix_to_flat(p.B);
  j["Q"] = detail::matrix_to_flat(p.Q);
  j["kernel"] = detail::kernel_to_json(p.kernel);
  j["T"] = p.T;
  j["N"] = p.N;
  j["tau"] = p.grid().node(p.init.tau_index);
  j["xi0"] = detail::matrix_to_flat(p.init.xi0);
  if (!p.init.history.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const Vector& v : p.init.history) rows.push_back(detail::matrix_to_flat(v));
    j["history"] = rows;
  }
  j["tolerances"] = {{"sym_tol", p.tol.sym_tol},
                     {"psd_tol", p.tol.psd_tol},
                     {"commute_tol", p.tol.commute_tol},
                     {"drift_tol", p.tol.drift_tol}};
  return j;
}

inline ProblemInstance load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open problem file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  return problem_from_json(j);
}

inline void save_problem(const ProblemInstance& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write problem file '" + path + "'");
  // nlohmann emits shortest round-trip decimals, so save -> load is bit-exact.
  out << problem_to_json(p).dump(2) << "\n";
}

// FNV-1a over the canonical serialization; stable label for reports.
inline std::string instance_digest(const ProblemInstance& p) {
  const std::string s = problem_to_json(p).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace memlqr
