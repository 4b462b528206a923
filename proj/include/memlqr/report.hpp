#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memlqr/problem_io.hpp"

namespace memlqr {

// One verification measurement: a named residual next to the tolerance it
// must meet.  Reports never carry a bare pass/fail bit without the numbers
// behind it.
struct ResidualRow {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline ResidualRow make_row(std::string name, double value, double tolerance) {
  ResidualRow r;
  r.name = std::move(name);
  r.value = value;
  r.tolerance = tolerance;
  r.pass = value <= tolerance;
  return r;
}

// Machine-readable run summary.  Serialization is deterministic: nlohmann
// orders object keys, doubles print as shortest round-trip decimals, and the
// timing block is dropped entirely when disabled, so two runs of the same
// command produce byte-identical files under --no-timing.
struct RunReport {
  std::string command;
  std::string scheme;
  int threads = 1;

  std::string digest;
  int n = 0, m = 0, N = 0;
  double h = 0.0;
  std::string kernel_tag;

  std::map<std::string, double> scalars;
  std::map<std::string, std::string> notes;
  std::vector<ResidualRow> rows;

  bool include_timing = true;
  std::vector<std::pair<std::string, double>> timings;

  void stamp_instance(const ProblemInstance& p) {
    digest = instance_digest(p);
    n = p.n;
    m = p.m;
    N = p.N;
    h = p.grid().h;
    kernel_tag = p.kernel.type_name();
  }

  bool all_pass() const {
    for (const ResidualRow& r : rows)
      if (!r.pass) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = "memlqr-report/1";
    j["command"] = command;
    j["scheme"] = scheme;
    j["threads"] = threads;
    j["instance"] = {{"digest", digest}, {"n", n},       {"m", m},
                     {"N", N},           {"h", h},       {"kernel", kernel_tag}};
    if (!scalars.empty()) j["results"] = scalars;
    if (!notes.empty()) j["notes"] = notes;
    nlohmann::json rws = nlohmann::json::array();
    for (const ResidualRow& r : rows)
      rws.push_back({{"name", r.name},
                     {"value", r.value},
                     {"tolerance", r.tolerance},
                     {"pass", r.pass}});
    j["residuals"] = rws;
    j["pass"] = all_pass();
    if (include_timing) {
      nlohmann::json tm = nlohmann::json::array();
      for (const auto& [phase, seconds] : timings)
        tm.push_back({{"phase", phase}, {"seconds", seconds}});
      j["timing"] = tm;
    }
    return j;
  }

  std::string render_text() const {
    std::string out = "memlqr " + command + " | instance " + digest +
                      " | n=" + std::to_string(n) + " m=" + std::to_string(m) +
                      " N=" + std::to_string(N) + " kernel=" + kernel_tag +
                      " scheme=" + scheme + "\n";
    char buf[160];
    for (const auto& [key, value] : scalars) {
      std::snprintf(buf, sizeof(buf), "  %-28s % .12e\n", key.c_str(), value);
      out += buf;
    }
    for (const auto& [key, note] : notes)
      out += "  " + key + ": " + note + "\n";
    for (const ResidualRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "  [%s] %-28s %.6e <= %.6e\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.value,
                    r.tolerance);
      out += buf;
    }
    out += std::string("RESULT: ") + (all_pass() ? "PASS" : "FAIL") + "\n";
    return out;
  }
};

}  // namespace memlqr
