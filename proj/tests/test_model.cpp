#include "memlqr/problem_io.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "oracle_helpers.hpp"

namespace memlqr {
namespace {

std::string temp_path(const std::string& name) {
  return ::testing::TempDir() + name;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

// A minimal well-posed scalar instance that later cases perturb one field at
// a time.
ProblemInstance scalar_instance() {
  ProblemInstance p;
  p.n = 1;
  p.m = 1;
  p.A = Matrix::Zero(1, 1);
  p.B = Matrix::Identity(1, 1);
  p.Q = Matrix::Identity(1, 1);
  p.kernel.type = KernelType::Zero;
  p.T = 1.0;
  p.N = 100;
  p.init.tau_index = 0;
  p.init.xi0 = Vector::Ones(1);
  return p;
}

GTEST_TEST(ModelTest, TrapezoidWeights) {
  const double h = 0.1;
  // Degenerate interval: every weight vanishes, so empty quadratures stay 0.
  EXPECT_EQ(trap_weight(3, 3, 3, h), 0.0);
  EXPECT_EQ(trap_weight(5, 7, 4, h), 0.0);

  // Endpoints carry h/2, interior nodes h.
  EXPECT_DOUBLE_EQ(trap_weight(2, 2, 6, h), 0.5 * h);
  EXPECT_DOUBLE_EQ(trap_weight(6, 2, 6, h), 0.5 * h);
  EXPECT_DOUBLE_EQ(trap_weight(4, 2, 6, h), h);

  // The weights of [a, b] sum to the interval length (b - a) h.
  const Vector w = trap_weights(2, 6, h);
  ASSERT_EQ(w.size(), 5);
  EXPECT_NEAR(w.sum(), 4.0 * h, 1e-15);
}

GTEST_TEST(ModelTest, TimeGridNodes) {
  const TimeGrid g(100, 2.0);
  EXPECT_EQ(g.N, 100);
  EXPECT_DOUBLE_EQ(g.h, 0.02);
  EXPECT_DOUBLE_EQ(g.node(0), 0.0);
  EXPECT_DOUBLE_EQ(g.node(50), 1.0);
  EXPECT_DOUBLE_EQ(g.node(100), 2.0);
}

GTEST_TEST(ModelTest, ValidateAcceptsWellPosedInstance) {
  EXPECT_NO_THROW(validate(scalar_instance()));
}

GTEST_TEST(ModelTest, ValidateRejectsAsymmetricQ) {
  ProblemInstance p = scalar_instance();
  p.n = 2;
  p.m = 2;
  p.A = Matrix::Zero(2, 2);
  p.B = Matrix::Identity(2, 2);
  p.Q = Matrix::Zero(2, 2);
  p.Q(0, 1) = 1.0;  // [[0,1],[0,0]] breaks symmetry
  p.init.xi0 = Vector::Ones(2);
  try {
    validate(p);
    FAIL() << "asymmetric Q must be rejected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("Q symmetry"), std::string::npos);
  }
}

GTEST_TEST(ModelTest, ValidateRejectsIndefiniteQ) {
  ProblemInstance p = scalar_instance();
  p.Q(0, 0) = -1.0;
  EXPECT_THROW(validate(p), ValidationError);
}

GTEST_TEST(ModelTest, ValidateRejectsBadDimensionsAndGrid) {
  {
    ProblemInstance p = scalar_instance();
    p.B = Matrix::Identity(2, 2);
    EXPECT_THROW(validate(p), ValidationError);
  }
  {
    ProblemInstance p = scalar_instance();
    p.N = 1;
    EXPECT_THROW(validate(p), ValidationError);
  }
  {
    ProblemInstance p = scalar_instance();
    p.T = 0.0;
    EXPECT_THROW(validate(p), ValidationError);
  }
  {
    ProblemInstance p = scalar_instance();
    p.A(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(validate(p), ValidationError);
  }
}

GTEST_TEST(ModelTest, ValidateRejectsBadInitialData) {
  {
    ProblemInstance p = scalar_instance();
    p.init.tau_index = p.N;  // tau = T leaves no horizon to control
    EXPECT_THROW(validate(p), ValidationError);
  }
  {
    ProblemInstance p = scalar_instance();
    p.init.tau_index = 10;  // missing history samples
    EXPECT_THROW(validate(p), ValidationError);
  }
  {
    ProblemInstance p = scalar_instance();
    p.init.tau_index = 2;
    p.init.history.assign(3, Vector::Ones(1));
    EXPECT_NO_THROW(validate(p));
    p.init.history.pop_back();
    EXPECT_THROW(validate(p), ValidationError);
  }
}

GTEST_TEST(ModelTest, ValidateMatrixKernelCommutation) {
  ProblemInstance p = scalar_instance();
  p.n = 2;
  p.m = 2;
  p.A = Matrix::Zero(2, 2);
  p.A(0, 1) = 1.0;  // nilpotent shift
  p.B = Matrix::Identity(2, 2);
  p.Q = Matrix::Identity(2, 2);
  p.init.xi0 = Vector::Ones(2);

  // Polynomials in A commute with A and pass.
  p.kernel.type = KernelType::MatrixSamples;
  p.kernel.matrix_samples.assign(p.N + 1, Matrix::Identity(2, 2) + 0.5 * p.A);
  EXPECT_NO_THROW(validate(p));

  // A generic sample does not commute and is rejected.
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 0) = 1.0;
  p.kernel.matrix_samples[3] = bad;
  try {
    validate(p);
    FAIL() << "non-commuting matrix kernel must be rejected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("commute"), std::string::npos);
  }
}

GTEST_TEST(ModelTest, HeatBuilderMatchesStencil) {
  const ProblemInstance p = build_heat_system(3, 1.0, 2.0, 0.5, 1.0, 50);
  ASSERT_EQ(p.n, 2);
  ASSERT_EQ(p.m, 2);

  // nu/dx^2 * tridiag(1,-2,1) with dx = 1/3.
  EXPECT_LE(max_abs(p.A - oracle::heat_A_nspace3()), 1e-12);
  EXPECT_LE(max_abs(p.B - Matrix::Identity(2, 2)), 0.0);
  EXPECT_LE(max_abs(p.Q - (1.0 / 3.0) * Matrix::Identity(2, 2)), 1e-15);

  // The exponential kernel samples to c * exp(-gamma t) at the grid nodes.
  const KernelTable table(p.kernel, p.grid(), p.n);
  for (int i = 0; i <= p.N; ++i)
    EXPECT_NEAR(table.ks[i], 0.5 * std::exp(-2.0 * p.grid().node(i)), 1e-15);
}

GTEST_TEST(ModelTest, HeatBuilderKernelEdgeCases) {
  // c = 0 collapses the memory term to zero.
  const ProblemInstance p0 = build_heat_system(4, 1.0, 1.0, 0.0, 1.0, 20);
  EXPECT_TRUE(p0.kernel.is_zero());

  // gamma = 0, c = 1 samples to the constant one.
  const ProblemInstance p1 = build_heat_system(4, 1.0, 0.0, 1.0, 1.0, 20);
  const KernelTable table(p1.kernel, p1.grid(), p1.n);
  for (int i = 0; i <= p1.N; ++i) EXPECT_DOUBLE_EQ(table.ks[i], 1.0);
}

GTEST_TEST(ModelTest, RandomStableBuilderIsDeterministicAndStable) {
  const ProblemInstance a = build_random_stable(2, 1, 7);
  const ProblemInstance b = build_random_stable(2, 1, 7);

  // Same seed, bitwise-identical instance.
  EXPECT_EQ(max_abs(a.A - b.A), 0.0);
  EXPECT_EQ(max_abs(a.B - b.B), 0.0);
  EXPECT_EQ(max_abs(a.Q - b.Q), 0.0);
  EXPECT_EQ(a.kernel.c, b.kernel.c);
  EXPECT_EQ(a.kernel.gamma, b.kernel.gamma);
  EXPECT_EQ(max_abs(a.init.xi0 - b.init.xi0), 0.0);

  // Q = C^T C is PSD.
  Eigen::SelfAdjointEigenSolver<Matrix> es(a.Q);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);

  // Spectral abscissa of A = -n I + skew is exactly -n.
  Eigen::EigenSolver<Matrix> ea(a.A);
  EXPECT_LT(ea.eigenvalues().real().maxCoeff(), 0.0);
  EXPECT_NEAR(ea.eigenvalues().real().maxCoeff(), -2.0, 1e-12);

  // Different seeds give different draws.
  const ProblemInstance c = build_random_stable(2, 1, 8);
  EXPECT_GT(max_abs(a.B - c.B), 0.0);
}

GTEST_TEST(ModelTest, JsonLoadScalarInstance) {
  const std::string path = temp_path("scalar.json");
  write_file(path, R"({
    "n": 1, "m": 1,
    "A": [0.0], "B": [1.0], "Q": [1.0],
    "kernel": {"type": "zero"},
    "T": 1.0, "N": 100,
    "xi0": [1.0]
  })");
  const ProblemInstance p = load_problem(path);
  EXPECT_EQ(p.n, 1);
  EXPECT_EQ(p.N, 100);
  // N = 100 means 101 grid nodes t_0..t_100.
  EXPECT_DOUBLE_EQ(p.grid().node(p.N), 1.0);
  EXPECT_EQ(p.init.tau_index, 0);
  EXPECT_DOUBLE_EQ(p.init.xi0[0], 1.0);
  std::remove(path.c_str());
}

GTEST_TEST(ModelTest, JsonRejectsAsymmetricQFile) {
  const std::string path = temp_path("asym_q.json");
  write_file(path, R"({
    "n": 2, "m": 2,
    "A": [0,0,0,0],
    "B": [1,0,0,1],
    "Q": [0,1,0,0],
    "kernel": {"type": "zero"},
    "T": 1.0, "N": 10,
    "xi0": [1.0, 1.0]
  })");
  try {
    load_problem(path);
    FAIL() << "asymmetric Q file must be rejected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("Q symmetry"), std::string::npos);
  }
  std::remove(path.c_str());
}

GTEST_TEST(ModelTest, JsonParseErrors) {
  const std::string malformed = temp_path("malformed.json");
  write_file(malformed, "{ not json");
  EXPECT_THROW(load_problem(malformed), ParseError);
  std::remove(malformed.c_str());

  const std::string missing = temp_path("missing.json");
  write_file(missing, R"({"n": 1, "m": 1, "T": 1.0, "N": 10})");
  try {
    load_problem(missing);
    FAIL() << "missing matrices must raise a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("missing required field"),
              std::string::npos);
  }
  std::remove(missing.c_str());

  EXPECT_THROW(load_problem(temp_path("does_not_exist.json")), ParseError);
}

GTEST_TEST(ModelTest, JsonTauMustSitOnGridNode) {
  const std::string good = temp_path("tau_ok.json");
  write_file(good, R"({
    "n": 1, "m": 1,
    "A": [0.0], "B": [1.0], "Q": [1.0],
    "kernel": {"type": "zero"},
    "T": 1.0, "N": 100,
    "tau": 0.25,
    "xi0": [1.0],
    "history": [[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],
                [1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1],[1]]
  })");
  const ProblemInstance p = load_problem(good);
  EXPECT_EQ(p.init.tau_index, 25);
  ASSERT_EQ(static_cast<int>(p.init.history.size()), 26);
  std::remove(good.c_str());

  const std::string bad = temp_path("tau_bad.json");
  write_file(bad, R"({
    "n": 1, "m": 1,
    "A": [0.0], "B": [1.0], "Q": [1.0],
    "kernel": {"type": "zero"},
    "T": 1.0, "N": 100,
    "tau": 0.2543,
    "xi0": [1.0]
  })");
  try {
    load_problem(bad);
    FAIL() << "off-node tau must be rejected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("grid node"), std::string::npos);
  }
  std::remove(bad.c_str());
}

GTEST_TEST(ModelTest, JsonBuilderPathsMatchDirectCalls) {
  const std::string heat = temp_path("heat.json");
  write_file(heat, R"({
    "builder": "heat",
    "n_space": 3, "nu": 1.0, "gamma": 2.0, "c": 0.5,
    "T": 1.0, "N": 50
  })");
  const ProblemInstance p = load_problem(heat);
  const ProblemInstance q = build_heat_system(3, 1.0, 2.0, 0.5, 1.0, 50);
  EXPECT_EQ(max_abs(p.A - q.A), 0.0);
  EXPECT_EQ(max_abs(p.Q - q.Q), 0.0);
  EXPECT_EQ(p.kernel.c, q.kernel.c);
  std::remove(heat.c_str());

  const std::string rnd = temp_path("random.json");
  write_file(rnd, R"({
    "builder": "random",
    "n": 3, "m": 2, "seed": 7, "T": 1.0, "N": 40
  })");
  const ProblemInstance r = load_problem(rnd);
  const ProblemInstance s = build_random_stable(3, 2, 7, 1.0, 40);
  EXPECT_EQ(max_abs(r.A - s.A), 0.0);
  EXPECT_EQ(max_abs(r.B - s.B), 0.0);
  std::remove(rnd.c_str());

  const std::string bad = temp_path("builder_bad.json");
  write_file(bad, R"({"builder": "banach"})");
  EXPECT_THROW(load_problem(bad), ParseError);
  std::remove(bad.c_str());
}

GTEST_TEST(ModelTest, JsonRoundTripIsExact) {
  ProblemInstance p = build_random_stable(3, 2, 11, 2.0, 80);
  p.init.tau_index = 20;
  p.init.history.assign(21, Vector::Zero(3));
  for (int j = 0; j <= 20; ++j)
    p.init.history[j] = std::sin(0.1 * j) * Vector::Ones(3);

  const std::string path = temp_path("roundtrip.json");
  save_problem(p, path);
  const ProblemInstance q = load_problem(path);
  std::remove(path.c_str());

  EXPECT_EQ(max_abs(p.A - q.A), 0.0);
  EXPECT_EQ(max_abs(p.B - q.B), 0.0);
  EXPECT_EQ(max_abs(p.Q - q.Q), 0.0);
  EXPECT_EQ(p.kernel.c, q.kernel.c);
  EXPECT_EQ(p.kernel.gamma, q.kernel.gamma);
  EXPECT_EQ(p.T, q.T);
  EXPECT_EQ(p.N, q.N);
  EXPECT_EQ(p.init.tau_index, q.init.tau_index);
  EXPECT_EQ(max_abs(p.init.xi0 - q.init.xi0), 0.0);
  ASSERT_EQ(p.init.history.size(), q.init.history.size());
  for (size_t j = 0; j < p.init.history.size(); ++j)
    EXPECT_EQ(max_abs(p.init.history[j] - q.init.history[j]), 0.0);

  // The canonical serializations agree byte for byte.
  EXPECT_EQ(problem_to_json(p).dump(), problem_to_json(q).dump());
}

GTEST_TEST(ModelTest, JsonSampledKernelsRoundTrip) {
  ProblemInstance p = scalar_instance();
  p.kernel.type = KernelType::ScalarSamples;
  p.kernel.scalar_samples.resize(p.N + 1);
  for (int i = 0; i <= p.N; ++i) p.kernel.scalar_samples[i] = -1.0 + 0.001 * i;

  const std::string path = temp_path("sampled.json");
  save_problem(p, path);
  const ProblemInstance q = load_problem(path);
  std::remove(path.c_str());

  ASSERT_EQ(q.kernel.type, KernelType::ScalarSamples);
  ASSERT_EQ(q.kernel.scalar_samples.size(), p.kernel.scalar_samples.size());
  for (size_t i = 0; i < p.kernel.scalar_samples.size(); ++i)
    EXPECT_EQ(q.kernel.scalar_samples[i], p.kernel.scalar_samples[i]);
}

GTEST_TEST(ModelTest, InstanceDigestIsStable) {
  const ProblemInstance a = build_random_stable(2, 1, 7);
  const ProblemInstance b = build_random_stable(2, 1, 7);
  EXPECT_EQ(instance_digest(a), instance_digest(b));

  ProblemInstance c = a;
  c.N = a.N + 10;
  EXPECT_NE(instance_digest(a), instance_digest(c));
}

}  // namespace
}  // namespace memlqr
