#include <doctest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "dense_fem.hpp"
#include "latopt/errors.hpp"
#include "latopt/fem.hpp"
#include "test_support.hpp"

using namespace latopt;

namespace {

const oracle::Corners kUnit{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1),
                            Eigen::Vector2d(0, 1)};

std::vector<double> values(const DensityField& x) { return x.values; }

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

DesignProblem random_structural(CounterRng& rng, int nelx, int nely) {
  DesignProblem p;
  p.id = "rand";
  p.nelx = nelx;
  p.nely = nely;
  for (int iy = 0; iy <= nely; ++iy) {
    p.fixed_dofs.push_back(2 * p.node(0, iy));
    if (iy == nely || rng.bernoulli(0.3)) p.fixed_dofs.push_back(2 * p.node(0, iy) + 1);
  }
  const int loads = static_cast<int>(rng.integer(1, 3));
  for (int k = 0; k < loads; ++k) {
    p.loads.push_back({p.node(static_cast<int>(rng.integer(1, nelx)), static_cast<int>(rng.integer(0, nely))),
                       static_cast<int>(rng.integer(0, 1)), rng.uniform(-1.0, 1.0)});
  }
  p.volume_fraction = 0.4;
  return p;
}

DesignProblem thermal_square(int nel, double source) {
  DesignProblem p;
  p.id = "heat";
  p.physics = Physics::thermal;
  p.nelx = nel;
  p.nely = nel;
  p.fixed_dofs = centered_edge_sink(nel, 0.2);
  p.source = source;
  p.volume_fraction = 0.4;
  return p;
}

}  // namespace

TEST_CASE("element matrices match 2x2 Gauss quadrature") {
  const auto ke = plane_stress_element_stiffness(0.3);
  const auto oracle_ke = oracle::q4_stiffness(1.0, 0.3, kUnit);
  CHECK((ke - oracle_ke).cwiseAbs().maxCoeff() < 1e-14);
  const auto kc = conduction_element_matrix();
  CHECK((kc - oracle::q4_conduction(1.0, kUnit)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single element with one free dof") {
  DesignProblem p;
  p.id = "one";
  p.nelx = 1;
  p.nely = 1;
  const int free_dof = 2 * p.node(1, 0) + 1;  // vertical dof of the top-right node
  for (int d = 0; d < p.dof_count(); ++d) {
    if (d != free_dof) p.fixed_dofs.push_back(d);
  }
  p.loads.push_back({p.node(1, 0), 1, -1.0});
  const DensityField x(1, 1, 1.0);
  const auto sol = compliance(p, x);
  CHECK(rel(sol.objective, oracle::dense_solve(p, values(x)).objective) < 1e-12);
  // top-right node is local node 2, y dof -> local index 5
  CHECK(rel(sol.objective, 1.0 / plane_stress_element_stiffness(0.3)(5, 5)) < 1e-12);
}

TEST_CASE("compliance matches the dense oracle on small random meshes") {
  CounterRng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const int nelx = static_cast<int>(rng.integer(1, 16));
    const int nely = static_cast<int>(rng.integer(1, 16));
    DesignProblem p = random_structural(rng, nelx, nely);
    const auto x = testing::random_field(nelx, nely, rng);
    const double c = compliance(p, x).objective;
    const double ref = oracle::dense_solve(p, values(x)).objective;
    CHECK(rel(c, ref) < 1e-8);
  }
}

TEST_CASE("thermal compliance matches the dense oracle") {
  CounterRng rng(5);
  for (const int nel : {4, 9, 16}) {
    const DesignProblem p = thermal_square(nel, 1.0);
    const DensityField solid(nel, nel, 1.0);
    CHECK(rel(thermal_compliance(p, solid).objective, oracle::dense_solve(p, values(solid)).objective) < 1e-8);
    const auto x = testing::random_field(nel, nel, rng);
    CHECK(rel(thermal_compliance(p, x).objective, oracle::dense_solve(p, values(x)).objective) < 1e-8);
  }
}

TEST_CASE("zero loads give zero objective and zero sensitivities") {
  DesignProblem p = testing::cantilever();
  p.loads = {{p.node(8, 4), 1, 0.0}};
  const DensityField x(8, 4, 0.5);
  const auto s = compliance_with_sensitivities(p, x);
  CHECK(s.solution.objective == 0.0);
  for (const double g : s.gradient) CHECK(g == 0.0);

  DesignProblem h = thermal_square(8, 0.0);
  h.loads = {{40, 0, 0.0}};
  CHECK(thermal_compliance(h, DensityField(8, 8, 1.0)).objective == 0.0);
}

TEST_CASE("uniform density scaling without e_min scales compliance by s^-p") {
  MaterialModel m;
  m.e_min = 0.0;
  const DesignProblem p = testing::cantilever();
  const double c1 = compliance(p, DensityField(8, 4, 0.8), m).objective;
  for (const double s : {0.5, 0.25, 0.9}) {
    const double cs = compliance(p, DensityField(8, 4, 0.8 * s), m).objective;
    CHECK(rel(cs, c1 / std::pow(s, m.penal)) < 1e-10);
  }
}

TEST_CASE("thermal objective scales with conductivity for uniform fields") {
  const DesignProblem p = thermal_square(16, 0.01);
  const MaterialModel m;
  const double full = thermal_compliance(p, DensityField(16, 16, 1.0)).objective;
  const double half = thermal_compliance(p, DensityField(16, 16, 0.5)).objective;
  CHECK(rel(half / full, m.conductivity(1.0) / m.conductivity(0.5)) < 1e-6);
}

TEST_CASE("sensitivities match central finite differences") {
  CounterRng rng(77);
  const DesignProblem p = testing::cantilever();
  const auto x = testing::random_field(8, 4, rng, 0.2, 0.8);
  const auto s = compliance_with_sensitivities(p, x);
  const double h = 1e-6;
  double worst = 0.0;
  for (int e = 0; e < 32; ++e) {
    DensityField up = x, down = x;
    up.values[e] += h;
    down.values[e] -= h;
    const double fd = (compliance(p, up).objective - compliance(p, down).objective) / (2 * h);
    worst = std::max(worst, rel(s.gradient[e], fd));
    CHECK(s.gradient[e] <= 0.0);
  }
  CHECK(worst < 1e-4);

  const DesignProblem heat = thermal_square(6, 1.0);
  const auto xt = testing::random_field(6, 6, rng, 0.2, 0.8);
  const auto st = thermal_compliance_with_sensitivities(heat, xt);
  for (int e = 0; e < 36; ++e) {
    DensityField up = xt, down = xt;
    up.values[e] += h;
    down.values[e] -= h;
    const double fd = (thermal_compliance(heat, up).objective - thermal_compliance(heat, down).objective) / (2 * h);
    CHECK(rel(st.gradient[e], fd) < 1e-4);
  }
}

TEST_CASE("sensitivity at full density is -p u_e^T k0 u_e (e0 - e_min)") {
  const DesignProblem p = testing::cantilever();
  const DensityField x(8, 4, 1.0);
  const MaterialModel m;
  const auto s = compliance_with_sensitivities(p, x, m);
  const auto ref = oracle::dense_solve(p, values(x));
  const auto k0 = oracle::q4_stiffness(1.0, m.nu, kUnit);
  for (int ey = 0; ey < 4; ++ey) {
    for (int ex = 0; ex < 8; ++ex) {
      const int nodes[4] = {p.node(ex, ey + 1), p.node(ex + 1, ey + 1), p.node(ex + 1, ey), p.node(ex, ey)};
      Eigen::Matrix<double, 8, 1> ue;
      for (int i = 0; i < 4; ++i) {
        ue[2 * i] = ref.state[2 * nodes[i]];
        ue[2 * i + 1] = ref.state[2 * nodes[i] + 1];
      }
      const double expected = -m.penal * ue.dot(k0 * ue) * (m.e0 - m.e_min);
      CHECK(expected < 0.0);
      CHECK(rel(s.gradient[ey * 8 + ex], expected) < 1e-8);
    }
  }
}

TEST_CASE("compliance does not increase when one density increases") {
  CounterRng rng(8);
  const DesignProblem p = testing::cantilever();
  const auto x = testing::random_field(8, 4, rng, 0.1, 0.9);
  const double c = compliance(p, x).objective;
  for (int e = 0; e < 32; ++e) {
    DensityField y = x;
    y.values[e] = std::min(1.0, y.values[e] + 0.05);
    CHECK(compliance(p, y).objective <= c * (1 + 1e-12));
  }
}

TEST_CASE("solves are deterministic and safe to share between threads") {
  CounterRng rng(3);
  const DesignProblem p = mbb_half_beam(32, 16, 0.4);
  const FemModel model(p);
  const auto x = testing::random_field(32, 16, rng);
  const double ref = model.solve(x).objective;
  std::vector<double> got(4);
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < 4; ++t) pool.emplace_back([&, t] { got[t] = model.solve(x).objective; });
  }
  for (const double g : got) CHECK(g == ref);
}

TEST_CASE("sparsity pattern has at most 18 entries per structural row") {
  const FemModel model(mbb_half_beam(16, 16, 0.4));
  CHECK(model.max_row_nonzeros() <= 18);
  CHECK(model.max_row_nonzeros() == 18);
}

TEST_CASE("conjugate gradient agrees with Cholesky") {
  CounterRng rng(12);
  const DesignProblem p = mbb_half_beam(24, 12, 0.4);
  const auto x = testing::random_field(24, 12, rng, 0.3, 1.0);
  SolverOptions cg;
  cg.solver = LinearSolver::conjugate_gradient;
  const auto a = FemModel(p).solve(x);
  const auto b = FemModel(p, {}, cg).solve(x);
  CHECK(a.stats.method == "cholesky");
  CHECK(b.stats.method == "cg");
  CHECK(rel(b.objective, a.objective) < 1e-8);
}

TEST_CASE("an unrestrained structure is reported as singular") {
  DesignProblem p = testing::cantilever();
  p.fixed_dofs = {0};
  try {
    (void)compliance(p, DensityField(8, 4, 1.0));
    FAIL("expected SingularSystemError");
  } catch (const SingularSystemError& e) {
    CHECK(std::string(e.what()).find("node " + std::to_string(p.node(8, 4))) != std::string::npos);
  }
}

TEST_CASE("bad inputs are rejected") {
  const DesignProblem p = testing::cantilever();
  CHECK_THROWS_AS((void)compliance(p, DensityField(4, 4, 0.5)), std::invalid_argument);
  CHECK_THROWS_AS((void)compliance(p, DensityField(8, 4, 1.5)), std::invalid_argument);
  CHECK_THROWS_AS((void)thermal_compliance(p, DensityField(8, 4, 0.5)), std::invalid_argument);
  MaterialModel bad;
  bad.penal = 0.5;
  CHECK_THROWS_AS((void)compliance(p, DensityField(8, 4, 0.5), bad), std::invalid_argument);
}

TEST_CASE("64x64 structural solve stays under 100 ms") {
  const DesignProblem p = mbb_half_beam(64, 64, 0.4);
  const FemModel model(p);
  const DensityField x(64, 64, 0.4);
  double best = 1e9;
  for (int i = 0; i < 3; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.solve(x);
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  MESSAGE("64x64 solve: " << best * 1e3 << " ms");
  CHECK(best < 0.1);
}
