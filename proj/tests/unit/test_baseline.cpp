#include <doctest.h>

#include <cmath>
#include <numeric>

#include "latopt/baseline.hpp"
#include "latopt/field_ops.hpp"
#include "top88.hpp"
#include "test_support.hpp"

using namespace latopt;

namespace {

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

}  // namespace

TEST_CASE("OC update hits the volume target within the move limit") {
  CounterRng rng(6);
  const int n = 50;
  std::vector<double> x(n), dc(n), dv(n, 1.0);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.uniform(0.1, 0.9);
    dc[i] = -rng.uniform(0.01, 10.0);
  }
  const auto vol = [](const std::vector<double>& v) { return mean(v); };
  const auto next = oc_update(x, dc, dv, 0.2, 0.4, vol);
  CHECK(mean(next) == doctest::Approx(0.4).epsilon(1e-9));
  for (int i = 0; i < n; ++i) {
    CHECK(next[i] >= std::max(0.0, x[i] - 0.2) - 1e-15);
    CHECK(next[i] <= std::min(1.0, x[i] + 0.2) + 1e-15);
  }
  std::vector<std::uint8_t> active(n, 1);
  active[3] = 0;
  CHECK(oc_update(x, dc, dv, 0.2, 0.4, vol, active)[3] == 0.0);
}

TEST_CASE("OC update has a fixed point where sensitivities balance") {
  const std::vector<double> x(20, 0.3), dc(20, -2.0), dv(20, 1.0);
  const auto next = oc_update(x, dc, dv, 0.2, 0.3, [](const std::vector<double>& v) { return mean(v); });
  for (const double v : next) CHECK(v == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("OC baseline reproduces the reference MBB beam") {
  const int nelx = 60, nely = 20, iters = 60;
  const auto ref = oracle::top88(nelx, nely, 0.5, 3.0, 2.0, iters);
  BaselineConfig cfg;
  cfg.iterations = iters;
  const auto got = optimize_baseline(mbb_half_beam(nelx, nely, 0.5), cfg);
  REQUIRE(got.objective_history.size() == ref.history.size());
  for (std::size_t i = 0; i < ref.history.size(); ++i) {
    CHECK(got.objective_history[i] == doctest::Approx(ref.history[i]).epsilon(0.02));
  }
  CHECK(got.objective == doctest::Approx(ref.compliance).epsilon(0.02));
  double diff = 0;
  for (std::size_t e = 0; e < ref.x_phys.size(); ++e) diff = std::max(diff, std::abs(ref.x_phys[e] - got.design.values[e]));
  CHECK(diff < 0.05);
  for (const double v : got.volume_history) CHECK(std::abs(v - 0.5) <= 1e-4);
  for (const double v : ref.volumes) CHECK(std::abs(v - 0.5) <= 1e-4);
}

TEST_CASE("baseline respects masks and is deterministic") {
  DesignProblem p = testing::cantilever(24, 12);
  p.mask = MaskRect{0, 0, 6, 4};
  BaselineConfig cfg;
  cfg.iterations = 25;
  const auto a = optimize_baseline(p, cfg);
  const auto b = optimize_baseline(p, cfg);
  CHECK(a.design.values == b.design.values);
  CHECK(a.objective_history == b.objective_history);
  const auto active = p.active_elements();
  for (int e = 0; e < p.element_count(); ++e) {
    if (!active[static_cast<std::size_t>(e)]) CHECK(a.design.values[static_cast<std::size_t>(e)] == 0.0);
  }
  for (const double v : a.volume_history) CHECK(std::abs(v - p.volume_fraction) <= 1e-4);
  CHECK(a.objective < a.objective_history.front());
}

TEST_CASE("MMA baseline keeps the volume and approaches the OC optimum") {
  const DesignProblem p = mbb_half_beam(40, 16, 0.5);
  BaselineConfig oc;
  oc.iterations = 80;
  BaselineConfig mma = oc;
  mma.method = BaselineMethod::mma;
  const auto a = optimize_baseline(p, oc);
  const auto b = optimize_baseline(p, mma);
  CHECK(b.objective < 0.5 * b.objective_history.front());
  CHECK(b.objective == doctest::Approx(a.objective).epsilon(0.10));
  CHECK(std::abs(b.volume_history.back() - 0.5) <= 1e-3);
  CHECK(baseline_method_from_string("mma") == BaselineMethod::mma);
  CHECK(to_string(BaselineMethod::oc) == "oc");
}

TEST_CASE("thermal baseline lowers the objective") {
  const DesignProblem p = thermal_benchmark_problem(32);
  BaselineConfig cfg;
  cfg.iterations = 30;
  const auto r = optimize_baseline(p, cfg);
  CHECK(r.objective < r.objective_history.front());
  for (const double v : r.volume_history) CHECK(std::abs(v - p.volume_fraction) <= 1e-4);
}
