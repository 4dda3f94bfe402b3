// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bisection.hpp"
#include "dense_fem.hpp"
#include "latopt/baseline.hpp"
#include "latopt/cmaes.hpp"
#include "latopt/decoder.hpp"
#include "latopt/driver.hpp"
#include "latopt/errors.hpp"
#include "latopt/fem.hpp"
#include "latopt/field_ops.hpp"
#include "latopt/problem.hpp"
#include "tensor_oracle.hpp"
#include "test_support.hpp"
#include "top88.hpp"

using namespace latopt;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

std::vector<double> values(const DensityField& x) { return x.values; }

// ---------------------------------------------------------------------------

// Densities are drawn from [0.1, 1]: stiffness contrast 1e-3.
Outcome fem_correctness() {
  Outcome out;
  CounterRng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const int nelx = static_cast<int>(rng.integer(1, 16));
    const int nely = static_cast<int>(rng.integer(1, 16));
    DesignProblem p;
    p.id = "acc";
    p.nelx = nelx;
    p.nely = nely;
    for (int iy = 0; iy <= nely; ++iy) {
      p.fixed_dofs.push_back(2 * p.node(0, iy));
      p.fixed_dofs.push_back(2 * p.node(0, iy) + 1);
    }
    p.loads.push_back({p.node(nelx, static_cast<int>(rng.integer(0, nely))), static_cast<int>(rng.integer(0, 1)),
                       rng.uniform(-1.0, 1.0) + 2.0});
    const auto x = testing::random_field(nelx, nely, rng, 0.1, 1.0);
    worst = std::max(worst, rel(compliance(p, x).objective, oracle::dense_solve(p, values(x)).objective));
  }
  for (const int nel : {3, 8, 16}) {
    DesignProblem h;
    h.id = "heat";
    h.physics = Physics::thermal;
    h.nelx = h.nely = nel;
    h.fixed_dofs = centered_edge_sink(nel, 0.2);
    h.source = 0.01;
    const auto x = testing::random_field(nel, nel, rng, 0.1, 1.0);
    worst = std::max(worst, rel(thermal_compliance(h, x).objective, oracle::dense_solve(h, values(x)).objective));
  }
  out.require(worst <= 1e-8, "oracle mismatch " + num(worst));
  out.note("oracle rel " + num(worst));

  const DesignProblem c = testing::cantilever(8, 4);
  const auto x = testing::random_field(8, 4, rng, 0.1, 1.0);
  const auto s = compliance_with_sensitivities(c, x);
  const double h = 1e-4;
  double fd_worst = 0.0;
  for (int e = 0; e < 32; ++e) {
    DensityField up = x, down = x;
    up.values[static_cast<std::size_t>(e)] += h;
    down.values[static_cast<std::size_t>(e)] -= h;
    const double fd = (compliance(c, up).objective - compliance(c, down).objective) / (2 * h);
    fd_worst = std::max(fd_worst, rel(s.gradient[static_cast<std::size_t>(e)], fd));
  }
  out.require(fd_worst < 1e-4, "finite differences " + num(fd_worst));
  out.note("fd rel " + num(fd_worst));
  return out;
}

Outcome field_ops() {
  Outcome out;
  CounterRng rng(32);
  double vol_worst = 0.0, offset_worst = 0.0;
  int popcount_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int nelx = static_cast<int>(rng.integer(2, 64));
    const int nely = static_cast<int>(rng.integer(2, 64));
    const double scale = rng.uniform(0.1, 8.0);
    const auto logits = testing::random_field(nelx, nely, rng, -scale, scale);
    const double target = rng.uniform(0.1, 0.9);
    std::vector<std::uint8_t> active;
    if (rng.bernoulli(0.3)) {
      active.assign(static_cast<std::size_t>(nelx * nely), 1);
      for (auto& a : active) a = rng.bernoulli(0.8) ? 1 : 0;
      active[0] = 1;
    }
    const auto proj = constrained_sigmoid(logits, target, active);
    vol_worst = std::max(vol_worst, std::abs(active_mean(proj.field, active) - target));
    if (active.empty()) offset_worst = std::max(offset_worst, std::abs(proj.offset - oracle::sigmoid_offset(logits.values, target)));

    const auto field = testing::random_field(nelx, nely, rng);
    const auto t = threshold_preserving_volume(field, target, active);
    int n_active = 0, ones = 0;
    for (std::size_t e = 0; e < t.values.size(); ++e) {
      if (active.empty() || active[e]) ++n_active;
      ones += t.values[e] == 1.0 ? 1 : 0;
    }
    popcount_bad += ones == static_cast<int>(std::lround(target * n_active)) ? 0 : 1;
  }
  out.require(vol_worst <= 1e-6, "volume error " + num(vol_worst));
  out.require(popcount_bad == 0, std::to_string(popcount_bad) + " threshold counts off");
  out.note("volume err " + num(vol_worst) + ", offset vs oracle " + num(offset_worst));

  double uniform_worst = 0.0, linear_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int nelx = static_cast<int>(rng.integer(1, 40));
    const int nely = static_cast<int>(rng.integer(1, 40));
    const ConeFilter f(nelx, nely, rng.uniform(1.0, 4.0));
    const double c = rng.uniform(0.0, 1.0);
    for (const double v : f.apply(DensityField(nelx, nely, c)).values) uniform_worst = std::max(uniform_worst, std::abs(v - c));
    const auto a = testing::random_field(nelx, nely, rng), b = testing::random_field(nelx, nely, rng);
    const double alpha = rng.uniform(-2.0, 2.0), beta = rng.uniform(-2.0, 2.0);
    DensityField mix(nelx, nely);
    for (std::size_t e = 0; e < mix.values.size(); ++e) mix.values[e] = alpha * a.values[e] + beta * b.values[e];
    const auto fa = f.apply(a), fb = f.apply(b), fm = f.apply(mix);
    for (std::size_t e = 0; e < mix.values.size(); ++e) {
      linear_worst = std::max(linear_worst, std::abs(fm.values[e] - alpha * fa.values[e] - beta * fb.values[e]));
    }
  }
  out.require(uniform_worst <= 1e-12, "filter not uniform-preserving " + num(uniform_worst));
  out.require(linear_worst <= 1e-12, "filter not linear " + num(linear_worst));
  return out;
}

Outcome optimizers() {
  Outcome out;
  const auto sphere = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  const auto rosenbrock = [](const Eigen::VectorXd& x) {
    double s = 0;
    for (Eigen::Index i = 0; i + 1 < x.size(); ++i) {
      s += 100.0 * std::pow(x[i + 1] - x[i] * x[i], 2) + std::pow(1.0 - x[i], 2);
    }
    return s;
  };
  int sphere_ok = 0, rosen_ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    OptimizerConfig c;
    c.seed = seed;
    CmaEs a(16, c);
    sphere_ok += minimize(a, sphere, 4000).best.f < 1e-9 ? 1 : 0;
    CmaEs b(8, c);
    rosen_ok += minimize(b, rosenbrock, 40000).best.f < 1e-6 ? 1 : 0;
  }
  out.require(sphere_ok == 10, "sphere " + std::to_string(sphere_ok) + "/10");
  out.require(rosen_ok >= 8, "rosenbrock " + std::to_string(rosen_ok) + "/10");
  out.note("sphere " + std::to_string(sphere_ok) + "/10, rosenbrock " + std::to_string(rosen_ok) + "/10");

  OptimizerConfig bc;
  bc.variant = EsVariant::bipop_cma;
  bc.seed = 3;
  Bipop bipop(256, bc);
  long calls = 0;
  const auto constant = [&](const Eigen::VectorXd&) { ++calls; return 1.0; };
  while (bipop.state().history.size() < 5) (void)bipop_step(bipop, constant, bipop.evaluations() + 2000);
  const auto& h = bipop.state().history;
  const bool schedule = h[0].regime == Regime::large && h[0].lambda == 20 && h[1].regime == Regime::large &&
                        h[1].lambda == 40 && h[2].regime == Regime::small && h[2].lambda >= 20 && h[2].lambda <= 40 &&
                        h[3].regime == Regime::large && h[3].lambda == 80 && h[4].regime == Regime::small;
  out.require(schedule, "BIPOP schedule");
  out.require(calls == bipop.evaluations() && calls == bipop.state().budget_large + bipop.state().budget_small,
              "BIPOP ledger " + std::to_string(calls) + " vs " + std::to_string(bipop.evaluations()));
  return out;
}

Outcome decoder_runtime() {
  Outcome out;
  CounterRng rng(34);
  double worst = 0.0;
  int roundtrip_bad = 0, corrupt_accepted = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const DecoderGraph g = testing::random_graph(rng);
    const auto z = testing::random_vector(static_cast<std::size_t>(g.latent_dim()), rng);
    const auto got = decode(g, z);
    const auto want = oracle::decode(g, z);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));

    const std::string bytes = serialize_weights(g);
    const DecoderGraph back = parse_weights(bytes);
    if (!(back == g) || serialize_weights(back) != bytes || decode(back, z) != got) ++roundtrip_bad;

    std::string bad = bytes;
    const auto at = static_cast<std::size_t>(rng.below(bad.size()));
    bad[at] = static_cast<char>(bad[at] ^ (1 << rng.below(8)));
    for (const std::string& c : {bad, bytes.substr(0, static_cast<std::size_t>(rng.below(bytes.size())))}) {
      try {
        const DecoderGraph parsed = parse_weights(c);
        // a flipped manifest byte may still yield a valid graph; it must then differ from the original
        if (parsed == g) ++corrupt_accepted;
      } catch (const WeightFileError&) {
      }
    }
  }
  out.require(worst <= 1e-5, "oracle mismatch " + num(worst));
  out.require(roundtrip_bad == 0, std::to_string(roundtrip_bad) + " round-trips differ");
  out.require(corrupt_accepted == 0, std::to_string(corrupt_accepted) + " corrupt files accepted unchanged");
  out.note("max abs " + num(worst));
  return out;
}

Outcome baseline() {
  Outcome out;
  const int n = 64, iters = 200;
  const auto ref = oracle::top88(n, n, 0.4, 3.0, 2.0, iters);
  BaselineConfig cfg;
  cfg.iterations = iters;
  const auto got = optimize_baseline(mbb_half_beam(n, n, 0.4), cfg);
  const double err = rel(got.objective, ref.compliance);
  double vol = 0.0;
  for (const double v : got.volume_history) vol = std::max(vol, std::abs(v - 0.4));
  out.require(err <= 0.02, "compliance off by " + num(err));
  out.require(vol <= 1e-4, "volume drift " + num(vol));
  out.note("compliance " + num(got.objective) + " vs reference " + num(ref.compliance) + " (rel " + num(err) +
           "), max volume error " + num(vol));
  return out;
}

struct ControlRuns {
  std::string set_name;
  std::vector<DesignProblem> problems;
  std::vector<RunRecord> runs;
  std::vector<double> baselines;
};

ControlRuns negative_control_runs() {
  ControlRuns c;
  const ProblemSet set = generate_in_distribution(5, 0);
  c.set_name = set.name;
  for (const auto& p : set.problems) {
    RunConfig rc;
    rc.problem = p;
    rc.set_name = set.name;
    rc.budget = 2000;
    rc.seed = 0;
    c.problems.push_back(p);
    c.baselines.push_back(optimize_baseline(p).objective);
    c.runs.push_back(run_optimization(rc));
  }
  return c;
}

Outcome negative_control(const ControlRuns& c) {
  Outcome out;
  int far = 0;
  std::string errs;
  for (std::size_t i = 0; i < c.runs.size(); ++i) {
    const double e = (c.runs[i].best_obj - c.baselines[i]) / c.baselines[i];
    far += e > 1.0 ? 1 : 0;
    errs += (errs.empty() ? "" : " ") + num(100 * e) + "%";
  }
  out.require(far >= 4, std::to_string(far) + "/5 above 100%");
  out.note("rel errors " + errs);
  return out;
}

Outcome budget_determinism(const ControlRuns& c) {
  Outcome out;
  const int lambda = default_population(4096);
  for (const auto& r : c.runs) {
    out.require(r.evals_used <= 2000 && r.evals_used == r.trace.back().evaluations,
                r.problem_id + " used " + std::to_string(r.evals_used));
    // a truncated final batch is evaluated but does not update the distribution
    out.require(r.generations == 2000 / lambda, r.problem_id + " generations " + std::to_string(r.generations));
    out.require(r.trace.size() == static_cast<std::size_t>((2000 + lambda - 1) / lambda), r.problem_id + " trace length");
  }

  RunConfig rc;
  rc.problem = c.problems.front();
  rc.budget = 2000;
  rc.seed = 0;
  rc.set_name = c.set_name;
  rc.workers = 4;
  const auto again = run_optimization(rc);
  out.require(again.same_outcome(c.runs.front()),
              "pixel rerun with 4 workers differs (trace equal: " +
                  std::to_string(again.trace == c.runs.front().trace) + ")");

  RunConfig lc;
  lc.problem = c.problems.back();
  lc.parameterization = Parameterization::latent(std::make_shared<const DecoderGraph>(reference_lbae_decoder(256, 0)),
                                                 "lbae");
  lc.optimizer.variant = EsVariant::bipop_cma;
  lc.budget = 120;
  lc.seed = 5;
  const auto seq = run_optimization(lc);
  lc.workers = 4;
  const auto par = run_optimization(lc);
  out.require(seq.same_outcome(par), "latent run with 4 workers differs");
  out.require(seq.evals_used == 120, "latent run used " + std::to_string(seq.evals_used));

  OptimizerConfig bc;
  bc.variant = EsVariant::bipop_cma;
  Bipop b(16, bc);
  long calls = 0;
  const auto f = [&](const Eigen::VectorXd& x) {
    ++calls;
    double s = 160.0;
    for (const double v : x) s += v * v - 10.0 * std::cos(2.0 * M_PI * v);
    return s;
  };
  const auto st = bipop_step(b, f, 2000);
  out.require(calls == 2000 && b.evaluations() == 2000 && st.budget_large + st.budget_small == 2000,
              "BIPOP ledger " + std::to_string(calls));
  return out;
}

bool report(const char* name, const std::function<Outcome()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s %s (%.1f s) %s\n", o.pass ? "PASS" : "FAIL", name, s, o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main() {
  bool ok = true;
  ok &= report("fem_correctness", fem_correctness);
  ok &= report("field_ops", field_ops);
  ok &= report("optimizers", optimizers);
  ok &= report("decoder_runtime", decoder_runtime);
  ok &= report("baseline", baseline);
  ControlRuns control;
  bool have_runs = true;
  try {
    control = negative_control_runs();
  } catch (const std::exception& e) {
    std::printf("control runs failed: %s\n", e.what());
    have_runs = false;
  }
  ok &= report("negative_control", [&] {
    if (!have_runs) throw std::runtime_error("no runs");
    return negative_control(control);
  });
  ok &= report("budget_determinism", [&] {
    if (!have_runs) throw std::runtime_error("no runs");
    return budget_determinism(control);
  });
  return ok ? 0 : 1;
}
