#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latopt/baseline.hpp"
#include "latopt/bench.hpp"
#include "latopt/errors.hpp"
#include "test_support.hpp"

using namespace latopt;
namespace fs = std::filesystem;

namespace {

ScoredRun scored(std::string problem, std::uint64_t seed, double obj, double baseline, std::string method = "pixel") {
  ScoredRun s;
  s.run.problem_id = std::move(problem);
  s.run.set_name = "in";
  s.run.method = std::move(method);
  s.run.optimizer = "cma/default";
  s.run.seed = seed;
  s.run.best_obj = obj;
  s.run.best_obj_thresh = obj * 1.5;
  s.run.trace = {{10, obj * 3}, {20, obj * 2}, {30, obj}};
  s.run.evals_used = 30;
  s.baseline_obj = baseline;
  s.baseline_obj_thresh = baseline;
  return s;
}

// Two small problems with baselines on disk and a pixel-only plan.
struct Fixture {
  testing::TempDir dir{"bench"};
  BenchmarkPlan plan;

  Fixture() {
    ProblemSet set;
    set.name = "tiny";
    DesignProblem a = testing::cantilever(8, 4);
    a.id = "tiny_a";
    DesignProblem b = testing::cantilever(10, 4);
    b.id = "tiny_b";
    b.volume_fraction = 0.4;
    set.problems = {a, b};
    save_problem_file(set, dir.path() / "tiny.json");
    fs::create_directories(dir.path() / "baselines");
    BaselineConfig cfg;
    cfg.iterations = 10;
    for (const auto& p : set.problems) {
      save_baseline_record(make_baseline_record(p, optimize_baseline(p, cfg), cfg), dir.path() / "baselines");
    }
    plan.problem_sets = {"tiny.json"};
    plan.baseline_dir = "baselines";
    plan.base_dir = dir.path();
    plan.seeds = 2;
    plan.budget = 24;
    MethodSpec pixel;
    pixel.label = "pixel";
    pixel.optimizer.population = 6;
    plan.methods = {pixel};
  }
};

}  // namespace

TEST_CASE("relative error and report rows") {
  CHECK(relative_error(12.0, 10.0) == doctest::Approx(0.2));
  CHECK(relative_error(9.0, 10.0) == doctest::Approx(-0.1));
  const std::vector<ScoredRun> runs{scored("p2", 0, 15.0, 10.0), scored("p1", 1, 4.0, 2.0), scored("p1", 0, 3.0, 2.0)};
  const auto rows = report_rows(runs);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].problem_id == "p1");
  CHECK(rows[0].seed == 0);
  CHECK(rows[0].rel_err == doctest::Approx(0.5));
  CHECK(rows[0].rel_err_thresh == doctest::Approx(1.25));
  CHECK(rows[1].rel_err == doctest::Approx(1.0));
  CHECK(rows[2].rel_err == doctest::Approx(0.5));
  const std::string csv = rows_to_csv(rows);
  CHECK(csv.rfind(
            "problem_id,set,method,optimizer,seed,evals_used,best_obj,best_obj_thresh,baseline_obj,"
            "baseline_obj_thresh,rel_err,rel_err_thresh,wall_s\n",
            0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("p1,in,pixel,cma/default,0,30,3,4.5,2,2,0.5,1.25,") != std::string::npos);
}

TEST_CASE("slices pick best, lower median and worst per problem") {
  std::vector<ScoredRun> runs;
  const double objs[] = {5.0, 3.0, 4.0, 6.0};
  for (std::uint64_t s = 0; s < 4; ++s) runs.push_back(scored("p", s, objs[s], 2.0));
  runs.push_back(scored("q", 0, 2.0, 1.0));
  const auto rows = report_rows(runs);
  const auto pick = [&](SliceKind k) {
    const auto c = slice(rows, k);
    REQUIRE(c.size() == 1);
    return c[0].errors;
  };
  CHECK(pick(SliceKind::best) == std::vector<double>{0.5, 1.0});
  CHECK(pick(SliceKind::median) == std::vector<double>{1.0, 1.0});  // 4.0 is the lower median of {3,4,5,6}
  CHECK(pick(SliceKind::worst) == std::vector<double>{2.0, 1.0});
  CHECK(pick(SliceKind::all).size() == 5);
  for (const auto& c : slice(rows, SliceKind::all)) {
    for (double e = 0; e <= 3; e += 0.25) {
      const auto best = slice(rows, SliceKind::best)[0].at(e);
      const auto worst = slice(rows, SliceKind::worst)[0].at(e);
      CHECK(worst <= best);
      CHECK(c.at(e) >= 0.0);
    }
  }
  CHECK(slice_from_string("median") == SliceKind::median);
  CHECK_THROWS_AS(slice_from_string("mean"), ConfigError);
}

TEST_CASE("errors beyond the cutoff stay in the CDF denominator") {
  CdfCurve c;
  c.errors = {0.1, 0.5, 5.0};
  c.total = 3;
  CHECK(c.at(0.0) == 0.0);
  CHECK(c.at(1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(c.at(kErrorCutoff) == doctest::Approx(2.0 / 3.0));
  c.set_name = "in";
  c.method = "pixel/cma";
  const std::string csv = cdf_to_csv({c}, 0.5, 3.0);
  CHECK(csv.rfind("rel_err,in:pixel/cma\n", 0) == 0);
  CHECK(csv.find("1.0000,0.666667") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(cdf_to_svg({c}, "cdf").find("<svg") != std::string::npos);
}

TEST_CASE("convergence curves drop the worst runs") {
  std::vector<ScoredRun> runs;
  for (std::uint64_t s = 0; s < 10; ++s) runs.push_back(scored("p", s, 2.0 + (s == 9 ? 100.0 : 0.0), 1.0));
  const auto curves = convergence_curves(runs, 0.10);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].runs_used == 9);
  CHECK(curves[0].evaluations == std::vector<long>{10, 20, 30});
  CHECK(curves[0].mean_error[0] == doctest::Approx(5.0));
  CHECK(curves[0].mean_error[2] == doctest::Approx(1.0));
  const auto all = convergence_curves(runs, 0.0);
  CHECK(all[0].runs_used == 10);
  CHECK(all[0].mean_error[2] == doctest::Approx(1.0 + 10.0));
  CHECK(convergence_to_csv(curves).rfind("method,evaluations,mean_rel_err,runs\npixel/cma/default,10,5,9\n", 0) == 0);
}

TEST_CASE("run keys are content addressed") {
  const auto k = run_key("p", "pixel/cma/default", 3, 2000, 0);
  CHECK(k.size() == 16);
  CHECK(k == run_key("p", "pixel/cma/default", 3, 2000, 0));
  CHECK(k != run_key("p", "pixel/cma/default", 4, 2000, 0));
  CHECK(k != run_key("p", "pixel/cma/default", 3, 2001, 0));
  CHECK(k != run_key("p", "pixel/cma/default", 3, 2000, 1));
  CHECK(k != run_key("q", "pixel/cma/default", 3, 2000, 0));
  CHECK(run_key("ab", "c", 0, 1, 0) != run_key("a", "bc", 0, 1, 0));
}

TEST_CASE("records round-trip through JSON") {
  ScoredRun s = scored("p", 7, 1.25, 1.0);
  s.run.best_design = DensityField(2, 1, {0.25, 0.75});
  s.run.best_vector = {0.1, -0.2};
  s.weights_crc = 0xDEADBEEF;
  const auto back = scored_run_from_json(to_json(s));
  CHECK(back.run.same_outcome(s.run));
  CHECK(back.weights_crc == s.weights_crc);
  CHECK(back.baseline_obj == s.baseline_obj);
  const BaselineRecord b{"p", "oc", 200, 3.5, 4.25};
  CHECK(baseline_record_from_json(to_json(b)) == b);
}

TEST_CASE("benchmark runs are resumable") {
  Fixture f;
  const fs::path out = f.dir.path() / "out";
  BenchmarkProgress first;
  const auto a = run_benchmark(f.plan, out, &first);
  CHECK(a.size() == 4);
  CHECK(first.executed == 4);
  CHECK(first.skipped == 0);
  for (const auto& r : a) CHECK(r.run.evals_used == 24);

  BenchmarkProgress second;
  const auto b = run_benchmark(f.plan, out, &second);
  CHECK(second.executed == 0);
  CHECK(second.skipped == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].run.same_outcome(b[i].run));

  const auto files = load_runs(out);
  REQUIRE(files.size() == 4);
  fs::remove(out / "runs" / (run_key(files[0].run.problem_id, "pixel/cma/default/lambda6", files[0].run.seed, 24, 0) +
                             ".json"));
  BenchmarkProgress third;
  (void)run_benchmark(f.plan, out, &third);
  CHECK(third.executed == 1);
  CHECK(third.skipped == 3);
}

TEST_CASE("missing baselines are listed before any run") {
  Fixture f;
  fs::remove(baseline_path(f.dir.path() / "baselines", "tiny_b"));
  try {
    (void)run_benchmark(f.plan, f.dir.path() / "out");
    FAIL("missing baseline not reported");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tiny_b") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(f.dir.path() / "out" / "runs"));
  CHECK_THROWS(load_runs(f.dir.path() / "out"));
}

TEST_CASE("plans parse and round-trip") {
  Fixture f;
  const auto text = to_json(f.plan);
  const auto p = plan_from_json(text, f.dir.path());
  CHECK(p.problem_sets == f.plan.problem_sets);
  CHECK(p.seeds == 2);
  CHECK(p.budget == 24);
  REQUIRE(p.methods.size() == 1);
  CHECK(p.methods[0].full_label() == "pixel/cma/default/lambda6");
  CHECK_THROWS_AS(plan_from_json(R"({"problem_sets": [], "baseline_dir": "b", "methods": []})"), ParseError);
  CHECK_THROWS_AS(plan_from_json(R"({"problem_sets": [], "baseline_dir": "b",
      "methods": [{"label": "l", "parameterization": "latent"}]})"),
                  ConfigError);
  CHECK_THROWS_AS(plan_from_json(R"({"problem_sets": [], "baseline_dir": "b", "bogus": 1,
      "methods": [{"label": "p", "parameterization": "pixel"}]})"),
                  ParseError);
}

TEST_CASE("sweep reports cells with absent weights") {
  Fixture f;
  f.plan.seeds = 1;
  f.plan.budget = 12;
  const DecoderGraph g = [] {
    CounterRng rng(1);
    DecoderGraph d(3, {1, 4, 8});
    d.add_tensor(testing::random_tensor("w", {32, 3}, rng));
    d.add_node({.op = OpKind::dense, .weight = "w"});
    d.add_node({.op = OpKind::reshape, .dims = {1, 4, 8}});
    d.validate();
    return d;
  }();
  save_weights(g, f.dir.path() / "dec_3.ltw");
  ProblemSet only_a = load_problem_file(f.dir.path() / "tiny.json");
  only_a.problems.resize(1);
  save_problem_file(only_a, f.dir.path() / "tiny.json");
  const auto cells = sweep_latent_population({3, 5}, {4, 6}, f.plan, "dec_{dim}.ltw", f.dir.path() / "sweep");
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].mean_rel_err.has_value());
  CHECK(cells[0].runs == 1);
  CHECK(cells[1].mean_rel_err.has_value());
  CHECK_FALSE(cells[2].mean_rel_err.has_value());
  CHECK_FALSE(cells[3].mean_rel_err.has_value());
  const auto csv = sweep_to_csv(cells);
  CHECK(csv.rfind("latent_dim,4,6\n3,", 0) == 0);
  CHECK(csv.find("5,absent,absent\n") != std::string::npos);
}
