#include "latopt/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "json_util.hpp"
#include "latopt/errors.hpp"

namespace latopt {

using detail::json;
using detail::ObjectReader;

namespace fs = std::filesystem;

namespace {

fs::path resolve_path(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void write_atomically(const fs::path& path, std::string_view text) {
  const fs::path tmp = path.string() + ".tmp";
  detail::write_text_file(tmp, text);
  fs::rename(tmp, path);
}

json optimizer_to_json(const OptimizerConfig& c) {
  json j = {{"variant", to_string(c.variant)}, {"settings", to_string(c.settings)}};
  j["population"] = c.population ? json(*c.population) : json(nullptr);
  j["sigma0"] = c.sigma0 ? json(*c.sigma0) : json(nullptr);
  j["clip"] = c.clip_low ? json::array({*c.clip_low, c.clip_high.value_or(*c.clip_low)}) : json(nullptr);
  if (c.init) j["init"] = *c.init == InitMode::zero_mean ? "zero_mean" : "uniform_in_clip";
  return j;
}

OptimizerConfig optimizer_from_json(const json& node, const std::string& path) {
  ObjectReader r(node, path);
  OptimizerConfig c;
  c.variant = variant_from_string(r.get_or<std::string>("variant", "cma"));
  c.settings = settings_from_string(r.get_or<std::string>("settings", "default"));
  c.population = r.get_optional<int>("population");
  c.sigma0 = r.get_optional<double>("sigma0");
  if (const auto clip = r.get_optional<std::array<double, 2>>("clip")) {
    c.clip_low = (*clip)[0];
    c.clip_high = (*clip)[1];
  }
  if (const auto init = r.get_optional<std::string>("init")) {
    if (*init == "zero_mean") {
      c.init = InitMode::zero_mean;
    } else if (*init == "uniform_in_clip") {
      c.init = InitMode::uniform_in_clip;
    } else {
      throw ParseError(r.field_path("init") + ": expected zero_mean or uniform_in_clip");
    }
  }
  r.finish();
  resolve(c);
  return c;
}

ParamKind param_kind_from_string(const std::string& s, const std::string& where) {
  if (s == "pixel") return ParamKind::pixel;
  if (s == "latent") return ParamKind::latent;
  throw ParseError(where + ": expected \"pixel\" or \"latent\", got \"" + s + "\"");
}

std::string fmt_num(double v) { return fmt::format("{:.10g}", v); }

}  // namespace

// ---------------------------------------------------------------------------
// Baseline records

std::string to_json(const BaselineRecord& b) {
  const json j = {{"problem_id", b.problem_id},
                  {"method", b.method},
                  {"iterations", b.iterations},
                  {"objective", b.objective},
                  {"objective_thresh", b.objective_thresh}};
  return j.dump(2) + "\n";
}

BaselineRecord baseline_record_from_json(std::string_view text) {
  const json j = detail::parse_json(text, "baseline record");
  ObjectReader r(j, "baseline");
  BaselineRecord b;
  b.problem_id = r.get<std::string>("problem_id");
  b.method = r.get<std::string>("method");
  b.iterations = r.get<int>("iterations");
  b.objective = r.get<double>("objective");
  b.objective_thresh = r.get<double>("objective_thresh");
  r.finish();
  return b;
}

fs::path baseline_path(const fs::path& dir, std::string_view problem_id) {
  return dir / (std::string(problem_id) + ".baseline.json");
}

void save_baseline_record(const BaselineRecord& b, const fs::path& dir) {
  detail::write_text_file(baseline_path(dir, b.problem_id), to_json(b));
}

std::map<std::string, BaselineRecord> load_baselines(const fs::path& dir,
                                                     const std::vector<const DesignProblem*>& problems) {
  std::map<std::string, BaselineRecord> out;
  std::vector<std::string> missing;
  for (const DesignProblem* p : problems) {
    const fs::path path = baseline_path(dir, p->id);
    if (!fs::exists(path)) {
      missing.push_back(p->id);
      continue;
    }
    out[p->id] = baseline_record_from_json(detail::read_text_file(path));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ConfigError("missing baseline for " + std::to_string(missing.size()) + " problem(s) in " + dir.string() +
                      ": " + list);
  }
  return out;
}

BaselineRecord make_baseline_record(const DesignProblem& problem, const BaselineResult& result,
                                    const BaselineConfig& config) {
  const FemModel model(problem, config.material);
  const DensityField thresh =
      threshold_preserving_volume(result.design, problem.volume_fraction, problem.active_elements());
  BaselineRecord b;
  b.problem_id = problem.id;
  b.method = std::string(to_string(config.method));
  b.iterations = config.iterations;
  b.objective = result.objective;
  b.objective_thresh = model.solve(thresh).objective;
  return b;
}

// ---------------------------------------------------------------------------
// Run records

std::string to_json(const ScoredRun& s) {
  const RunRecord& r = s.run;
  json trace = json::array();
  for (const auto& t : r.trace) trace.push_back({t.evaluations, t.best});
  const json j = {
      {"problem_id", r.problem_id},
      {"set", r.set_name},
      {"method", r.method},
      {"optimizer", r.optimizer},
      {"seed", r.seed},
      {"budget", r.budget},
      {"thresholded_objective", r.thresholded_objective},
      {"best_obj", r.best_obj},
      {"best_obj_thresh", r.best_obj_thresh},
      {"baseline_obj", s.baseline_obj},
      {"baseline_obj_thresh", s.baseline_obj_thresh},
      {"evals_used", r.evals_used},
      {"generations", r.generations},
      {"restarts", r.restarts},
      {"wall_s", r.wall_s},
      {"volume_drift", r.volume_drift},
      {"weights_crc", s.weights_crc},
      {"trace", std::move(trace)},
      {"best_vector", r.best_vector},
      {"best_design", {{"nelx", r.best_design.nelx}, {"nely", r.best_design.nely}, {"values", r.best_design.values}}},
  };
  return j.dump() + "\n";
}

ScoredRun scored_run_from_json(std::string_view text) {
  const json j = detail::parse_json(text, "run record");
  ObjectReader r(j, "run");
  ScoredRun s;
  RunRecord& rec = s.run;
  rec.problem_id = r.get<std::string>("problem_id");
  rec.set_name = r.get<std::string>("set");
  rec.method = r.get<std::string>("method");
  rec.optimizer = r.get<std::string>("optimizer");
  rec.seed = r.get<std::uint64_t>("seed");
  rec.budget = r.get<long>("budget");
  rec.thresholded_objective = r.get<bool>("thresholded_objective");
  rec.best_obj = r.get<double>("best_obj");
  rec.best_obj_thresh = r.get<double>("best_obj_thresh");
  s.baseline_obj = r.get<double>("baseline_obj");
  s.baseline_obj_thresh = r.get<double>("baseline_obj_thresh");
  rec.evals_used = r.get<long>("evals_used");
  rec.generations = r.get<long>("generations");
  rec.restarts = r.get<int>("restarts");
  rec.wall_s = r.get<double>("wall_s");
  rec.volume_drift = r.get<double>("volume_drift");
  s.weights_crc = r.get<std::uint32_t>("weights_crc");
  for (const auto& t : r.get<std::vector<std::pair<long, double>>>("trace")) rec.trace.push_back({t.first, t.second});
  rec.best_vector = r.get<std::vector<double>>("best_vector");
  ObjectReader d(r.node("best_design"), "run.best_design");
  rec.best_design = DensityField(d.get<int>("nelx"), d.get<int>("nely"), d.get<std::vector<double>>("values"));
  d.finish();
  r.finish();
  if (rec.best_design.size() != static_cast<std::size_t>(rec.best_design.nelx) * rec.best_design.nely) {
    throw ParseError("run.best_design: value count does not match nelx * nely");
  }
  return s;
}

std::string run_key(std::string_view problem_id, std::string_view method_label, std::uint64_t seed, long budget,
                    std::uint32_t weights_crc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1F;  // field separator
    h *= 0x100000001b3ULL;
  };
  feed(problem_id);
  feed(method_label);
  feed(std::to_string(seed));
  feed(std::to_string(budget));
  feed(std::to_string(weights_crc));
  return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------
// Plans and run configs

std::string MethodSpec::full_label() const {
  std::string s = label + "/" + optimizer.label();
  if (thresholded_objective) s += "/thresh";
  if (tanh_pre) s += "/tanh";
  return s;
}

RunConfig run_config_from_json(std::string_view text, const fs::path& base_dir) {
  const json j = detail::parse_json(text, "run config");
  ObjectReader r(j, "config");
  const fs::path problems = resolve_path(base_dir, r.get<std::string>("problems"));
  const auto problem_id = r.get<std::string>("problem_id");
  const auto kind = param_kind_from_string(r.get_or<std::string>("parameterization", "pixel"),
                                           r.field_path("parameterization"));
  const fs::path weights = resolve_path(base_dir, r.get_or<std::string>("weights", ""));
  const bool tanh_pre = r.get_or<bool>("tanh_pre", false);
  RunConfig c;
  c.optimizer = r.optional_node("optimizer") ? optimizer_from_json(r.node("optimizer"), r.field_path("optimizer"))
                                             : OptimizerConfig{};
  c.budget = r.get_or<long>("budget", 2000);
  c.seed = r.get_or<std::uint64_t>("seed", 0);
  c.thresholded_objective = r.get_or<bool>("thresholded", false);
  c.workers = r.get_or<int>("workers", 1);
  const auto label = r.get_optional<std::string>("label");
  r.finish();

  const ProblemSet set = load_problem_file(problems);
  const DesignProblem* p = set.find(problem_id);
  if (!p) throw ConfigError("problem '" + problem_id + "' not found in " + problems.string());
  c.problem = *p;
  c.set_name = set.name;
  if (kind == ParamKind::latent) {
    if (weights.empty()) throw ConfigError("latent parameterization needs a weights file");
    c.parameterization = Parameterization::latent(std::make_shared<const DecoderGraph>(load_weights(weights)),
                                                  label.value_or("latent"), tanh_pre);
  } else {
    c.parameterization = Parameterization::pixel();
    if (label) c.parameterization.label = *label;
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(detail::read_text_file(path), path.parent_path());
}

BenchmarkPlan plan_from_json(std::string_view text, const fs::path& base_dir) {
  const json j = detail::parse_json(text, "benchmark plan");
  ObjectReader r(j, "plan");
  BenchmarkPlan p;
  p.base_dir = base_dir;
  p.problem_sets = r.get<std::vector<std::string>>("problem_sets");
  p.seeds = r.get_or<int>("seeds", 15);
  p.seed_base = r.get_or<std::uint64_t>("seed_base", 0);
  p.budget = r.get_or<long>("budget", 2000);
  p.baseline_dir = r.get<std::string>("baseline_dir");
  p.workers = r.get_or<int>("workers", 1);
  const json& methods = r.node("methods");
  if (!methods.is_array() || methods.empty()) throw ParseError("plan.methods must be a non-empty array");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string path = "plan.methods[" + std::to_string(i) + "]";
    ObjectReader m(methods[i], path);
    MethodSpec s;
    s.label = m.get<std::string>("label");
    s.kind = param_kind_from_string(m.get<std::string>("parameterization"), m.field_path("parameterization"));
    s.weights = m.get_or<std::string>("weights", "");
    s.tanh_pre = m.get_or<bool>("tanh_pre", false);
    s.thresholded_objective = m.get_or<bool>("thresholded", false);
    s.optimizer = m.optional_node("optimizer") ? optimizer_from_json(m.node("optimizer"), m.field_path("optimizer"))
                                               : OptimizerConfig{};
    m.finish();
    if (s.kind == ParamKind::latent && s.weights.empty()) throw ConfigError(path + ": latent method needs weights");
    if (!labels.insert(s.label).second) throw ConfigError(path + ": duplicate method label '" + s.label + "'");
    p.methods.push_back(std::move(s));
  }
  r.finish();
  if (p.seeds < 1) throw ConfigError("plan.seeds must be >= 1");
  if (p.budget < 1) throw ConfigError("plan.budget must be >= 1");
  if (p.workers < 1) throw ConfigError("plan.workers must be >= 1");
  return p;
}

BenchmarkPlan load_plan(const fs::path& path) {
  return plan_from_json(detail::read_text_file(path), path.parent_path());
}

std::string to_json(const BenchmarkPlan& p) {
  json methods = json::array();
  for (const auto& m : p.methods) {
    json j = {{"label", m.label},
              {"parameterization", m.kind == ParamKind::pixel ? "pixel" : "latent"},
              {"optimizer", optimizer_to_json(m.optimizer)},
              {"thresholded", m.thresholded_objective},
              {"tanh_pre", m.tanh_pre}};
    if (!m.weights.empty()) j["weights"] = m.weights;
    methods.push_back(std::move(j));
  }
  const json j = {{"problem_sets", p.problem_sets}, {"methods", std::move(methods)}, {"seeds", p.seeds},
                  {"seed_base", p.seed_base},       {"budget", p.budget},           {"baseline_dir", p.baseline_dir},
                  {"workers", p.workers}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Benchmark execution

namespace {

struct LoadedMethod {
  const MethodSpec* spec;
  Parameterization param;
  std::uint32_t crc = 0;
};

struct Cell {
  const DesignProblem* problem;
  std::string set_name;
  const LoadedMethod* method;
  std::uint64_t seed;
  fs::path path;
};

}  // namespace

std::vector<ScoredRun> run_benchmark(const BenchmarkPlan& plan, const fs::path& out, BenchmarkProgress* progress) {
  std::vector<ProblemSet> sets;
  std::vector<const DesignProblem*> all;
  for (const auto& f : plan.problem_sets) sets.push_back(load_problem_file(resolve_path(plan.base_dir, f)));
  for (const auto& s : sets) {
    for (const auto& p : s.problems) all.push_back(&p);
  }
  const auto baselines = load_baselines(resolve_path(plan.base_dir, plan.baseline_dir), all);

  std::vector<LoadedMethod> methods;
  methods.reserve(plan.methods.size());
  for (const auto& m : plan.methods) {
    LoadedMethod lm{&m, Parameterization::pixel(), 0};
    lm.param.label = m.label;
    if (m.kind == ParamKind::latent) {
      auto graph = std::make_shared<const DecoderGraph>(load_weights(resolve_path(plan.base_dir, m.weights)));
      lm.crc = weights_checksum(*graph);
      lm.param = Parameterization::latent(std::move(graph), m.label, m.tanh_pre);
    }
    methods.push_back(std::move(lm));
  }

  const fs::path runs_dir = out / "runs";
  fs::create_directories(runs_dir);
  std::vector<Cell> cells;
  for (const auto& s : sets) {
    for (const auto& p : s.problems) {
      for (const auto& m : methods) {
        for (int k = 0; k < plan.seeds; ++k) {
          const std::uint64_t seed = plan.seed_base + static_cast<std::uint64_t>(k);
          const std::string key = run_key(p.id, m.spec->full_label(), seed, plan.budget, m.crc);
          cells.push_back({&p, s.name, &m, seed, runs_dir / (key + ".json")});
        }
      }
    }
  }

  std::vector<ScoredRun> results(cells.size());
  std::vector<char> executed(cells.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size() && !failed; i = next++) {
      const Cell& c = cells[i];
      try {
        if (fs::exists(c.path)) {
          results[i] = scored_run_from_json(detail::read_text_file(c.path));
          continue;
        }
        RunConfig rc;
        rc.problem = *c.problem;
        rc.set_name = c.set_name;
        rc.parameterization = c.method->param;
        rc.optimizer = c.method->spec->optimizer;
        rc.budget = plan.budget;
        rc.thresholded_objective = c.method->spec->thresholded_objective;
        rc.seed = c.seed;
        ScoredRun s;
        s.run = run_optimization(rc);
        const BaselineRecord& b = baselines.at(c.problem->id);
        s.baseline_obj = b.objective;
        s.baseline_obj_thresh = b.objective_thresh;
        s.weights_crc = c.method->crc;
        write_atomically(c.path, to_json(s));
        results[i] = std::move(s);
        executed[i] = 1;
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(plan.workers), std::max<std::size_t>(1, cells.size()));
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  if (progress) {
    progress->executed = static_cast<int>(std::count(executed.begin(), executed.end(), 1));
    progress->skipped = static_cast<int>(cells.size()) - progress->executed;
  }
  return results;
}

std::vector<ScoredRun> load_runs(const fs::path& dir) {
  std::vector<fs::path> files;
  const fs::path runs_dir = dir / "runs";
  if (!fs::is_directory(runs_dir)) throw ConfigError("no runs/ directory under " + dir.string());
  for (const auto& e : fs::directory_iterator(runs_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ScoredRun> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    try {
      out.push_back(scored_run_from_json(detail::read_text_file(f)));
    } catch (const ParseError& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

double relative_error(double value, double reference) noexcept { return (value - reference) / reference; }

ReportRow report_row(const ScoredRun& s) {
  const RunRecord& r = s.run;
  return {r.problem_id,
          r.set_name,
          r.method,
          r.optimizer,
          r.seed,
          r.evals_used,
          r.best_obj,
          r.best_obj_thresh,
          s.baseline_obj,
          s.baseline_obj_thresh,
          relative_error(r.best_obj, s.baseline_obj),
          relative_error(r.best_obj_thresh, s.baseline_obj_thresh),
          r.wall_s};
}

std::vector<ReportRow> report_rows(const std::vector<ScoredRun>& runs) {
  std::vector<ReportRow> rows;
  rows.reserve(runs.size());
  for (const auto& r : runs) rows.push_back(report_row(r));
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.set_name, a.method, a.optimizer, a.problem_id, a.seed) <
           std::tie(b.set_name, b.method, b.optimizer, b.problem_id, b.seed);
  });
  return rows;
}

std::string rows_to_csv(const std::vector<ReportRow>& rows) {
  std::string out =
      "problem_id,set,method,optimizer,seed,evals_used,best_obj,best_obj_thresh,baseline_obj,baseline_obj_thresh,"
      "rel_err,rel_err_thresh,wall_s\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{:.3f}\n", r.problem_id, r.set_name, r.method,
                       r.optimizer, r.seed, r.evals_used, fmt_num(r.best_obj), fmt_num(r.best_obj_thresh),
                       fmt_num(r.baseline_obj), fmt_num(r.baseline_obj_thresh), fmt_num(r.rel_err),
                       fmt_num(r.rel_err_thresh), r.wall_s);
  }
  return out;
}

std::string_view to_string(SliceKind s) noexcept {
  switch (s) {
    case SliceKind::all:
      return "all";
    case SliceKind::best:
      return "best";
    case SliceKind::median:
      return "median";
    case SliceKind::worst:
      return "worst";
  }
  return "?";
}

SliceKind slice_from_string(std::string_view s) {
  for (auto k : {SliceKind::all, SliceKind::best, SliceKind::median, SliceKind::worst}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown slice '" + std::string(s) + "' (all, best, median, worst)");
}

double CdfCurve::at(double e) const noexcept {
  if (total == 0) return 0.0;
  const auto n = std::count_if(errors.begin(), errors.end(), [&](double v) { return v <= e; });
  return static_cast<double>(n) / static_cast<double>(total);
}

std::vector<CdfCurve> slice(const std::vector<ReportRow>& rows, SliceKind which, bool thresholded) {
  using GroupKey = std::tuple<std::string, std::string, std::string>;
  std::map<GroupKey, std::map<std::string, std::vector<const ReportRow*>>> groups;
  for (const auto& r : rows) groups[{r.set_name, r.method, r.optimizer}][r.problem_id].push_back(&r);

  std::vector<CdfCurve> curves;
  for (const auto& [key, problems] : groups) {
    CdfCurve c;
    c.set_name = std::get<0>(key);
    c.method = std::get<1>(key) + "/" + std::get<2>(key);
    c.thresholded = thresholded;
    for (const auto& [id, runs] : problems) {
      auto err = [&](const ReportRow* r) { return thresholded ? r->rel_err_thresh : r->rel_err; };
      if (which == SliceKind::all) {
        for (const ReportRow* r : runs) c.errors.push_back(err(r));
        continue;
      }
      std::vector<const ReportRow*> sorted = runs;
      std::sort(sorted.begin(), sorted.end(), [&](const ReportRow* a, const ReportRow* b) {
        const double fa = thresholded ? a->best_obj_thresh : a->best_obj;
        const double fb = thresholded ? b->best_obj_thresh : b->best_obj;
        return fa != fb ? fa < fb : a->seed < b->seed;
      });
      const std::size_t idx = which == SliceKind::best ? 0 : which == SliceKind::worst ? sorted.size() - 1
                                                                                       : (sorted.size() - 1) / 2;
      c.errors.push_back(err(sorted[idx]));
    }
    c.total = c.errors.size();
    curves.push_back(std::move(c));
  }
  return curves;
}

namespace {

std::vector<double> error_grid(double step, double cutoff) {
  std::vector<double> grid;
  const auto n = static_cast<long>(std::llround(cutoff / step));
  for (long i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) * step);
  return grid;
}

std::string curve_name(const CdfCurve& c) { return c.set_name + ":" + c.method + (c.thresholded ? ":thresh" : ""); }

}  // namespace

std::string cdf_to_csv(const std::vector<CdfCurve>& curves, double step, double cutoff) {
  std::string out = "rel_err";
  for (const auto& c : curves) out += "," + curve_name(c);
  out += "\n";
  for (double e : error_grid(step, cutoff)) {
    out += fmt::format("{:.4f}", e);
    for (const auto& c : curves) out += fmt::format(",{:.6f}", c.at(e));
    out += "\n";
  }
  return out;
}

std::vector<ConvergenceCurve> convergence_curves(const std::vector<ScoredRun>& runs, double drop_worst_fraction) {
  std::map<std::string, std::vector<const ScoredRun*>> by_method;
  for (const auto& r : runs) {
    if (!r.run.trace.empty()) by_method[r.run.method + "/" + r.run.optimizer].push_back(&r);
  }
  std::vector<ConvergenceCurve> out;
  for (auto& [method, list] : by_method) {
    auto reference = [](const ScoredRun* r) {
      return r->run.thresholded_objective ? r->baseline_obj_thresh : r->baseline_obj;
    };
    auto final_error = [&](const ScoredRun* r) { return relative_error(r->run.trace.back().best, reference(r)); };
    std::stable_sort(list.begin(), list.end(),
                     [&](const ScoredRun* a, const ScoredRun* b) { return final_error(a) < final_error(b); });
    const auto drop = static_cast<std::size_t>(std::floor(drop_worst_fraction * static_cast<double>(list.size())));
    list.resize(list.size() - std::min(drop, list.size() - 1));

    long start = 0;
    std::set<long> points;
    for (const ScoredRun* r : list) {
      start = std::max(start, r->run.trace.front().evaluations);
      for (const auto& t : r->run.trace) points.insert(t.evaluations);
    }
    ConvergenceCurve c;
    c.method = method;
    c.runs_used = list.size();
    for (long e : points) {
      if (e < start) continue;
      double sum = 0.0;
      for (const ScoredRun* r : list) {
        const auto& tr = r->run.trace;
        auto it = std::upper_bound(tr.begin(), tr.end(), e,
                                   [](long v, const TracePoint& t) { return v < t.evaluations; });
        sum += relative_error(std::prev(it)->best, reference(r));
      }
      c.evaluations.push_back(e);
      c.mean_error.push_back(sum / static_cast<double>(list.size()));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string convergence_to_csv(const std::vector<ConvergenceCurve>& curves) {
  std::string out = "method,evaluations,mean_rel_err,runs\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.evaluations.size(); ++i) {
      out += fmt::format("{},{},{},{}\n", c.method, c.evaluations[i], fmt_num(c.mean_error[i]), c.runs_used);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out.push_back(ch);
    }
  }
  return out;
}

constexpr std::array<std::string_view, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                   "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string svg_line_chart(const std::vector<SvgSeries>& series, std::string_view title, std::string_view x_label,
                           std::string_view y_label, std::optional<double> y_max) {
  constexpr double W = 720, H = 440, L = 70, R = 200, T = 40, B = 55;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (first) {
        x0 = x1 = s.x[i];
        y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  y0 = 0.0;
  if (y_max) y1 = *y_max;
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (std::min(y, y1) - y0) / (y1 - y0) * (H - T - B); };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      W, H, W, H);
  out += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", W, H);
  out += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     (L + W - R) / 2, xml_escape(title));
  out += fmt::format(
      "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"black\"/>\n"
      "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{3:.1f}\" stroke=\"black\"/>\n",
      L, H - B, W - R, T);
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv), H - B + 18,
                       xv);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 6, py(yv) + 4, yv);
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 12,
                     xml_escape(x_label));
  out += fmt::format("<text x=\"16\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">{}</text>\n",
                     (T + H - B) / 2, (T + H - B) / 2, xml_escape(y_label));
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string_view color = kPalette[k % kPalette.size()];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", px(s.x[i]), py(s.y[i]));
    }
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, pts);
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                       W - R + 12, ly, W - R + 32, ly, color);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", W - R + 38, ly + 4, xml_escape(s.label));
  }
  out += "</svg>\n";
  return out;
}

std::string cdf_to_svg(const std::vector<CdfCurve>& curves, std::string_view title, double step) {
  std::vector<SvgSeries> series;
  const auto grid = error_grid(step, kErrorCutoff);
  for (const auto& c : curves) {
    SvgSeries s{curve_name(c), grid, {}};
    for (double e : grid) s.y.push_back(c.at(e));
    series.push_back(std::move(s));
  }
  return svg_line_chart(series, title, "relative error", "cumulative probability", 1.0);
}

std::string convergence_to_svg(const std::vector<ConvergenceCurve>& curves) {
  std::vector<SvgSeries> series;
  for (const auto& c : curves) {
    SvgSeries s{c.method, {}, c.mean_error};
    for (long e : c.evaluations) s.x.push_back(static_cast<double>(e));
    series.push_back(std::move(s));
  }
  return svg_line_chart(series, "Convergence", "objective evaluations", "mean relative error");
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepCell> sweep_latent_population(const std::vector<int>& dims, const std::vector<int>& populations,
                                               const BenchmarkPlan& plan, const std::string& weights_pattern,
                                               const fs::path& out) {
  const auto latent = std::find_if(plan.methods.begin(), plan.methods.end(),
                                   [](const MethodSpec& m) { return m.kind == ParamKind::latent; });
  MethodSpec base = latent != plan.methods.end() ? *latent : MethodSpec{};
  if (latent == plan.methods.end()) {
    base.label = "latent";
    base.kind = ParamKind::latent;
    base.optimizer = plan.methods.empty() ? OptimizerConfig{} : plan.methods.front().optimizer;
  }
  std::vector<SweepCell> cells;
  for (int dim : dims) {
    std::string weights = weights_pattern;
    for (auto pos = weights.find("{dim}"); pos != std::string::npos; pos = weights.find("{dim}")) {
      weights.replace(pos, 5, std::to_string(dim));
    }
    const bool present = fs::exists(resolve_path(plan.base_dir, weights));
    for (int pop : populations) {
      SweepCell cell{dim, pop, std::nullopt, 0};
      if (present) {
        BenchmarkPlan p = plan;
        MethodSpec m = base;
        m.label = base.label + "_d" + std::to_string(dim);
        m.weights = weights;
        m.optimizer.population = pop;
        p.methods = {m};
        const auto runs = run_benchmark(p, out);
        double sum = 0.0;
        for (const auto& r : runs) sum += report_row(r).rel_err;
        cell.runs = runs.size();
        cell.mean_rel_err = runs.empty() ? std::nullopt : std::optional<double>(sum / runs.size());
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::vector<int> dims, pops;
  for (const auto& c : cells) {
    if (std::find(dims.begin(), dims.end(), c.dim) == dims.end()) dims.push_back(c.dim);
    if (std::find(pops.begin(), pops.end(), c.population) == pops.end()) pops.push_back(c.population);
  }
  std::string out = "latent_dim";
  for (int p : pops) out += "," + std::to_string(p);
  out += "\n";
  for (int d : dims) {
    out += std::to_string(d);
    for (int p : pops) {
      const auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const SweepCell& c) { return c.dim == d && c.population == p; });
      if (it == cells.end() || !it->mean_rel_err) {
        out += ",absent";
      } else {
        out += fmt::format(",{:.3f}", *it->mean_rel_err);
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace latopt
