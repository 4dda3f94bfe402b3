// latopt command-line driver.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "latopt/baseline.hpp"
#include "latopt/bench.hpp"
#include "latopt/decoder.hpp"
#include "latopt/driver.hpp"
#include "latopt/errors.hpp"
#include "latopt/image_io.hpp"
#include "latopt/parity.hpp"
#include "latopt/problem.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::vector<double> read_latent(const fs::path& path) {
  const json j = json::parse(slurp(path));
  const json& z = j.is_object() ? j.at("z") : j;
  return z.get<std::vector<double>>();
}

const latopt::DesignProblem& pick_problem(const latopt::ProblemSet& set, const std::string& id) {
  if (id.empty()) {
    if (set.problems.empty()) throw latopt::ConfigError("problem set is empty");
    return set.problems.front();
  }
  const auto* p = set.find(id);
  if (!p) throw latopt::ConfigError("problem '" + id + "' not in set '" + set.name + "'");
  return *p;
}

std::string record_json(const latopt::RunRecord& r) {
  latopt::ScoredRun s;
  s.run = r;
  return latopt::to_json(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space topology optimization"};
  app.require_subcommand(1);

  // gen-problems
  auto* gen = app.add_subcommand("gen-problems", "Generate an in- or out-of-distribution problem set");
  std::string gen_kind = "in";
  int gen_count = 25;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--kind", gen_kind, "in | out")->check(CLI::IsMember({"in", "out"}));
  gen->add_option("--count", gen_count)->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out)->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "Gradient-based reference designs");
  std::string base_problems, base_out, base_method = "oc", base_ids;
  latopt::BaselineConfig base_cfg;
  base->add_option("--problems", base_problems)->required();
  base->add_option("--out", base_out)->required();
  base->add_option("--iterations", base_cfg.iterations)->check(CLI::PositiveNumber);
  base->add_option("--move", base_cfg.move_limit);
  base->add_option("--method", base_method)->check(CLI::IsMember({"oc", "mma"}));
  base->add_option("--ids", base_ids, "comma-separated subset of problem ids");

  // decode
  auto* dec = app.add_subcommand("decode", "Decode a latent vector into a design image");
  std::string dec_weights, dec_latent, dec_problem, dec_id, dec_out;
  bool dec_tanh = false;
  dec->add_option("--weights", dec_weights)->required();
  dec->add_option("--latent", dec_latent, "JSON array or {\"z\": [...]}")->required();
  dec->add_option("--problem", dec_problem)->required();
  dec->add_option("--problem-id", dec_id);
  dec->add_option("--out", dec_out)->required();
  dec->add_flag("--tanh", dec_tanh);

  // optimize
  auto* opt = app.add_subcommand("optimize", "Run one optimization from a run config");
  std::string opt_config, opt_out, opt_design;
  opt->add_option("--config", opt_config)->required();
  opt->add_option("--out", opt_out)->required();
  opt->add_option("--design", opt_design, "also write the best design as PGM");

  // bench
  auto* bench = app.add_subcommand("bench", "Run a benchmark plan (resumable)");
  std::string bench_plan, bench_out;
  bench->add_option("--plan", bench_plan)->required();
  bench->add_option("--out", bench_out)->required();

  // report
  auto* rep = app.add_subcommand("report", "Aggregate persisted run records");
  std::string rep_dir, rep_slice = "all", rep_format = "csv";
  bool rep_thresh = false;
  double rep_drop = 0.10;
  rep->add_option("--dir", rep_dir)->required();
  rep->add_option("--slice", rep_slice)->check(CLI::IsMember({"all", "best", "median", "worst"}));
  rep->add_option("--format", rep_format)->check(CLI::IsMember({"csv", "svg"}));
  rep->add_flag("--thresholded", rep_thresh, "use thresholded objectives for the CDF");
  rep->add_option("--drop-worst", rep_drop, "fraction of runs dropped from convergence curves");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Latent dimension x population sweep");
  std::string sw_plan, sw_out, sw_pattern;
  std::vector<int> sw_dims{32, 64, 128, 256, 512}, sw_pops{4, 8, 16, 32};
  sw->add_option("--plan", sw_plan)->required();
  sw->add_option("--out", sw_out)->required();
  sw->add_option("--weights-pattern", sw_pattern, "weight file path containing {dim}")->required();
  sw->add_option("--dims", sw_dims)->delimiter(',');
  sw->add_option("--pops", sw_pops)->delimiter(',');

  // thermal
  auto* th = app.add_subcommand("thermal", "Latent optimization of the heat-conduction benchmark");
  std::string th_weights, th_mode = "gray", th_out, th_design, th_variant = "bipop_cma", th_settings = "default";
  std::uint64_t th_seed = 0;
  long th_budget = 2000;
  int th_workers = 1;
  th->add_option("--weights", th_weights)->required();
  th->add_option("--mode", th_mode)->check(CLI::IsMember({"gray", "thresholded"}));
  th->add_option("--seed", th_seed);
  th->add_option("--budget", th_budget);
  th->add_option("--variant", th_variant)->check(CLI::IsMember({"cma", "bipop_cma"}));
  th->add_option("--settings", th_settings)->check(CLI::IsMember({"default", "custom"}));
  th->add_option("--workers", th_workers);
  th->add_option("--out", th_out)->required();
  th->add_option("--design", th_design);

  // init-decoder
  auto* init = app.add_subcommand("init-decoder", "Write an untrained reference decoder weight file");
  std::string init_arch = "lbae", init_out;
  int init_dim = 0;
  std::uint64_t init_seed = 0;
  init->add_option("--arch", init_arch)->check(CLI::IsMember({"lbae", "vae"}));
  init->add_option("--latent-dim", init_dim);
  init->add_option("--seed", init_seed);
  init->add_option("--out", init_out)->required();

  // parity
  auto* par = app.add_subcommand("parity", "Check decoder output against a parity fixture, or write one");
  std::string par_weights, par_fixture, par_write_blob;
  double par_tol = 1e-4;
  int par_count = 10;
  std::uint64_t par_seed = 0;
  par->add_option("--weights", par_weights)->required();
  par->add_option("--fixture", par_fixture, "fixture JSON")->required();
  par->add_option("--tolerance", par_tol);
  par->add_option("--write", par_write_blob, "write a fixture with this logits blob instead of checking");
  par->add_option("--count", par_count, "latents to write");
  par->add_option("--seed", par_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto set = gen_kind == "in" ? latopt::generate_in_distribution(gen_count, gen_seed)
                                        : latopt::generate_out_of_distribution(gen_count, gen_seed);
      latopt::save_problem_file(set, gen_out);
      fmt::print("wrote {} problems to {}\n", set.problems.size(), gen_out);
    } else if (*base) {
      const auto set = latopt::load_problem_file(base_problems);
      base_cfg.method = latopt::baseline_method_from_string(base_method);
      std::vector<std::string> ids;
      for (std::stringstream ss(base_ids); ss.good();) {
        std::string id;
        std::getline(ss, id, ',');
        if (!id.empty()) ids.push_back(id);
      }
      const fs::path out(base_out);
      for (const auto& p : set.problems) {
        if (!ids.empty() && std::find(ids.begin(), ids.end(), p.id) == ids.end()) continue;
        const auto result = latopt::optimize_baseline(p, base_cfg);
        latopt::write_pgm(result.design, out / (p.id + ".pgm"));
        std::string csv = "iteration,objective,volume\n";
        for (std::size_t i = 0; i < result.objective_history.size(); ++i) {
          csv += fmt::format("{},{:.10g},{:.10g}\n", i, result.objective_history[i], result.volume_history[i]);
        }
        spit(out / (p.id + ".history.csv"), csv);
        const auto record = latopt::make_baseline_record(p, result, base_cfg);
        latopt::save_baseline_record(record, out);
        fmt::print("{}: objective {:.6g}, thresholded {:.6g}\n", p.id, record.objective, record.objective_thresh);
      }
    } else if (*dec) {
      const auto graph = latopt::load_weights(dec_weights);
      const auto set = latopt::load_problem_file(dec_problem);
      const auto& problem = pick_problem(set, dec_id);
      const latopt::ConeFilter filter(problem.nelx, problem.nely);
      const auto design = latopt::decode_to_design(graph, read_latent(dec_latent), problem, filter, dec_tanh);
      latopt::write_pgm(design, dec_out);
      fmt::print("wrote {}x{} design (volume {:.6f}) to {}\n", design.nelx, design.nely,
                 latopt::active_mean(design, problem.active_elements()), dec_out);
    } else if (*opt) {
      const auto config = latopt::load_run_config(opt_config);
      const auto record = latopt::run_optimization(config);
      spit(opt_out, record_json(record));
      if (!opt_design.empty()) latopt::write_pgm(record.best_design, opt_design);
      fmt::print("{} {} {}: best {:.6g} (thresholded {:.6g}) after {} evaluations\n", record.problem_id, record.method,
                 record.optimizer, record.best_obj, record.best_obj_thresh, record.evals_used);
    } else if (*bench) {
      const auto plan = latopt::load_plan(bench_plan);
      latopt::BenchmarkProgress progress;
      const auto runs = latopt::run_benchmark(plan, bench_out, &progress);
      spit(fs::path(bench_out) / "report.csv", latopt::rows_to_csv(latopt::report_rows(runs)));
      fmt::print("{} runs ({} executed, {} reused) in {}\n", runs.size(), progress.executed, progress.skipped,
                 bench_out);
    } else if (*rep) {
      const auto runs = latopt::load_runs(rep_dir);
      const auto rows = latopt::report_rows(runs);
      const auto which = latopt::slice_from_string(rep_slice);
      const auto curves = latopt::slice(rows, which, rep_thresh);
      const auto conv = latopt::convergence_curves(runs, rep_drop);
      const fs::path dir(rep_dir);
      const std::string suffix = rep_slice + (rep_thresh ? "_thresh" : "");
      spit(dir / "report.csv", latopt::rows_to_csv(rows));
      if (rep_format == "csv") {
        spit(dir / ("cdf_" + suffix + ".csv"), latopt::cdf_to_csv(curves));
        spit(dir / "convergence.csv", latopt::convergence_to_csv(conv));
      } else {
        spit(dir / ("cdf_" + suffix + ".svg"), latopt::cdf_to_svg(curves, "Cumulative probability (" + suffix + ")"));
        spit(dir / "convergence.svg", latopt::convergence_to_svg(conv));
      }
      fmt::print("{} runs, {} curves written to {}\n", runs.size(), curves.size(), rep_dir);
    } else if (*sw) {
      const auto plan = latopt::load_plan(sw_plan);
      const auto cells = latopt::sweep_latent_population(sw_dims, sw_pops, plan, sw_pattern, sw_out);
      const std::string csv = latopt::sweep_to_csv(cells);
      spit(fs::path(sw_out) / "sweep.csv", csv);
      fmt::print("{}", csv);
    } else if (*th) {
      auto graph = std::make_shared<const latopt::DecoderGraph>(latopt::load_weights(th_weights));
      latopt::OptimizerConfig oc;
      oc.variant = latopt::variant_from_string(th_variant);
      oc.settings = latopt::settings_from_string(th_settings);
      const auto mode = th_mode == "gray" ? latopt::ThermalMode::gray : latopt::ThermalMode::thresholded;
      const auto record = latopt::run_thermal_experiment(graph, mode, oc, th_seed, th_budget, th_workers);
      spit(th_out, record_json(record));
      if (!th_design.empty()) latopt::write_pgm(record.best_design, th_design);
      fmt::print("thermal {}: gray {:.6g}, thresholded {:.6g}\n", th_mode, record.best_obj, record.best_obj_thresh);
    } else if (*par) {
      const auto graph = latopt::load_weights(par_weights);
      if (!par_write_blob.empty()) {
        latopt::CounterRng rng(par_seed);
        std::vector<std::vector<double>> zs(static_cast<std::size_t>(par_count));
        for (auto& z : zs) {
          z.resize(static_cast<std::size_t>(graph.latent_dim()));
          for (double& v : z) v = rng.normal();
        }
        const auto f = latopt::write_parity_fixture(graph, zs, par_fixture, par_write_blob);
        fmt::print("wrote {} latents (crc {:08x}) to {}\n", zs.size(), f.expected_checksum, par_fixture);
      } else {
        const auto report = latopt::check_parity(graph, latopt::load_parity_fixture(par_fixture));
        const bool ok = report.max_abs_error <= par_tol;
        fmt::print("{} latents, max abs error {:.3e} (tolerance {:.1e}): {}\n", report.latents, report.max_abs_error,
                   par_tol, ok ? "ok" : "MISMATCH");
        if (!ok) return 2;
      }
    } else if (*init) {
      const int dim = init_dim > 0 ? init_dim : (init_arch == "lbae" ? 256 : 64);
      const auto graph = init_arch == "lbae" ? latopt::reference_lbae_decoder(dim, init_seed)
                                             : latopt::reference_vae_decoder(dim, init_seed);
      latopt::save_weights(graph, init_out);
      fmt::print("wrote {} decoder ({} parameters, crc {:08x}) to {}\n", init_arch, graph.parameter_count(),
                 latopt::weights_checksum(graph), init_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
