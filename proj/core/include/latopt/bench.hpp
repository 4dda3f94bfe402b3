#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latopt/baseline.hpp"
#include "latopt/cmaes.hpp"
#include "latopt/driver.hpp"
#include "latopt/problem.hpp"

namespace latopt {

// ---------------------------------------------------------------------------
// Persisted records

/// Reference objective of one problem, written by `latopt baseline` as
/// <dir>/<problem id>.baseline.json.
struct BaselineRecord {
  std::string problem_id;
  std::string method = "oc";
  int iterations = 0;
  double objective = 0.0;
  double objective_thresh = 0.0;
  friend bool operator==(const BaselineRecord&, const BaselineRecord&) = default;
};

std::string to_json(const BaselineRecord& b);
BaselineRecord baseline_record_from_json(std::string_view text);
std::filesystem::path baseline_path(const std::filesystem::path& dir, std::string_view problem_id);
void save_baseline_record(const BaselineRecord& b, const std::filesystem::path& dir);
/// Baseline records for every problem id; throws ConfigError listing all
/// problems without a record.
std::map<std::string, BaselineRecord> load_baselines(const std::filesystem::path& dir,
                                                     const std::vector<const DesignProblem*>& problems);

/// Optimize the problem with the gradient-based baseline and summarise it.
BaselineRecord make_baseline_record(const DesignProblem& problem, const BaselineResult& result,
                                    const BaselineConfig& config);

/// A RunRecord together with the baseline it is scored against.
struct ScoredRun {
  RunRecord run;
  double baseline_obj = 0.0;
  double baseline_obj_thresh = 0.0;
  std::uint32_t weights_crc = 0;
};

std::string to_json(const ScoredRun& r);
ScoredRun scored_run_from_json(std::string_view text);

/// FNV-1a 64 over (problem id, method label, seed, budget, weight checksum),
/// as 16 hex digits.
std::string run_key(std::string_view problem_id, std::string_view method_label, std::uint64_t seed, long budget,
                    std::uint32_t weights_crc);

// ---------------------------------------------------------------------------
// Plans

struct MethodSpec {
  std::string label;                // e.g. "lbae", "pixel"
  ParamKind kind = ParamKind::pixel;
  std::string weights;              // weight file for latent methods
  bool tanh_pre = false;
  bool thresholded_objective = false;
  OptimizerConfig optimizer;

  /// "<label>/<optimizer label>[/thresh]"
  [[nodiscard]] std::string full_label() const;
};

struct BenchmarkPlan {
  std::vector<std::string> problem_sets;  // problem-set JSON files
  std::vector<MethodSpec> methods;
  int seeds = 15;
  std::uint64_t seed_base = 0;
  long budget = 2000;
  std::string baseline_dir;
  int workers = 1;
  /// Relative paths above are resolved against this directory.
  std::filesystem::path base_dir;
};

/// Run configuration file of `latopt optimize`:
///   {problems, problem_id, set?, parameterization: "pixel" | "latent",
///    weights?, tanh_pre?, optimizer: {...}, budget?, seed?, thresholded?,
///    workers?}
/// Relative paths resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(std::string_view text, const std::filesystem::path& base_dir = {});

BenchmarkPlan plan_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
BenchmarkPlan load_plan(const std::filesystem::path& path);
std::string to_json(const BenchmarkPlan& plan);

struct BenchmarkProgress {
  int executed = 0;
  int skipped = 0;  // already present in the output directory
};

/// Runs every (problem, method, seed) cell not yet persisted under
/// <out>/runs/ and returns all records of the plan.
std::vector<ScoredRun> run_benchmark(const BenchmarkPlan& plan, const std::filesystem::path& out,
                                     BenchmarkProgress* progress = nullptr);

/// Every record under <dir>/runs/, sorted by key.
std::vector<ScoredRun> load_runs(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string problem_id;
  std::string set_name;
  std::string method;
  std::string optimizer;
  std::uint64_t seed = 0;
  long evals_used = 0;
  double best_obj = 0.0;
  double best_obj_thresh = 0.0;
  double baseline_obj = 0.0;
  double baseline_obj_thresh = 0.0;
  double rel_err = 0.0;
  double rel_err_thresh = 0.0;
  double wall_s = 0.0;
};

double relative_error(double value, double reference) noexcept;

ReportRow report_row(const ScoredRun& r);
/// Rows sorted by (set, method, optimizer, problem, seed).
std::vector<ReportRow> report_rows(const std::vector<ScoredRun>& runs);
std::string rows_to_csv(const std::vector<ReportRow>& rows);

enum class SliceKind { all, best, median, worst };
std::string_view to_string(SliceKind s) noexcept;
SliceKind slice_from_string(std::string_view s);

inline constexpr double kErrorCutoff = 3.0;

/// Empirical CDF of relative errors sampled at 0, step, ..., cutoff. Errors
/// above the cutoff are not plotted but stay in the denominator.
struct CdfCurve {
  std::string set_name;
  std::string method;     // "<method>/<optimizer>"
  bool thresholded = false;
  std::vector<double> errors;  // samples that entered the CDF
  std::size_t total = 0;

  [[nodiscard]] double at(double e) const noexcept;
};

/// Per set and method: all runs, or for each problem the run with the
/// smallest / lower-median / largest final objective over its seeds.
std::vector<CdfCurve> slice(const std::vector<ReportRow>& rows, SliceKind which, bool thresholded = false);

std::string cdf_to_csv(const std::vector<CdfCurve>& curves, double step = 0.01, double cutoff = kErrorCutoff);

struct ConvergenceCurve {
  std::string method;
  std::vector<long> evaluations;
  std::vector<double> mean_error;
  std::size_t runs_used = 0;
};

/// Mean relative error of the best-so-far objective against evaluations,
/// after dropping the worst `drop_worst_fraction` of runs per method (by
/// final error). Points are the union of the runs' trace evaluation counts
/// from the first count that every run has reached.
std::vector<ConvergenceCurve> convergence_curves(const std::vector<ScoredRun>& runs,
                                                 double drop_worst_fraction = 0.10);
std::string convergence_to_csv(const std::vector<ConvergenceCurve>& curves);

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained line chart.
std::string svg_line_chart(const std::vector<SvgSeries>& series, std::string_view title, std::string_view x_label,
                           std::string_view y_label, std::optional<double> y_max = std::nullopt);

std::string cdf_to_svg(const std::vector<CdfCurve>& curves, std::string_view title, double step = 0.01);
std::string convergence_to_svg(const std::vector<ConvergenceCurve>& curves);

// ---------------------------------------------------------------------------
// Latent dimension x population sweep

struct SweepCell {
  int dim = 0;
  int population = 0;
  std::optional<double> mean_rel_err;  // nullopt: weight file absent
  std::size_t runs = 0;
};

/// For each dim, the plan's first latent method is re-run with weights from
/// `weights_pattern` ("{dim}" replaced) and each population size. Cells
/// with a missing weight file are reported absent.
std::vector<SweepCell> sweep_latent_population(const std::vector<int>& dims, const std::vector<int>& populations,
                                               const BenchmarkPlan& plan, const std::string& weights_pattern,
                                               const std::filesystem::path& out);

/// Rows per dim, one column per population; absent cells read "absent".
std::string sweep_to_csv(const std::vector<SweepCell>& cells);

}  // namespace latopt
