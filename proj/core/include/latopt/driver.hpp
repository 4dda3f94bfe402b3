#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latopt/cmaes.hpp"
#include "latopt/decoder.hpp"
#include "latopt/fem.hpp"
#include "latopt/field_ops.hpp"
#include "latopt/problem.hpp"

namespace latopt {

inline constexpr double kFailedEvaluationPenalty = 1e12;

enum class ParamKind { latent, pixel };

/// What the optimizer controls: a decoder latent vector or one logit per
/// element.
struct Parameterization {
  ParamKind kind = ParamKind::pixel;
  std::shared_ptr<const DecoderGraph> graph;
  bool tanh_pre = false;
  std::string label = "pixel";

  static Parameterization pixel() { return {}; }
  static Parameterization latent(std::shared_ptr<const DecoderGraph> graph, std::string label = "latent",
                                 bool tanh_pre = false);

  [[nodiscard]] int dimension(const DesignProblem& problem) const;
};

struct RunConfig {
  DesignProblem problem;
  std::string set_name;
  Parameterization parameterization;
  OptimizerConfig optimizer;
  long budget = 2000;
  bool thresholded_objective = false;
  std::uint64_t seed = 0;  // replaces optimizer.seed
  int workers = 1;
  MaterialModel material;
  double filter_radius = 2.0;
};

struct RunRecord {
  std::string problem_id;
  std::string set_name;
  std::string method;     // parameterization label
  std::string optimizer;  // OptimizerConfig::label()
  std::uint64_t seed = 0;
  long budget = 0;
  bool thresholded_objective = false;
  double best_obj = 0.0;         // grayscale objective of best_design
  double best_obj_thresh = 0.0;  // objective after volume-preserving thresholding
  DensityField best_design;
  std::vector<double> best_vector;
  long evals_used = 0;
  long generations = 0;
  int restarts = 0;
  std::vector<TracePoint> trace;  // best-so-far fitness after each generation
  double wall_s = 0.0;
  double volume_drift = 0.0;  // filtered volume minus target

  /// Equal up to wall time.
  [[nodiscard]] bool same_outcome(const RunRecord& other) const;
};

/// Shared read-only evaluation context for one run: decoder or pixel
/// pipeline, filter, mask and a prepared FEM model. Thread-safe.
class CandidateEvaluator {
 public:
  explicit CandidateEvaluator(RunConfig config);

  [[nodiscard]] int dimension() const noexcept { return dimension_; }
  /// Filtered physical design of decision vector v (before any thresholding).
  [[nodiscard]] DensityField design(std::span<const double> v) const;
  /// {0,1} design with exactly round(V n_active) solid elements.
  [[nodiscard]] DensityField thresholded(const DensityField& design) const;
  /// FEM objective; singular systems map to kFailedEvaluationPenalty.
  [[nodiscard]] double objective(const DensityField& design) const;
  /// Fitness seen by the optimizer.
  [[nodiscard]] double evaluate(std::span<const double> v) const;

 private:
  RunConfig config_;
  int dimension_;
  ConeFilter filter_;
  std::vector<std::uint8_t> active_;
  FemModel model_;
};

/// One-off evaluation; builds a CandidateEvaluator per call.
double evaluate_candidate(std::span<const double> v, const RunConfig& config);

/// Fitness of every candidate, in candidate order, using up to `workers`
/// threads.
std::vector<double> evaluate_population(const CandidateEvaluator& evaluator, std::span<const Eigen::VectorXd> xs,
                                        int workers);

/// ask -> evaluate -> tell until the budget is spent. The final generation
/// is truncated to the remaining budget. Throws ConfigError before any
/// evaluation if the parameterization does not fit the problem or the
/// budget is below one population.
RunRecord run_optimization(const RunConfig& config);

enum class ThermalMode { gray, thresholded };

/// Latent optimization of thermal_benchmark_problem(64) with the objective
/// evaluated on gray or thresholded designs.
RunRecord run_thermal_experiment(std::shared_ptr<const DecoderGraph> graph, ThermalMode mode,
                                 const OptimizerConfig& optimizer, std::uint64_t seed, long budget = 2000,
                                 int workers = 1);

}  // namespace latopt
