#include "latopt/driver.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "latopt/errors.hpp"

namespace latopt {

Parameterization Parameterization::latent(std::shared_ptr<const DecoderGraph> graph, std::string label,
                                          bool tanh_pre) {
  Parameterization p;
  p.kind = ParamKind::latent;
  p.graph = std::move(graph);
  p.tanh_pre = tanh_pre;
  p.label = std::move(label);
  return p;
}

int Parameterization::dimension(const DesignProblem& problem) const {
  if (kind == ParamKind::pixel) return problem.element_count();
  if (!graph) throw ConfigError("latent parameterization '" + label + "' has no decoder graph");
  return graph->latent_dim();
}

bool RunRecord::same_outcome(const RunRecord& o) const {
  return problem_id == o.problem_id && set_name == o.set_name && method == o.method && optimizer == o.optimizer &&
         seed == o.seed && budget == o.budget && thresholded_objective == o.thresholded_objective &&
         best_obj == o.best_obj && best_obj_thresh == o.best_obj_thresh && best_design == o.best_design &&
         best_vector == o.best_vector && evals_used == o.evals_used && generations == o.generations &&
         restarts == o.restarts && trace == o.trace && volume_drift == o.volume_drift;
}

namespace {

void preflight(const RunConfig& c) {
  validate(c.problem);
  const Parameterization& p = c.parameterization;
  if (p.kind == ParamKind::latent) {
    if (!p.graph) throw ConfigError("latent parameterization '" + p.label + "' has no decoder graph");
    if (!p.graph->validated()) throw ConfigError("decoder graph '" + p.label + "' was not validated");
    const Shape want{1, c.problem.nely, c.problem.nelx};
    if (p.graph->output_shape() != want) {
      throw ConfigError("decoder '" + p.label + "' produces " + shape_string(p.graph->output_shape()) +
                        " but problem '" + c.problem.id + "' needs " + shape_string(want));
    }
  }
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
}

}  // namespace

CandidateEvaluator::CandidateEvaluator(RunConfig config)
    : config_((preflight(config), std::move(config))),
      dimension_(config_.parameterization.dimension(config_.problem)),
      filter_(config_.problem.nelx, config_.problem.nely, config_.filter_radius),
      active_(config_.problem.active_elements()),
      model_(config_.problem, config_.material) {}

DensityField CandidateEvaluator::design(std::span<const double> v) const {
  if (v.size() != static_cast<std::size_t>(dimension_)) {
    throw std::invalid_argument("candidate has " + std::to_string(v.size()) + " entries, expected " +
                                std::to_string(dimension_));
  }
  const DesignProblem& problem = config_.problem;
  if (config_.parameterization.kind == ParamKind::latent) {
    return decode_to_design(*config_.parameterization.graph, v, problem, filter_, config_.parameterization.tanh_pre);
  }
  const DensityField logits(problem.nelx, problem.nely, std::vector<double>(v.begin(), v.end()));
  DensityField x = filter_.apply(constrained_sigmoid(logits, problem.volume_fraction, active_).field);
  apply_mask(x, active_);
  return x;
}

DensityField CandidateEvaluator::thresholded(const DensityField& design) const {
  return threshold_preserving_volume(design, config_.problem.volume_fraction, active_);
}

double CandidateEvaluator::objective(const DensityField& design) const {
  try {
    const double f = model_.solve(design).objective;
    return std::isfinite(f) ? f : kFailedEvaluationPenalty;
  } catch (const SingularSystemError&) {
    return kFailedEvaluationPenalty;
  }
}

double CandidateEvaluator::evaluate(std::span<const double> v) const {
  DensityField x;
  try {
    x = design(v);
  } catch (const DecodeError&) {
    return kFailedEvaluationPenalty;
  } catch (const std::domain_error&) {
    return kFailedEvaluationPenalty;
  }
  return objective(config_.thresholded_objective ? thresholded(x) : x);
}

double evaluate_candidate(std::span<const double> v, const RunConfig& config) {
  return CandidateEvaluator(config).evaluate(v);
}

std::vector<double> evaluate_population(const CandidateEvaluator& evaluator, std::span<const Eigen::VectorXd> xs,
                                        int workers) {
  std::vector<double> fitness(xs.size());
  const auto eval = [&](std::size_t i) {
    fitness[i] = evaluator.evaluate(std::span<const double>(xs[i].data(), static_cast<std::size_t>(xs[i].size())));
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || xs.size() < 2) {
    for (std::size_t i = 0; i < xs.size(); ++i) eval(i);
    return fitness;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < xs.size() && !failed; i = next++) {
      try {
        eval(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, xs.size()); ++t) pool.emplace_back(work);
  pool.clear();
  if (error) std::rethrow_exception(error);
  return fitness;
}

RunRecord run_optimization(const RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const CandidateEvaluator evaluator(config);
  OptimizerConfig opt = config.optimizer;
  opt.seed = config.seed;
  const ResolvedConfig resolved = resolve(opt);
  const int n = evaluator.dimension();
  const int lambda = resolved.population > 0 ? resolved.population : default_population(n);
  if (config.budget < lambda) {
    throw ConfigError("budget " + std::to_string(config.budget) + " is below the population size " +
                      std::to_string(lambda));
  }
  auto strategy = make_strategy(n, opt);

  RunRecord r;
  r.problem_id = config.problem.id;
  r.set_name = config.set_name;
  r.method = config.parameterization.label;
  r.optimizer = opt.label();
  r.seed = config.seed;
  r.budget = config.budget;
  r.thresholded_objective = config.thresholded_objective;

  while (strategy->evaluations() < config.budget) {
    auto candidates = strategy->ask();
    const long remaining = config.budget - strategy->evaluations();
    if (remaining < static_cast<long>(candidates.size())) {
      const std::span<const Eigen::VectorXd> part(candidates.data(), static_cast<std::size_t>(remaining));
      strategy->tell_partial(part, evaluate_population(evaluator, part, config.workers));
    } else {
      strategy->tell(candidates, evaluate_population(evaluator, candidates, config.workers));
    }
    r.trace.push_back({strategy->evaluations(), strategy->best().f});
  }

  const Incumbent& best = strategy->best();
  r.evals_used = strategy->evaluations();
  r.generations = strategy->generations();
  if (const auto* bipop = dynamic_cast<const Bipop*>(strategy.get())) r.restarts = bipop->state().restarts;
  r.best_vector.assign(best.x.data(), best.x.data() + best.x.size());
  r.best_design = evaluator.design(r.best_vector);
  const DensityField thresh = evaluator.thresholded(r.best_design);
  r.best_obj = config.thresholded_objective ? evaluator.objective(r.best_design) : best.f;
  r.best_obj_thresh = config.thresholded_objective ? best.f : evaluator.objective(thresh);
  r.volume_drift = active_mean(r.best_design, config.problem.active_elements()) - config.problem.volume_fraction;
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

RunRecord run_thermal_experiment(std::shared_ptr<const DecoderGraph> graph, ThermalMode mode,
                                 const OptimizerConfig& optimizer, std::uint64_t seed, long budget, int workers) {
  RunConfig c;
  c.problem = thermal_benchmark_problem(64);
  c.set_name = "thermal";
  c.parameterization = Parameterization::latent(std::move(graph), "latent");
  c.optimizer = optimizer;
  c.budget = budget;
  c.thresholded_objective = mode == ThermalMode::thresholded;
  c.seed = seed;
  c.workers = workers;
  return run_optimization(c);
}

}  // namespace latopt
