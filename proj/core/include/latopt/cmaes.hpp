#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latopt/rng.hpp"

namespace latopt {

enum class EsVariant { cma, bipop_cma };
enum class EsSettings { defaults, custom };
enum class InitMode { zero_mean, uniform_in_clip };

std::string_view to_string(EsVariant v) noexcept;
std::string_view to_string(EsSettings s) noexcept;
EsVariant variant_from_string(std::string_view s);
EsSettings settings_from_string(std::string_view s);

/// Restart triggers used by BIPOP. A plain CMA-ES run never stops on its own;
/// it runs until the caller's budget is spent.
struct RestartCriteria {
  double tolfun = 1e-12;
  double tolx = 1e-12;
  double max_condition = 1e14;
  /// Generations without improvement of the run's best; 0 selects
  /// 120 + ceil(30 n / lambda).
  int stagnation_generations = 0;
};

/// User-facing optimizer settings. Unset fields take the values implied by
/// `settings`: defaults -> sigma0 1, zero mean, no clipping; custom ->
/// sigma0 2, clipping to [-5, 5] and a uniform initial mean in that box.
struct OptimizerConfig {
  EsVariant variant = EsVariant::cma;
  EsSettings settings = EsSettings::defaults;
  std::optional<int> population;
  std::optional<double> sigma0;
  std::optional<double> clip_low;
  std::optional<double> clip_high;
  std::optional<InitMode> init;
  std::uint64_t seed = 0;
  RestartCriteria restart;

  /// Short label such as "bipop_cma/custom" or "cma/default/lambda8".
  [[nodiscard]] std::string label() const;
};

/// OptimizerConfig with every default filled in and combinations checked.
struct ResolvedConfig {
  EsVariant variant;
  int population = 0;  // 0: 4 + floor(3 ln n)
  double sigma0 = 1.0;
  std::optional<double> clip_low;
  std::optional<double> clip_high;
  InitMode init = InitMode::zero_mean;
  std::uint64_t seed = 0;
  RestartCriteria restart;
};

/// Throws ConfigError on invalid combinations.
ResolvedConfig resolve(const OptimizerConfig& config);

int default_population(int n) noexcept;

/// Strategy parameters of the canonical CMA-ES (Hansen's tutorial defaults):
///   mu = floor(lambda / 2), w_i ~ ln((lambda + 1) / 2) - ln i, sum w = 1
///   mu_eff = 1 / sum w_i^2
///   c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
///   d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
///   c_c = (4 + mu_eff / n) / (n + 4 + 2 mu_eff / n)
///   c_1 = 2 / ((n + 1.3)^2 + mu_eff)
///   c_mu = min(1 - c_1, 2 (mu_eff - 2 + 1 / mu_eff) / ((n + 2)^2 + mu_eff))
///   chi_n = sqrt(n) (1 - 1 / (4n) + 1 / (21 n^2))
struct CmaParameters {
  int lambda = 0;
  int mu = 0;
  std::vector<double> weights;
  double mueff = 0;
  double cs = 0;
  double ds = 0;
  double cc = 0;
  double c1 = 0;
  double cmu = 0;
  double chi_n = 0;
};

CmaParameters cma_parameters(int n, int lambda);

struct Incumbent {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
};

struct CmaState {
  int n = 0;
  CmaParameters params;
  Eigen::VectorXd mean;
  double sigma = 1.0;
  Eigen::MatrixXd cov;   // C
  Eigen::MatrixXd basis; // B, eigenvectors of C
  Eigen::VectorXd axis;  // D, sqrt of eigenvalues (floored at sqrt(1e-20))
  Eigen::VectorXd ps;
  Eigen::VectorXd pc;
  long generation = 0;
  long evaluations = 0;
  long decomposed_at = 0;  // evaluations at the last eigendecomposition
  bool identity_basis = true;  // B == I until the first decomposition
  std::optional<double> clip_low;
  std::optional<double> clip_high;
  CounterRng rng{0};
  Incumbent best;
  std::vector<double> generation_best;  // best fitness of each told generation
  long best_generation = 0;             // generation where the run's best last improved
  double last_fitness_range = std::numeric_limits<double>::infinity();
};

/// Ask/tell optimizer interface shared by CMA-ES and BIPOP-CMA-ES.
class EvolutionStrategy {
 public:
  virtual ~EvolutionStrategy() = default;
  [[nodiscard]] virtual int dimension() const = 0;
  /// Next population; clipped to the box when clipping is configured.
  virtual std::vector<Eigen::VectorXd> ask() = 0;
  /// Full generation; fitness must be finite (minimization).
  virtual void tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) = 0;
  /// Budget-truncated final generation: only the first fitness.size()
  /// candidates were evaluated. Updates the incumbent and ledgers only.
  virtual void tell_partial(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) = 0;
  [[nodiscard]] virtual const Incumbent& best() const = 0;
  [[nodiscard]] virtual long evaluations() const = 0;
  [[nodiscard]] virtual long generations() const = 0;
};

class CmaEs final : public EvolutionStrategy {
 public:
  /// cma_init: lambda from the config or 4 + floor(3 ln n), C = I.
  CmaEs(int n, const OptimizerConfig& config);
  CmaEs(int n, const ResolvedConfig& config, int lambda, double sigma0, CounterRng rng);

  [[nodiscard]] int dimension() const override { return state_.n; }
  std::vector<Eigen::VectorXd> ask() override;
  void tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) override;
  void tell_partial(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) override;
  [[nodiscard]] const Incumbent& best() const override { return state_.best; }
  [[nodiscard]] long evaluations() const override { return state_.evaluations; }
  [[nodiscard]] long generations() const override { return state_.generation; }

  [[nodiscard]] const CmaState& state() const noexcept { return state_; }
  /// Overrides sigma (tests use this for the degenerate-sampling check).
  void set_sigma(double sigma) noexcept { state_.sigma = sigma; }

  /// Name of the first restart criterion that holds, or empty.
  [[nodiscard]] std::string restart_reason(const RestartCriteria& criteria) const;
  [[nodiscard]] double condition_number() const;

 private:
  void decompose();
  CmaState state_;
};

enum class Regime { large, small };

struct RestartRecord {
  int index = 0;
  Regime regime = Regime::large;
  int lambda = 0;
  double sigma0 = 0;
  long first_evaluation = 0;
  std::string reason;  // why the previous run stopped; empty for the first run
};

struct BipopState {
  int lambda_default = 0;
  int lambda_large = 0;
  double sigma_default = 0;
  Regime regime = Regime::large;
  int restarts = 0;
  long budget_large = 0;  // evaluations spent in each regime
  long budget_small = 0;
  Incumbent best;
  std::vector<RestartRecord> history;
};

/// BIPOP-CMA-ES: the first run and first restart use the large regime
/// (lambda doubling from the default); afterwards small and large runs
/// alternate, giving lambda 20, 40, small, 80, small, ... for n = 256.
/// Small runs use
/// lambda_s = floor(lambda_def (lambda_large / lambda_def)^(u^2)) and
/// sigma_s = sigma0 10^(-2 u').
class Bipop final : public EvolutionStrategy {
 public:
  Bipop(int n, const OptimizerConfig& config);

  [[nodiscard]] int dimension() const override { return n_; }
  std::vector<Eigen::VectorXd> ask() override;
  void tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) override;
  void tell_partial(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) override;
  [[nodiscard]] const Incumbent& best() const override { return state_.best; }
  [[nodiscard]] long evaluations() const override { return state_.budget_large + state_.budget_small; }
  [[nodiscard]] long generations() const override { return generations_; }

  [[nodiscard]] const BipopState& state() const noexcept { return state_; }
  [[nodiscard]] const CmaEs& inner() const noexcept { return *inner_; }

 private:
  void account(long evals, std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness);
  void restart(std::string reason);

  int n_;
  ResolvedConfig config_;
  CounterRng restart_rng_;
  std::unique_ptr<CmaEs> inner_;
  BipopState state_;
  long generations_ = 0;
};

std::unique_ptr<EvolutionStrategy> make_strategy(int n, const OptimizerConfig& config);

struct TracePoint {
  long evaluations = 0;
  double best = 0;
  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct MinimizeResult {
  Incumbent best;
  long evaluations = 0;
  long generations = 0;
  std::vector<TracePoint> trace;  // best-so-far after each generation
};

/// Sequential ask/evaluate/tell loop that never exceeds `budget` evaluations;
/// the last generation is truncated when the budget runs out mid-population.
MinimizeResult minimize(EvolutionStrategy& strategy, const std::function<double(const Eigen::VectorXd&)>& objective,
                        long budget);

/// BIPOP loop over a budget (ledger exact; partial last generation allowed).
BipopState bipop_step(Bipop& optimizer, const std::function<double(const Eigen::VectorXd&)>& evaluate, long budget);

}  // namespace latopt
