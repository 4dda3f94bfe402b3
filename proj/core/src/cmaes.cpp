#include "latopt/cmaes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latopt/errors.hpp"
#include "symmetric_eigen.hpp"

namespace latopt {

std::string_view to_string(EsVariant v) noexcept { return v == EsVariant::cma ? "cma" : "bipop_cma"; }

std::string_view to_string(EsSettings s) noexcept { return s == EsSettings::defaults ? "default" : "custom"; }

EsVariant variant_from_string(std::string_view s) {
  if (s == "cma") return EsVariant::cma;
  if (s == "bipop_cma" || s == "bipop") return EsVariant::bipop_cma;
  throw ConfigError("unknown optimizer variant '" + std::string(s) + "'");
}

EsSettings settings_from_string(std::string_view s) {
  if (s == "default") return EsSettings::defaults;
  if (s == "custom") return EsSettings::custom;
  throw ConfigError("unknown optimizer settings '" + std::string(s) + "'");
}

std::string OptimizerConfig::label() const {
  std::string out = std::string(to_string(variant)) + "/" + std::string(to_string(settings));
  if (population) out += "/lambda" + std::to_string(*population);
  return out;
}

ResolvedConfig resolve(const OptimizerConfig& c) {
  ResolvedConfig r;
  r.variant = c.variant;
  r.seed = c.seed;
  r.restart = c.restart;
  const bool custom = c.settings == EsSettings::custom;
  if (custom) {
    if ((c.clip_low && *c.clip_low != -5.0) || (c.clip_high && *c.clip_high != 5.0)) {
      throw ConfigError("custom settings fix the clip range to [-5, 5]");
    }
    if (c.init && *c.init != InitMode::uniform_in_clip) {
      throw ConfigError("custom settings require uniform initialization in the clip range");
    }
    r.clip_low = -5.0;
    r.clip_high = 5.0;
    r.init = InitMode::uniform_in_clip;
    r.sigma0 = c.sigma0.value_or(2.0);
  } else {
    r.clip_low = c.clip_low;
    r.clip_high = c.clip_high;
    r.init = c.init.value_or(InitMode::zero_mean);
    r.sigma0 = c.sigma0.value_or(1.0);
  }
  if (r.clip_low.has_value() != r.clip_high.has_value()) throw ConfigError("clip range needs both bounds");
  if (r.clip_low && !(*r.clip_low < *r.clip_high)) throw ConfigError("clip_low must be below clip_high");
  if (r.init == InitMode::uniform_in_clip && !r.clip_low) {
    throw ConfigError("uniform_in_clip initialization requires a clip range");
  }
  if (!(r.sigma0 > 0.0) || !std::isfinite(r.sigma0)) throw ConfigError("sigma0 must be positive");
  if (c.population) {
    if (*c.population < 2) throw ConfigError("population size must be >= 2");
    r.population = *c.population;
  }
  return r;
}

int default_population(int n) noexcept { return 4 + static_cast<int>(std::floor(3.0 * std::log(n))); }

CmaParameters cma_parameters(int n, int lambda) {
  CmaParameters p;
  p.lambda = lambda;
  p.mu = lambda / 2;
  p.weights.resize(static_cast<std::size_t>(p.mu));
  for (int i = 0; i < p.mu; ++i) p.weights[i] = std::log((lambda + 1) / 2.0) - std::log(i + 1.0);
  const double sum = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  double sq = 0.0;
  for (auto& w : p.weights) {
    w /= sum;
    sq += w * w;
  }
  const double dn = n;
  p.mueff = 1.0 / sq;
  p.cs = (p.mueff + 2.0) / (dn + p.mueff + 5.0);
  p.ds = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mueff - 1.0) / (dn + 1.0)) - 1.0) + p.cs;
  p.cc = (4.0 + p.mueff / dn) / (dn + 4.0 + 2.0 * p.mueff / dn);
  p.c1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + p.mueff);
  p.cmu = std::min(1.0 - p.c1, 2.0 * (p.mueff - 2.0 + 1.0 / p.mueff) / ((dn + 2.0) * (dn + 2.0) + p.mueff));
  p.chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));
  return p;
}

// ---------------------------------------------------------------------------
// CMA-ES

namespace {

constexpr double kEigenFloor = 1e-20;

Eigen::VectorXd initial_mean(int n, const ResolvedConfig& c, CounterRng& rng) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  if (c.init == InitMode::uniform_in_clip) {
    for (int i = 0; i < n; ++i) m[i] = rng.uniform(*c.clip_low, *c.clip_high);
  }
  return m;
}

void check_fitness(std::span<const double> fitness) {
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (!std::isfinite(fitness[i])) {
      throw std::invalid_argument("non-finite fitness for candidate " + std::to_string(i) +
                                  "; map failed evaluations to a finite penalty");
    }
  }
}

}  // namespace

CmaEs::CmaEs(int n, const OptimizerConfig& config)
    : CmaEs(n, resolve(config), 0, 0.0, CounterRng(config.seed, 0xC3A)) {}

CmaEs::CmaEs(int n, const ResolvedConfig& config, int lambda, double sigma0, CounterRng rng) {
  if (n < 1) throw ConfigError("dimension must be >= 1");
  if (lambda <= 0) lambda = config.population > 0 ? config.population : default_population(n);
  if (lambda < 2) throw ConfigError("population size must be >= 2");
  CmaState& s = state_;
  s.n = n;
  s.params = cma_parameters(n, lambda);
  s.rng = rng;
  s.clip_low = config.clip_low;
  s.clip_high = config.clip_high;
  s.mean = initial_mean(n, config, s.rng);
  s.sigma = sigma0 > 0.0 ? sigma0 : config.sigma0;
  s.cov = Eigen::MatrixXd::Identity(n, n);
  s.basis = Eigen::MatrixXd::Identity(n, n);
  s.axis = Eigen::VectorXd::Ones(n);
  s.ps = Eigen::VectorXd::Zero(n);
  s.pc = Eigen::VectorXd::Zero(n);
}

std::vector<Eigen::VectorXd> CmaEs::ask() {
  CmaState& s = state_;
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(s.params.lambda));
  Eigen::MatrixXd z(s.n, s.params.lambda);
  for (int k = 0; k < s.params.lambda; ++k) {
    for (int i = 0; i < s.n; ++i) z(i, k) = s.axis[i] * s.rng.normal();
  }
  if (!s.identity_basis) z = s.basis * z;
  for (int k = 0; k < s.params.lambda; ++k) {
    Eigen::VectorXd x = s.mean + s.sigma * z.col(k);
    if (s.clip_low) x = x.cwiseMax(*s.clip_low).cwiseMin(*s.clip_high);
    out.push_back(std::move(x));
  }
  return out;
}

void CmaEs::tell_partial(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  check_fitness(fitness);
  if (fitness.size() > candidates.size()) throw std::invalid_argument("more fitness values than candidates");
  CmaState& s = state_;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (fitness[i] < s.best.f) {
      s.best.f = fitness[i];
      s.best.x = candidates[i];
    }
  }
  s.evaluations += static_cast<long>(fitness.size());
}

void CmaEs::tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  CmaState& s = state_;
  const auto& p = s.params;
  if (static_cast<int>(candidates.size()) != p.lambda || static_cast<int>(fitness.size()) != p.lambda) {
    throw std::invalid_argument("tell expects exactly lambda = " + std::to_string(p.lambda) + " candidates");
  }
  check_fitness(fitness);

  std::vector<int> order(static_cast<std::size_t>(p.lambda));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fitness[a] < fitness[b]; });

  // Recombination weights by rank. Tied fitness values inside the selected
  // set share their weights equally.
  std::vector<double> w(p.weights);
  for (int i = 0; i < p.mu;) {
    int j = i + 1;
    while (j < p.mu && fitness[order[j]] == fitness[order[i]]) ++j;
    if (j - i > 1) {
      const double avg = std::accumulate(w.begin() + i, w.begin() + j, 0.0) / (j - i);
      std::fill(w.begin() + i, w.begin() + j, avg);
    }
    i = j;
  }

  const int best_idx = order.front();
  const double gen_best = fitness[best_idx];
  const double gen_worst = fitness[order.back()];
  if (gen_best < s.best.f) {
    s.best.f = gen_best;
    s.best.x = candidates[best_idx];
    s.best_generation = s.generation + 1;
  }

  const Eigen::VectorXd old_mean = s.mean;
  Eigen::MatrixXd y(s.n, p.mu);
  Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(s.n);
  for (int i = 0; i < p.mu; ++i) {
    const auto& x = candidates[order[i]];
    new_mean += w[i] * x;
    y.col(i) = (x - old_mean) / s.sigma;
  }
  s.mean = new_mean;
  const Eigen::VectorXd yw = (new_mean - old_mean) / s.sigma;

  // C^{-1/2} yw = B D^{-1} B^T yw
  const Eigen::VectorXd inv_sqrt_yw = s.identity_basis
                                          ? Eigen::VectorXd(yw.cwiseQuotient(s.axis))
                                          : Eigen::VectorXd(s.basis * (s.basis.transpose() * yw).cwiseQuotient(s.axis));
  s.ps = (1.0 - p.cs) * s.ps + std::sqrt(p.cs * (2.0 - p.cs) * p.mueff) * inv_sqrt_yw;
  const double ps_norm = s.ps.norm();
  const double gen = static_cast<double>(s.generation + 1);
  const bool hsig =
      ps_norm / std::sqrt(1.0 - std::pow(1.0 - p.cs, 2.0 * gen)) / p.chi_n < 1.4 + 2.0 / (s.n + 1.0);
  s.pc = (1.0 - p.cc) * s.pc + (hsig ? std::sqrt(p.cc * (2.0 - p.cc) * p.mueff) : 0.0) * yw;

  const double old_weight = 1.0 - p.c1 - p.cmu + (hsig ? 0.0 : p.c1 * p.cc * (2.0 - p.cc));
  Eigen::MatrixXd yw_mat = y;
  for (int i = 0; i < p.mu; ++i) yw_mat.col(i) *= w[i];
  s.cov *= old_weight;
  s.cov.noalias() += p.c1 * s.pc * s.pc.transpose();
  s.cov.noalias() += p.cmu * yw_mat * y.transpose();

  s.sigma *= std::exp((p.cs / p.ds) * (ps_norm / p.chi_n - 1.0));

  s.generation += 1;
  s.evaluations += p.lambda;
  s.generation_best.push_back(gen_best);
  s.last_fitness_range = gen_worst - gen_best;

  if (static_cast<double>(s.evaluations - s.decomposed_at) > p.lambda / (p.c1 + p.cmu) / s.n / 10.0) decompose();
}

void CmaEs::decompose() {
  CmaState& s = state_;
  s.decomposed_at = s.evaluations;
  // symmetrize from the upper triangle
  s.cov.triangularView<Eigen::StrictlyLower>() = s.cov.transpose();
  Eigen::MatrixXd vectors = s.cov;
  Eigen::VectorXd values(s.n);
  if (!detail::symmetric_eigen(s.n, vectors.data(), values.data())) {
    throw std::runtime_error("eigendecomposition of the covariance matrix failed");
  }
  s.basis = std::move(vectors);
  s.identity_basis = false;
  s.axis = values.cwiseMax(kEigenFloor).cwiseSqrt();
}

double CmaEs::condition_number() const {
  const double hi = state_.axis.maxCoeff();
  const double lo = state_.axis.minCoeff();
  return (hi * hi) / (lo * lo);
}

std::string CmaEs::restart_reason(const RestartCriteria& c) const {
  const CmaState& s = state_;
  const auto& p = s.params;
  const auto hist = static_cast<std::size_t>(10 + std::ceil(30.0 * s.n / p.lambda));
  if (s.generation_best.size() >= hist) {
    const auto first = s.generation_best.end() - static_cast<long>(hist);
    const auto [lo, hi] = std::minmax_element(first, s.generation_best.end());
    if (std::max(*hi - *lo, s.last_fitness_range) < c.tolfun) return "tolfun";
  }
  if (s.generation > 0) {
    bool small = true;
    for (int i = 0; i < s.n && small; ++i) {
      small = s.sigma * std::abs(s.pc[i]) < c.tolx && s.sigma * std::sqrt(s.cov(i, i)) < c.tolx;
    }
    if (small) return "tolx";
  }
  if (condition_number() > c.max_condition) return "condition";
  const long window = c.stagnation_generations > 0
                          ? c.stagnation_generations
                          : 120 + static_cast<long>(std::ceil(30.0 * s.n / p.lambda));
  if (s.generation - s.best_generation >= window) return "stagnation";
  if (!std::isfinite(s.sigma) || s.sigma <= 0.0) return "sigma";
  return {};
}

// ---------------------------------------------------------------------------
// BIPOP

Bipop::Bipop(int n, const OptimizerConfig& config)
    : n_(n), config_(resolve(config)), restart_rng_(config.seed, 0xB1B0) {
  const int lambda_default = config_.population > 0 ? config_.population : default_population(n);
  state_.lambda_default = lambda_default;
  state_.lambda_large = lambda_default;
  state_.sigma_default = config_.sigma0;
  state_.regime = Regime::large;
  inner_ = std::make_unique<CmaEs>(n, config_, lambda_default, config_.sigma0, restart_rng_.split(0));
  state_.history.push_back({0, Regime::large, lambda_default, config_.sigma0, 0, {}});
}

std::vector<Eigen::VectorXd> Bipop::ask() { return inner_->ask(); }

void Bipop::account(long evals, std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  (state_.regime == Regime::large ? state_.budget_large : state_.budget_small) += evals;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (fitness[i] < state_.best.f) {
      state_.best.f = fitness[i];
      state_.best.x = candidates[i];
    }
  }
}

void Bipop::tell(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  inner_->tell(candidates, fitness);
  account(static_cast<long>(fitness.size()), candidates, fitness);
  ++generations_;
  if (auto reason = inner_->restart_reason(config_.restart); !reason.empty()) restart(std::move(reason));
}

void Bipop::tell_partial(std::span<const Eigen::VectorXd> candidates, std::span<const double> fitness) {
  inner_->tell_partial(candidates, fitness);
  account(static_cast<long>(fitness.size()), candidates, fitness);
}

void Bipop::restart(std::string reason) {
  ++state_.restarts;
  const int index = state_.restarts;
  CounterRng rng = restart_rng_.split(static_cast<std::uint64_t>(index));
  // Restart 1 is large; afterwards the regimes alternate.
  const bool large = index == 1 || state_.regime == Regime::small;
  int lambda = 0;
  double sigma = config_.sigma0;
  if (large) {
    state_.regime = Regime::large;
    state_.lambda_large *= 2;
    lambda = state_.lambda_large;
  } else {
    state_.regime = Regime::small;
    const double u = rng.uniform();
    const double u_sigma = rng.uniform();
    const double ratio = static_cast<double>(state_.lambda_large) / state_.lambda_default;
    lambda = static_cast<int>(std::floor(state_.lambda_default * std::pow(ratio, u * u)));
    lambda = std::max(lambda, 2);
    sigma = config_.sigma0 * std::pow(10.0, -2.0 * u_sigma);
  }
  inner_ = std::make_unique<CmaEs>(n_, config_, lambda, sigma, rng.split(0));
  state_.history.push_back({index, state_.regime, lambda, sigma, evaluations(), std::move(reason)});
}

std::unique_ptr<EvolutionStrategy> make_strategy(int n, const OptimizerConfig& config) {
  if (config.variant == EsVariant::bipop_cma) return std::make_unique<Bipop>(n, config);
  return std::make_unique<CmaEs>(n, config);
}

MinimizeResult minimize(EvolutionStrategy& strategy, const std::function<double(const Eigen::VectorXd&)>& objective,
                        long budget) {
  MinimizeResult r;
  const long start = strategy.evaluations();
  while (strategy.evaluations() - start < budget) {
    auto candidates = strategy.ask();
    const long remaining = budget - (strategy.evaluations() - start);
    const auto k = static_cast<std::size_t>(std::min<long>(remaining, static_cast<long>(candidates.size())));
    std::vector<double> fitness(k);
    for (std::size_t i = 0; i < k; ++i) fitness[i] = objective(candidates[i]);
    if (k == candidates.size()) {
      strategy.tell(candidates, fitness);
    } else {
      strategy.tell_partial(std::span<const Eigen::VectorXd>(candidates.data(), k), fitness);
    }
    r.trace.push_back({strategy.evaluations() - start, strategy.best().f});
  }
  r.best = strategy.best();
  r.evaluations = strategy.evaluations() - start;
  r.generations = strategy.generations();
  return r;
}

BipopState bipop_step(Bipop& optimizer, const std::function<double(const Eigen::VectorXd&)>& evaluate, long budget) {
  if (budget < optimizer.inner().state().params.lambda) {
    throw ConfigError("budget must cover at least one generation");
  }
  minimize(optimizer, evaluate, budget);
  return optimizer.state();
}

}  // namespace latopt
