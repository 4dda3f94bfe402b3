#include "latopt/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "latopt/errors.hpp"
#include "latopt/field_ops.hpp"

namespace latopt {

std::string_view to_string(BaselineMethod m) noexcept { return m == BaselineMethod::oc ? "oc" : "mma"; }

BaselineMethod baseline_method_from_string(std::string_view s) {
  if (s == "oc") return BaselineMethod::oc;
  if (s == "mma") return BaselineMethod::mma;
  throw ConfigError("unknown baseline method '" + std::string(s) + "'");
}

namespace {

bool is_active(std::span<const std::uint8_t> active, std::size_t i) { return active.empty() || active[i] != 0; }

}  // namespace

std::vector<double> oc_update(std::span<const double> x, std::span<const double> dc, std::span<const double> dv,
                              double move, double target,
                              const std::function<double(const std::vector<double>&)>& volume,
                              std::span<const std::uint8_t> active) {
  const std::size_t n = x.size();
  if (dc.size() != n || dv.size() != n) throw std::invalid_argument("oc_update: size mismatch");
  std::vector<double> xnew(n, 0.0);
  auto trial = [&](double l) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_active(active, i) || dv[i] <= 0.0) {
        xnew[i] = 0.0;
        continue;
      }
      const double be = std::sqrt(std::max(0.0, -dc[i]) / (l * dv[i]));
      const double lo = std::max(0.0, x[i] - move);
      const double hi = std::min(1.0, x[i] + move);
      xnew[i] = std::clamp(x[i] * be, lo, hi);
    }
    return volume(xnew);
  };

  double l1 = 0.0;
  double l2 = 1e9;
  for (int k = 0; k < 60 && trial(l2) > target; ++k) l2 *= 10.0;
  for (int it = 0; it < 200 && (l2 - l1) > 1e-14 * (l1 + l2); ++it) {
    const double mid = 0.5 * (l1 + l2);
    if (trial(mid) > target) {
      l1 = mid;
    } else {
      l2 = mid;
    }
  }
  trial(0.5 * (l1 + l2));
  return xnew;
}

namespace {

// Method of moving asymptotes for min f0(x) s.t. f1(x) <= 0 on [0, 1]^n,
// solved through its one-dimensional dual.
class MmaSolver {
 public:
  explicit MmaSolver(std::size_t n, double move) : move_(move), xold1_(n), xold2_(n), low_(n), upp_(n) {}

  std::vector<double> step(std::span<const double> x, std::span<const double> df0, double f1,
                           std::span<const double> df1, std::span<const std::uint8_t> active) {
    const std::size_t n = x.size();
    constexpr double kInit = 0.5;
    constexpr double kIncr = 1.2;
    constexpr double kDecr = 0.7;
    ++iter_;
    for (std::size_t j = 0; j < n; ++j) {
      if (iter_ <= 2) {
        low_[j] = x[j] - kInit;
        upp_[j] = x[j] + kInit;
      } else {
        const double s = (x[j] - xold1_[j]) * (xold1_[j] - xold2_[j]);
        const double g = s > 0.0 ? kIncr : (s < 0.0 ? kDecr : 1.0);
        low_[j] = std::clamp(x[j] - g * (xold1_[j] - low_[j]), x[j] - 10.0, x[j] - 0.01);
        upp_[j] = std::clamp(x[j] + g * (upp_[j] - xold1_[j]), x[j] + 0.01, x[j] + 10.0);
      }
    }

    std::vector<double> alpha(n), beta(n), p0(n), q0(n), p1(n), q1(n);
    double b1 = -f1;
    for (std::size_t j = 0; j < n; ++j) {
      alpha[j] = std::max({0.0, low_[j] + 0.1 * (x[j] - low_[j]), x[j] - move_});
      beta[j] = std::min({1.0, upp_[j] - 0.1 * (upp_[j] - x[j]), x[j] + move_});
      const double ux2 = (upp_[j] - x[j]) * (upp_[j] - x[j]);
      const double xl2 = (x[j] - low_[j]) * (x[j] - low_[j]);
      const double pos0 = std::max(df0[j], 0.0);
      const double neg0 = std::max(-df0[j], 0.0);
      p0[j] = ux2 * (1.001 * pos0 + 0.001 * neg0 + 1e-5);
      q0[j] = xl2 * (0.001 * pos0 + 1.001 * neg0 + 1e-5);
      p1[j] = ux2 * std::max(df1[j], 0.0);
      q1[j] = xl2 * std::max(-df1[j], 0.0);
      b1 += p1[j] / (upp_[j] - x[j]) + q1[j] / (x[j] - low_[j]);
    }

    std::vector<double> xnew(n, 0.0);
    auto primal = [&](double lam) {
      double g = -b1;
      for (std::size_t j = 0; j < n; ++j) {
        if (!is_active(active, j)) {
          xnew[j] = 0.0;
          continue;
        }
        const double sp = std::sqrt(p0[j] + lam * p1[j]);
        const double sq = std::sqrt(q0[j] + lam * q1[j]);
        const double xj = (sp * low_[j] + sq * upp_[j]) / (sp + sq);
        xnew[j] = std::clamp(xj, alpha[j], beta[j]);
        g += p1[j] / (upp_[j] - xnew[j]) + q1[j] / (xnew[j] - low_[j]);
      }
      return g;  // approximated constraint value, decreasing in lam
    };

    if (primal(0.0) > 0.0) {
      double lo = 0.0;
      double hi = 1.0;
      for (int k = 0; k < 200 && primal(hi) > 0.0; ++k) hi *= 2.0;
      for (int it = 0; it < 200 && (hi - lo) > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (primal(mid) > 0.0) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      primal(hi);
    }
    xold2_ = xold1_;
    xold1_.assign(x.begin(), x.end());
    return xnew;
  }

 private:
  double move_;
  int iter_ = 0;
  std::vector<double> xold1_, xold2_, low_, upp_;
};

}  // namespace

BaselineResult optimize_baseline(const DesignProblem& problem, const BaselineConfig& config) {
  validate(problem);
  if (config.iterations < 1) throw ConfigError("baseline iterations must be >= 1");
  if (!(config.move_limit > 0.0 && config.move_limit <= 1.0)) throw ConfigError("move limit must lie in (0, 1]");

  const FemModel model(problem, config.material);
  const ConeFilter filter(problem.nelx, problem.nely, config.filter_radius);
  const auto active = problem.active_elements();
  const auto n = static_cast<std::size_t>(problem.element_count());
  const double n_active = problem.active_count();
  const double target = problem.volume_fraction;

  auto physical = [&](const std::vector<double>& x) {
    DensityField xp = filter.apply(DensityField(problem.nelx, problem.nely, x));
    apply_mask(xp, active);
    return xp;
  };
  auto volume = [&](const std::vector<double>& x) { return active_mean(physical(x), active); };

  std::vector<double> dv_phys(n);
  for (std::size_t i = 0; i < n; ++i) dv_phys[i] = active[i] ? 1.0 / n_active : 0.0;
  const std::vector<double> dv = filter.apply_transpose(dv_phys);

  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = active[i] ? target : 0.0;

  BaselineResult r;
  r.objective_history.reserve(static_cast<std::size_t>(config.iterations));
  r.volume_history.reserve(static_cast<std::size_t>(config.iterations));
  MmaSolver mma(n, config.move_limit);

  for (int it = 0; it < config.iterations; ++it) {
    const DensityField xp = physical(x);
    FemSensitivities s;
    try {
      s = model.solve_with_sensitivities(xp);
    } catch (const SingularSystemError& e) {
      throw SingularSystemError("baseline iteration " + std::to_string(it) + ": " + e.what());
    }
    r.objective_history.push_back(s.solution.objective);
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) s.gradient[i] = 0.0;
    }
    const std::vector<double> dc = filter.apply_transpose(s.gradient);

    if (config.method == BaselineMethod::oc) {
      x = oc_update(x, dc, dv, config.move_limit, target, volume, active);
    } else {
      x = mma.step(x, dc, volume(x) - target, dv, active);
    }
    r.volume_history.push_back(volume(x));
  }

  r.variables = DensityField(problem.nelx, problem.nely, x);
  r.design = physical(x);
  r.objective = model.solve(r.design).objective;
  return r;
}

}  // namespace latopt
