#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "latopt/density_field.hpp"
#include "latopt/fem.hpp"
#include "latopt/problem.hpp"

namespace latopt {

enum class BaselineMethod { oc, mma };

std::string_view to_string(BaselineMethod m) noexcept;
BaselineMethod baseline_method_from_string(std::string_view s);

struct BaselineConfig {
  int iterations = 200;
  double move_limit = 0.2;
  BaselineMethod method = BaselineMethod::oc;
  double filter_radius = 2.0;
  MaterialModel material;
};

struct BaselineResult {
  DensityField design;     // filtered physical densities after the last update
  DensityField variables;  // unfiltered design variables
  /// Objective of the physical design evaluated at the start of each iteration.
  std::vector<double> objective_history;
  /// Mean physical density over unmasked elements after each update.
  std::vector<double> volume_history;
  double objective = 0.0;  // objective of `design`
};

/// Gradient-based reference optimizer. Starts from x = volume_fraction on
/// unmasked elements; each iteration filters, solves with sensitivities,
/// maps them back through the filter transpose and updates x with OC or a
/// single-constraint MMA step. SingularSystemError is rethrown with the
/// iteration index.
BaselineResult optimize_baseline(const DesignProblem& problem, const BaselineConfig& config = {});

/// One optimality-criteria update
///   x_new = clamp(x sqrt(-dc / (l dv)), x - move, x + move) within [0, 1]
/// with the multiplier l found by bisection so that `volume(x_new)` equals
/// `target`. Inactive elements (active[e] == 0) are set to 0.
std::vector<double> oc_update(std::span<const double> x, std::span<const double> dc, std::span<const double> dv,
                              double move, double target,
                              const std::function<double(const std::vector<double>&)>& volume,
                              std::span<const std::uint8_t> active = {});

}  // namespace latopt
