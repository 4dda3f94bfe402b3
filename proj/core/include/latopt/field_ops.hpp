#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "latopt/density_field.hpp"

namespace latopt {

/// Cone (hat) density filter with weights w_ij = max(0, radius - |c_i - c_j|)
/// over element centres. Near the boundary each row is renormalised by its
/// in-domain weight sum; there is no padding.
class ConeFilter {
 public:
  ConeFilter(int nelx, int nely, double radius = 2.0);

  [[nodiscard]] int nelx() const noexcept { return nelx_; }
  [[nodiscard]] int nely() const noexcept { return nely_; }
  [[nodiscard]] double radius() const noexcept { return radius_; }

  /// x~_i = sum_j w_ij x_j / sum_j w_ij
  [[nodiscard]] DensityField apply(const DensityField& x) const;
  /// Adjoint of `apply`: g_j = sum_i w_ij g~_i / sum_k w_ik. Used for the
  /// chain rule of sensitivities through the filter.
  [[nodiscard]] std::vector<double> apply_transpose(std::span<const double> g) const;

  [[nodiscard]] double row_sum(int element) const noexcept { return row_sum_[static_cast<std::size_t>(element)]; }

 private:
  int nelx_;
  int nely_;
  double radius_;
  int reach_;
  std::vector<int> offset_dx_;  // stencil of in-radius neighbours
  std::vector<int> offset_dy_;
  std::vector<double> offset_w_;
  std::vector<double> row_sum_;
};

struct SigmoidProjection {
  DensityField field;
  double offset = 0.0;  // the solved scalar b
  int iterations = 0;
};

/// Logistic function that does not overflow for large |t|.
double stable_sigmoid(double t) noexcept;

/// sigmoid(logits + b) with b found by bisection on [-40, 40] so that the
/// mean over unmasked elements equals `target_volume` within `tolerance`.
/// Masked elements (active[e] == 0) are set to 0. If every unmasked logit is
/// equal, b is taken in closed form.
SigmoidProjection constrained_sigmoid(const DensityField& logits, double target_volume,
                                      std::span<const std::uint8_t> active = {}, double tolerance = 1e-6);

/// Zeroes every element with active[e] == 0 (no-op for an empty mask).
void apply_mask(DensityField& x, std::span<const std::uint8_t> active);

/// Mean over unmasked elements.
double active_mean(const DensityField& x, std::span<const std::uint8_t> active = {});

/// {0,1} field with exactly round(target_volume * n_active) ones placed on
/// the largest densities; ties go to the lower element index.
DensityField threshold_preserving_volume(const DensityField& x, double target_volume,
                                         std::span<const std::uint8_t> active = {});

}  // namespace latopt
