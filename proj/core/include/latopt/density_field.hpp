#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latopt {

/// Per-element material densities, row-major: `values[y * nelx + x]`, with
/// row y = 0 at the top of the domain (image orientation).
struct DensityField {
  int nelx = 0;
  int nely = 0;
  std::vector<double> values;

  DensityField() = default;
  DensityField(int nx, int ny, double fill = 0.0)
      : nelx(nx), nely(ny), values(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), fill) {}
  DensityField(int nx, int ny, std::vector<double> v) : nelx(nx), nely(ny), values(std::move(v)) {}

  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
  [[nodiscard]] double& at(int x, int y) { return values[static_cast<std::size_t>(y) * nelx + x]; }
  [[nodiscard]] double at(int x, int y) const { return values[static_cast<std::size_t>(y) * nelx + x]; }
  [[nodiscard]] std::span<const double> span() const noexcept { return values; }
  [[nodiscard]] double mean() const noexcept;

  friend bool operator==(const DensityField&, const DensityField&) = default;
};

}  // namespace latopt
