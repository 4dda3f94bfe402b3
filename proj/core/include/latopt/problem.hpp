#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace latopt {

enum class Physics { structural, thermal };

std::string_view to_string(Physics p) noexcept;
Physics physics_from_string(std::string_view s);

/// Point load on one nodal degree of freedom. For structural problems dof 0
/// is x and dof 1 is y (positive up); thermal problems only have dof 0.
struct PointLoad {
  int node = 0;
  int dof = 0;
  double magnitude = 0.0;
  friend bool operator==(const PointLoad&, const PointLoad&) = default;
};

/// Axis-aligned rectangle in element coordinates where density is forced to 0.
struct MaskRect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;
  [[nodiscard]] bool contains(int ex, int ey) const noexcept {
    return ex >= x0 && ex < x0 + w && ey >= y0 && ey < y0 + h;
  }
  friend bool operator==(const MaskRect&, const MaskRect&) = default;
};

/// One optimization task on a regular nelx x nely grid of unit square
/// elements.
///
/// Nodes are numbered column by column from the top-left corner:
/// `node(ix, iy) = ix * (nely + 1) + iy` with iy = 0 on the top edge. The
/// global dof of (node, d) is `node * dofs_per_node() + d`. Elements are
/// stored row-major like DensityField.
struct DesignProblem {
  std::string id;
  Physics physics = Physics::structural;
  int nelx = 64;
  int nely = 64;
  std::vector<PointLoad> loads;
  std::vector<int> fixed_dofs;
  std::optional<double> source;
  std::optional<MaskRect> mask;
  double volume_fraction = 0.3;

  [[nodiscard]] int dofs_per_node() const noexcept { return physics == Physics::structural ? 2 : 1; }
  [[nodiscard]] int node_count() const noexcept { return (nelx + 1) * (nely + 1); }
  [[nodiscard]] int dof_count() const noexcept { return node_count() * dofs_per_node(); }
  [[nodiscard]] int element_count() const noexcept { return nelx * nely; }
  [[nodiscard]] int node(int ix, int iy) const noexcept { return ix * (nely + 1) + iy; }
  [[nodiscard]] bool masked(int element) const noexcept {
    return mask && mask->contains(element % nelx, element / nelx);
  }
  /// 1 for design elements, 0 for masked ones, row-major.
  [[nodiscard]] std::vector<std::uint8_t> active_elements() const;
  [[nodiscard]] int active_count() const;

  friend bool operator==(const DesignProblem&, const DesignProblem&) = default;
};

/// Throws ProblemError naming the first violated invariant. With
/// `require_load` false an all-zero load case is accepted (FEM then returns
/// a zero objective).
void validate(const DesignProblem& problem, bool require_load = true);

enum class SetKind { in_distribution, out_of_distribution };
std::string_view to_string(SetKind k) noexcept;

struct ProblemSet {
  std::string name;
  SetKind kind = SetKind::in_distribution;
  std::uint64_t seed = 0;
  std::vector<DesignProblem> problems;

  [[nodiscard]] const DesignProblem* find(std::string_view id) const noexcept;
  friend bool operator==(const ProblemSet&, const ProblemSet&) = default;
};

/// Validates every problem and id uniqueness.
void validate(const ProblemSet& set);

/// Random point loads / point supports with an optional edge mask.
ProblemSet generate_in_distribution(int count, std::uint64_t rng_seed);

/// Parameterized classes with distributed loads and supports. Problem ids are
/// `<class>_<index>`; see `ood_classes()`.
ProblemSet generate_out_of_distribution(int count, std::uint64_t rng_seed);

const std::vector<std::string>& ood_classes();
/// Class name encoded in a generated out-of-distribution id ("" otherwise).
std::string ood_class_of(const DesignProblem& problem);

/// Square heat-conduction benchmark: uniform volumetric source, zero
/// temperature sink on the centred 20% of the left edge.
DesignProblem thermal_benchmark_problem(int nel = 64, double volume_fraction = 0.4, double source = 0.01);

/// Nodes fixed by a centred sink spanning `fraction` of the left edge:
/// ceil(fraction * (nely + 1)) nodes.
std::vector<int> centered_edge_sink(int nely, double fraction);

/// Classic MBB half-beam (symmetry on the left edge, roller bottom-right,
/// unit downward load at the top-left node).
DesignProblem mbb_half_beam(int nelx, int nely, double volume_fraction);

std::string to_json(const ProblemSet& set);
ProblemSet problem_set_from_json(std::string_view text);
ProblemSet load_problem_file(const std::filesystem::path& path);
void save_problem_file(const ProblemSet& set, const std::filesystem::path& path);

}  // namespace latopt
