#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latopt/density_field.hpp"
#include "latopt/problem.hpp"

namespace latopt {

/// SIMP material constants. Structural: E(x) = e_min + x^penal (e0 - e_min).
/// Thermal: k(x) = k_min + x^penal (k0 - k_min).
struct MaterialModel {
  double e0 = 1.0;
  double e_min = 1e-9;
  double nu = 0.3;
  double penal = 3.0;
  double k0 = 1.0;
  double k_min = 1e-3;

  [[nodiscard]] double young(double x) const noexcept;
  [[nodiscard]] double conductivity(double x) const noexcept;
};

/// Throws std::invalid_argument unless 0 <= e_min < e0, 0 <= k_min < k0 and penal >= 1.
void validate(const MaterialModel& m);

enum class LinearSolver {
  automatic,  // Cholesky up to kCholeskyDofLimit free dofs, CG above
  cholesky,
  conjugate_gradient,
};

struct SolverOptions {
  LinearSolver solver = LinearSolver::automatic;
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 20000;
  static constexpr int kCholeskyDofLimit = 400000;
};

struct SolveStats {
  int free_dofs = 0;
  long long nonzeros = 0;  // stored entries of the lower triangle
  std::string method;
  int iterations = 0;  // CG iterations, 0 for Cholesky
  double residual = 0.0;
};

struct FemSolution {
  double objective = 0.0;
  Eigen::VectorXd state;  // full nodal vector (displacements or temperatures)
  SolveStats stats;
};

struct FemSensitivities {
  FemSolution solution;
  std::vector<double> gradient;  // d objective / d x_e, row-major elements
};

/// 8x8 bilinear plane-stress element stiffness for unit E on a unit square.
/// Local dof order: lower-left, lower-right, upper-right, upper-left node,
/// (x, y) per node.
Eigen::Matrix<double, 8, 8> plane_stress_element_stiffness(double nu);

/// 4x4 bilinear conduction matrix for unit k on a unit square, same node order.
Eigen::Matrix4d conduction_element_matrix();

/// Precomputed assembly for one problem: free-dof numbering, fill-reducing
/// ordering and the sparse pattern of the free-dof system. Immutable after
/// construction; `solve` allocates its own factorization, so one model can
/// serve concurrent callers.
class FemModel {
 public:
  explicit FemModel(const DesignProblem& problem, MaterialModel material = {}, SolverOptions options = {});

  [[nodiscard]] const DesignProblem& problem() const noexcept { return problem_; }
  [[nodiscard]] const MaterialModel& material() const noexcept { return material_; }
  [[nodiscard]] int free_dof_count() const noexcept { return static_cast<int>(free_dofs_.size()); }
  /// Global dofs of element e in local order.
  [[nodiscard]] std::span<const int> element_dofs(int e) const noexcept;
  /// Largest number of stored column indices in any row of the full free-dof matrix.
  [[nodiscard]] int max_row_nonzeros() const noexcept { return max_row_nonzeros_; }

  /// Compliance f^T u (structural) or thermal compliance f^T t.
  [[nodiscard]] FemSolution solve(const DensityField& x) const;
  [[nodiscard]] FemSensitivities solve_with_sensitivities(const DensityField& x) const;

 private:
  struct Impl;
  DesignProblem problem_;
  MaterialModel material_;
  SolverOptions options_;
  int dofs_per_element_ = 0;
  std::vector<int> element_dofs_;    // dofs_per_element_ per element
  std::vector<int> free_dofs_;       // global dof of each free index
  std::vector<int> free_index_;      // -1 for fixed dofs
  Eigen::VectorXd load_;             // full load vector
  Eigen::MatrixXd element_matrix_;   // unit-modulus element matrix
  int max_row_nonzeros_ = 0;
  std::shared_ptr<const Impl> impl_;  // sparse pattern + ordering

  FemSolution solve_impl(const DensityField& x) const;
};

/// Structural compliance; problem.physics must be structural.
FemSolution compliance(const DesignProblem& problem, const DensityField& x_phys, const MaterialModel& material = {});
FemSensitivities compliance_with_sensitivities(const DesignProblem& problem, const DensityField& x_phys,
                                               const MaterialModel& material = {});

/// Thermal compliance; problem.physics must be thermal.
FemSolution thermal_compliance(const DesignProblem& problem, const DensityField& x_phys,
                               const MaterialModel& material = {});
FemSensitivities thermal_compliance_with_sensitivities(const DesignProblem& problem, const DensityField& x_phys,
                                                       const MaterialModel& material = {});

}  // namespace latopt
