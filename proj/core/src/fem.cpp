#include "latopt/fem.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "latopt/errors.hpp"

namespace latopt {

double MaterialModel::young(double x) const noexcept { return e_min + std::pow(x, penal) * (e0 - e_min); }

double MaterialModel::conductivity(double x) const noexcept { return k_min + std::pow(x, penal) * (k0 - k_min); }

void validate(const MaterialModel& m) {
  if (!(m.e_min >= 0.0 && m.e_min < m.e0)) throw std::invalid_argument("material: require 0 <= e_min < e0");
  if (!(m.k_min >= 0.0 && m.k_min < m.k0)) throw std::invalid_argument("material: require 0 <= k_min < k0");
  if (!(m.penal >= 1.0)) throw std::invalid_argument("material: penal must be >= 1");
  if (!(m.nu > -1.0 && m.nu < 0.5)) throw std::invalid_argument("material: nu must lie in (-1, 0.5)");
}

Eigen::Matrix<double, 8, 8> plane_stress_element_stiffness(double nu) {
  // Closed form of the 88-line code for a unit square, plane stress.
  Eigen::Matrix4d a11, a12, b11, b12;
  a11 << 12, 3, -6, -3, 3, 12, 3, 0, -6, 3, 12, -3, -3, 0, -3, 12;
  a12 << -6, -3, 0, 3, -3, -6, -3, -6, 0, -3, -6, 3, 3, -6, 3, -6;
  b11 << -4, 3, -2, 9, 3, -4, -9, 4, -2, -9, -4, -3, 9, 4, -3, -4;
  b12 << 2, -3, 4, -9, -3, 2, 9, -2, 4, 9, 2, 3, -9, -2, 3, 2;
  Eigen::Matrix<double, 8, 8> t1, t2;
  t1 << a11, a12, a12.transpose(), a11;
  t2 << b11, b12, b12.transpose(), b11;
  return (t1 + nu * t2) / (24.0 * (1.0 - nu * nu));
}

Eigen::Matrix4d conduction_element_matrix() {
  Eigen::Matrix4d k;
  k << 4, -1, -2, -1, -1, 4, -1, -2, -2, -1, 4, -1, -1, -2, -1, 4;
  return k / 6.0;
}

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct FemModel::Impl {
  int n = 0;
  Eigen::VectorXi new_of_free;  // permuted position of each free index
  std::vector<int> col_ptr;     // lower-triangular CSC in permuted numbering
  std::vector<int> row_idx;
  // Per element: contiguous (local a, local b, slot) triples where the pair
  // lands in the stored lower triangle.
  std::vector<int> scatter_begin;
  std::vector<int> scatter_local;
  std::vector<int> scatter_slot;
};

FemModel::FemModel(const DesignProblem& problem, MaterialModel material, SolverOptions options)
    : problem_(problem), material_(material), options_(options) {
  validate(problem_, false);
  validate(material_);
  const bool structural = problem_.physics == Physics::structural;
  dofs_per_element_ = structural ? 8 : 4;
  if (structural) {
    element_matrix_ = plane_stress_element_stiffness(material_.nu);
  } else {
    element_matrix_ = conduction_element_matrix();
  }

  const int nel = problem_.element_count();
  const int dpn = problem_.dofs_per_node();
  element_dofs_.resize(static_cast<std::size_t>(nel) * dofs_per_element_);
  for (int ey = 0; ey < problem_.nely; ++ey) {
    for (int ex = 0; ex < problem_.nelx; ++ex) {
      const int e = ey * problem_.nelx + ex;
      const int nodes[4] = {problem_.node(ex, ey + 1), problem_.node(ex + 1, ey + 1), problem_.node(ex + 1, ey),
                            problem_.node(ex, ey)};
      int* out = &element_dofs_[static_cast<std::size_t>(e) * dofs_per_element_];
      for (int k = 0; k < 4; ++k) {
        for (int d = 0; d < dpn; ++d) out[k * dpn + d] = nodes[k] * dpn + d;
      }
    }
  }

  const int ndof = problem_.dof_count();
  free_index_.assign(static_cast<std::size_t>(ndof), 0);
  for (const int d : problem_.fixed_dofs) free_index_[d] = -1;
  for (int d = 0; d < ndof; ++d) {
    if (free_index_[d] >= 0) {
      free_index_[d] = static_cast<int>(free_dofs_.size());
      free_dofs_.push_back(d);
    }
  }

  load_ = Eigen::VectorXd::Zero(ndof);
  for (const auto& l : problem_.loads) load_[l.node * dpn + l.dof] += l.magnitude;
  if (problem_.source && *problem_.source != 0.0) {
    // uniform volumetric source on unit-area elements, lumped to the 4 nodes
    const double share = *problem_.source / 4.0;
    for (int e = 0; e < nel; ++e) {
      for (int a = 0; a < 4; ++a) load_[element_dofs_[static_cast<std::size_t>(e) * 4 + a]] += share;
    }
  }

  // Pattern of the full free-dof matrix.
  auto impl = std::make_shared<Impl>();
  const int n = free_dof_count();
  impl->n = n;
  std::vector<Eigen::Triplet<double, int>> trips;
  trips.reserve(static_cast<std::size_t>(nel) * dofs_per_element_ * dofs_per_element_);
  for (int e = 0; e < nel; ++e) {
    const auto dofs = element_dofs(e);
    for (int a = 0; a < dofs_per_element_; ++a) {
      const int fa = free_index_[dofs[a]];
      if (fa < 0) continue;
      for (int b = 0; b < dofs_per_element_; ++b) {
        const int fb = free_index_[dofs[b]];
        if (fb >= 0) trips.emplace_back(fa, fb, 1.0);
      }
    }
  }
  SparseMatrix pattern(n, n);
  pattern.setFromTriplets(trips.begin(), trips.end());
  pattern.makeCompressed();
  for (int c = 0; c < n; ++c) {
    max_row_nonzeros_ = std::max(max_row_nonzeros_, pattern.outerIndexPtr()[c + 1] - pattern.outerIndexPtr()[c]);
  }

  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
  Eigen::AMDOrdering<int> amd;
  amd(pattern, pinv);
  const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm = pinv.inverse();
  impl->new_of_free = perm.indices();

  // Lower-triangular pattern in permuted numbering.
  std::vector<std::vector<int>> cols(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    for (SparseMatrix::InnerIterator it(pattern, c); it; ++it) {
      const int pr = impl->new_of_free[it.row()];
      const int pc = impl->new_of_free[c];
      if (pr >= pc) cols[pc].push_back(pr);
    }
  }
  impl->col_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (int c = 0; c < n; ++c) {
    std::sort(cols[c].begin(), cols[c].end());
    impl->col_ptr[c + 1] = impl->col_ptr[c] + static_cast<int>(cols[c].size());
  }
  impl->row_idx.reserve(static_cast<std::size_t>(impl->col_ptr[n]));
  for (auto& col : cols) impl->row_idx.insert(impl->row_idx.end(), col.begin(), col.end());

  auto slot_of = [&](int row, int col) {
    const auto first = impl->row_idx.begin() + impl->col_ptr[col];
    const auto last = impl->row_idx.begin() + impl->col_ptr[col + 1];
    return static_cast<int>(std::lower_bound(first, last, row) - impl->row_idx.begin());
  };
  impl->scatter_begin.assign(static_cast<std::size_t>(nel) + 1, 0);
  for (int e = 0; e < nel; ++e) {
    const auto dofs = element_dofs(e);
    for (int a = 0; a < dofs_per_element_; ++a) {
      const int fa = free_index_[dofs[a]];
      if (fa < 0) continue;
      for (int b = 0; b < dofs_per_element_; ++b) {
        const int fb = free_index_[dofs[b]];
        if (fb < 0) continue;
        const int pa = impl->new_of_free[fa];
        const int pb = impl->new_of_free[fb];
        if (pa < pb) continue;
        impl->scatter_local.push_back(a * dofs_per_element_ + b);
        impl->scatter_slot.push_back(slot_of(pa, pb));
      }
    }
    impl->scatter_begin[e + 1] = static_cast<int>(impl->scatter_slot.size());
  }
  impl_ = std::move(impl);
}

std::span<const int> FemModel::element_dofs(int e) const noexcept {
  return {element_dofs_.data() + static_cast<std::size_t>(e) * dofs_per_element_,
          static_cast<std::size_t>(dofs_per_element_)};
}

namespace {

std::string describe_loads(const DesignProblem& p) {
  std::ostringstream os;
  int shown = 0;
  for (const auto& l : p.loads) {
    if (l.magnitude == 0.0) continue;
    if (shown++ == 6) {
      os << ", ...";
      break;
    }
    os << (shown > 1 ? ", " : "") << "node " << l.node << " dof " << l.dof;
  }
  if (p.source && *p.source != 0.0) os << (shown > 0 ? ", " : "") << "uniform source";
  return os.str();
}

}  // namespace

FemSolution FemModel::solve_impl(const DensityField& x) const {
  if (x.nelx != problem_.nelx || x.nely != problem_.nely) {
    throw std::invalid_argument("density field is " + std::to_string(x.nelx) + "x" + std::to_string(x.nely) +
                                ", problem '" + problem_.id + "' expects " + std::to_string(problem_.nelx) + "x" +
                                std::to_string(problem_.nely));
  }
  const Impl& im = *impl_;
  const int n = im.n;
  const bool structural = problem_.physics == Physics::structural;

  std::vector<double> values(im.row_idx.size(), 0.0);
  const double* ke = element_matrix_.data();  // column-major, symmetric
  for (int e = 0; e < problem_.element_count(); ++e) {
    const double xe = x.values[static_cast<std::size_t>(e)];
    if (!(xe >= 0.0 && xe <= 1.0)) {
      throw std::invalid_argument("density " + std::to_string(xe) + " at element " + std::to_string(e) +
                                  " outside [0, 1]");
    }
    const double modulus = structural ? material_.young(xe) : material_.conductivity(xe);
    for (int k = im.scatter_begin[e]; k < im.scatter_begin[e + 1]; ++k) {
      values[im.scatter_slot[k]] += modulus * ke[im.scatter_local[k]];
    }
  }

  Eigen::VectorXd rhs(n);
  for (int f = 0; f < n; ++f) rhs[im.new_of_free[f]] = load_[free_dofs_[f]];

  FemSolution sol;
  sol.stats.free_dofs = n;
  sol.stats.nonzeros = static_cast<long long>(values.size());
  sol.state = Eigen::VectorXd::Zero(problem_.dof_count());
  if (rhs.isZero(0.0)) {
    sol.stats.method = "trivial";
    return sol;
  }

  const Eigen::Map<const SparseMatrix> lower(n, n, static_cast<int>(values.size()), im.col_ptr.data(),
                                             im.row_idx.data(), values.data());
  const bool use_cg =
      options_.solver == LinearSolver::conjugate_gradient ||
      (options_.solver == LinearSolver::automatic && n > SolverOptions::kCholeskyDofLimit);

  Eigen::VectorXd y;
  auto singular = [&](const std::string& why) {
    return SingularSystemError("problem '" + problem_.id + "': singular free-dof system (" + why +
                               "); structure is not restrained for loads at " + describe_loads(problem_));
  };
  if (!use_cg) {
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>> llt;
    llt.compute(SparseMatrix(lower));
    if (llt.info() != Eigen::Success) throw singular("non-positive pivot");
    const auto& l = llt.matrixL();
    Eigen::VectorXd diag(n);
    for (int c = 0; c < n; ++c) diag[c] = l.nestedExpression().valuePtr()[l.nestedExpression().outerIndexPtr()[c]];
    const double dmax = diag.cwiseAbs2().maxCoeff();
    const double dmin = diag.cwiseAbs2().minCoeff();
    if (!(dmin > 1e-13 * dmax)) throw singular("pivot ratio " + std::to_string(dmin / dmax));
    y = llt.solve(rhs);
    sol.stats.method = "cholesky";
  } else {
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(options_.cg_tolerance);
    cg.setMaxIterations(options_.cg_max_iterations);
    cg.compute(lower);
    y = cg.solve(rhs);
    sol.stats.method = "cg";
    sol.stats.iterations = static_cast<int>(cg.iterations());
    sol.stats.residual = cg.error();
    if (cg.info() != Eigen::Success) throw singular("CG did not converge");
  }
  if (!y.allFinite()) throw singular("non-finite solution");

  for (int f = 0; f < n; ++f) sol.state[free_dofs_[f]] = y[im.new_of_free[f]];
  sol.objective = load_.dot(sol.state);
  return sol;
}

FemSolution FemModel::solve(const DensityField& x) const { return solve_impl(x); }

FemSensitivities FemModel::solve_with_sensitivities(const DensityField& x) const {
  FemSensitivities out;
  out.solution = solve_impl(x);
  const bool structural = problem_.physics == Physics::structural;
  const double span = structural ? material_.e0 - material_.e_min : material_.k0 - material_.k_min;
  const int nel = problem_.element_count();
  out.gradient.resize(static_cast<std::size_t>(nel));
  Eigen::VectorXd ue(dofs_per_element_);
  for (int e = 0; e < nel; ++e) {
    const auto dofs = element_dofs(e);
    for (int a = 0; a < dofs_per_element_; ++a) ue[a] = out.solution.state[dofs[a]];
    const double energy = ue.dot(element_matrix_ * ue);
    const double xe = x.values[static_cast<std::size_t>(e)];
    out.gradient[e] = -material_.penal * std::pow(xe, material_.penal - 1.0) * span * energy;
  }
  return out;
}

namespace {

void require(const DesignProblem& p, Physics physics) {
  if (p.physics != physics) {
    throw std::invalid_argument("problem '" + p.id + "' is " + std::string(to_string(p.physics)) + ", expected " +
                                std::string(to_string(physics)));
  }
}

}  // namespace

FemSolution compliance(const DesignProblem& problem, const DensityField& x_phys, const MaterialModel& material) {
  require(problem, Physics::structural);
  return FemModel(problem, material).solve(x_phys);
}

FemSensitivities compliance_with_sensitivities(const DesignProblem& problem, const DensityField& x_phys,
                                               const MaterialModel& material) {
  require(problem, Physics::structural);
  return FemModel(problem, material).solve_with_sensitivities(x_phys);
}

FemSolution thermal_compliance(const DesignProblem& problem, const DensityField& x_phys,
                               const MaterialModel& material) {
  require(problem, Physics::thermal);
  return FemModel(problem, material).solve(x_phys);
}

FemSensitivities thermal_compliance_with_sensitivities(const DesignProblem& problem, const DensityField& x_phys,
                                                       const MaterialModel& material) {
  require(problem, Physics::thermal);
  return FemModel(problem, material).solve_with_sensitivities(x_phys);
}

}  // namespace latopt
