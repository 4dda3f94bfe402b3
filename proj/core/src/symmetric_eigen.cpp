#include "symmetric_eigen.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace latopt::detail {

namespace {

// Residual of A p and orthogonality of V on a fixed probe vector; O(n^2).
bool plausible(const Eigen::MatrixXd& a, const Eigen::Map<Eigen::MatrixXd>& v,
               const Eigen::Map<Eigen::VectorXd>& w) {
  const Eigen::Index n = a.rows();
  Eigen::VectorXd p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = 1.0 + 0.5 * std::sin(1.3 * static_cast<double>(i));
  const Eigen::VectorXd vtp = v.transpose() * p;
  const double scale = std::max(w.cwiseAbs().maxCoeff(), 1e-300) * p.norm();
  const double residual = (a.selfadjointView<Eigen::Upper>() * p - v * w.cwiseProduct(vtp)).norm();
  const double orth = (v * vtp - p).norm() / p.norm();
  return residual <= 1e-8 * scale && orth <= 1e-8;
}

}  // namespace

bool symmetric_eigen(int n, double* a, double* values) {
  Eigen::Map<Eigen::MatrixXd> mat(a, n, n);
  Eigen::Map<Eigen::VectorXd> w(values, n);
  const Eigen::MatrixXd original = mat;
  if (LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', n, a, n, values) == 0 && w.allFinite() && mat.allFinite() &&
      plausible(original, mat, w)) {
    return true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(original.selfadjointView<Eigen::Upper>());
  if (solver.info() != Eigen::Success) return false;
  mat = solver.eigenvectors();
  w = solver.eigenvalues();
  return true;
}

}  // namespace latopt::detail
