#pragma once

namespace latopt::detail {

/// In-place symmetric eigendecomposition of the n x n column-major matrix `a`
/// (upper triangle referenced). On return `a` holds the eigenvectors and
/// `values` the ascending eigenvalues. A LAPACK result that fails a probe
/// check is recomputed with Eigen. Returns false if both fail.
bool symmetric_eigen(int n, double* a, double* values);

}  // namespace latopt::detail
