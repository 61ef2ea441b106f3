#pragma once

#include <Eigen/Dense>

namespace ifk {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Solves A X = B for symmetric positive definite A using a Cholesky
/// factorization. When the factorization fails the diagonal is loaded with
/// lambda * trace(A)/n for lambda in {1e-12, 1e-10, 1e-8} before giving up
/// with ErrorCode::NotSPD.
Mat solve_spd(const Mat& A, const Mat& B);

/// solve_spd(A, I).
Mat inverse_spd(const Mat& A);

/// Largest singular value by power iteration on A^T A started from the
/// all-ones vector (at most 500 iterations).
double spectral_norm(const Mat& A);

/// True iff A is symmetric within tol and its smallest eigenvalue is at
/// least -tol. Both tolerances are scaled by max(1, max|A_ij|).
bool psd_check(const Mat& A, double tol);

Mat symmetrize(const Mat& A);

// Helpers shared by the filters and the stability toolkit.

double min_eigenvalue(const Mat& A);
double max_eigenvalue(const Mat& A);

/// Numerical rank: singular values above rel_tol * sigma_max.
int numerical_rank(const Mat& A, double rel_tol = 1e-10);

double spectral_radius(const Mat& A);

/// C with C^T C = A for symmetric PSD A, negative eigenvalues clipped at 0.
Mat psd_factor(const Mat& A);

/// L with L L^T = A for PSD A (A may be singular); colours white
/// Gaussian samples.
Mat psd_sqrt(const Mat& A);

bool all_finite(const Mat& A);
bool all_finite(const Vec& v);

/// Throws DimMismatch with `what` in the message when the shapes differ.
void require_shape(const Mat& A, Eigen::Index rows, Eigen::Index cols, const char* what);
void require_size(const Vec& v, Eigen::Index n, const char* what);

}  // namespace ifk
