#include "ifk/matkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "ifk/errors.hpp"

namespace ifk {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::InputCovSingular: return "InputCovSingular";
    case ErrorCode::SingularQ: return "SingularQ";
    case ErrorCode::SingularR: return "SingularR";
    case ErrorCode::SingularJ: return "SingularJ";
    case ErrorCode::DegenerateNoise: return "DegenerateNoise";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::MissingBound: return "MissingBound";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

namespace {

double max_abs(const Mat& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

bool symmetric_within(const Mat& A, double tol) {
  const double scale = std::max(1.0, max_abs(A));
  return A.rows() == A.cols() && max_abs(A - A.transpose()) <= tol * scale;
}

}  // namespace

Mat solve_spd(const Mat& A, const Mat& B) {
  if (A.rows() != A.cols()) {
    throw Error(ErrorCode::DimMismatch, "solve_spd: A is " + std::to_string(A.rows()) + "x" +
                                            std::to_string(A.cols()) + ", not square");
  }
  if (A.rows() != B.rows()) {
    throw Error(ErrorCode::DimMismatch, "solve_spd: A has " + std::to_string(A.rows()) +
                                            " rows but B has " + std::to_string(B.rows()));
  }
  if (A.rows() == 0) return Mat::Zero(0, B.cols());
  if (!all_finite(A) || !all_finite(B)) {
    throw Error(ErrorCode::NotSPD, "solve_spd: non-finite entries");
  }
  if (!symmetric_within(A, 1e-9)) {
    throw Error(ErrorCode::NotSPD, "solve_spd: A is not symmetric");
  }

  const Mat As = symmetrize(A);
  Eigen::LLT<Mat> llt(As);
  if (llt.info() == Eigen::Success) return llt.solve(B);

  const double n = static_cast<double>(As.rows());
  const double scale = std::abs(As.trace()) / n;
  constexpr std::array<double, 3> kJitter{1e-12, 1e-10, 1e-8};
  for (double lambda : kJitter) {
    const Mat Aj = As + lambda * std::max(scale, 1e-300) * Mat::Identity(As.rows(), As.cols());
    llt.compute(Aj);
    if (llt.info() == Eigen::Success) return llt.solve(B);
  }
  throw Error(ErrorCode::NotSPD, "solve_spd: Cholesky failed after maximum jitter");
}

Mat inverse_spd(const Mat& A) { return solve_spd(A, Mat::Identity(A.rows(), A.rows())); }

double spectral_norm(const Mat& A) {
  if (A.size() == 0) return 0.0;
  const Mat AtA = A.transpose() * A;
  const auto run = [&AtA](Vec v) {
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it) {
      const double norm = v.norm();
      if (norm == 0.0) return 0.0;
      v /= norm;
      const Vec w = AtA * v;
      const double next = v.dot(w);
      const bool converged = std::abs(next - lambda) <= 1e-12 * std::max(std::abs(next), 1e-300);
      lambda = next;
      v = w;
      if (converged) break;
    }
    return std::sqrt(std::max(lambda, 0.0));
  };

  double sigma = run(Vec::Ones(AtA.cols()));
  // The ones vector can be orthogonal to every dominant direction; fall back
  // to the coordinate axes so a nonzero matrix never reports norm 0.
  if (sigma == 0.0 && max_abs(A) > 0.0) {
    for (Eigen::Index i = 0; i < AtA.cols(); ++i) {
      sigma = std::max(sigma, run(Vec::Unit(AtA.cols(), i)));
    }
  }
  return sigma;
}

bool psd_check(const Mat& A, double tol) {
  if (A.rows() != A.cols()) {
    throw Error(ErrorCode::DimMismatch, "psd_check: matrix is not square");
  }
  if (A.size() == 0) return true;
  if (!all_finite(A)) return false;
  if (!symmetric_within(A, tol)) return false;
  const double scale = std::max(1.0, max_abs(A));
  return min_eigenvalue(A) >= -tol * scale;
}

Mat symmetrize(const Mat& A) {
  if (A.rows() != A.cols()) {
    throw Error(ErrorCode::DimMismatch, "symmetrize: matrix is not square");
  }
  return 0.5 * (A + A.transpose());
}

double min_eigenvalue(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

int numerical_rank(const Mat& A, double rel_tol) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(A);
  const Vec& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++rank;
  }
  return rank;
}

double spectral_radius(const Mat& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Mat psd_factor(const Mat& A) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(A));
  const Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return d.asDiagonal() * es.eigenvectors().transpose();
}

Mat psd_sqrt(const Mat& A) { return psd_factor(A).transpose(); }

bool all_finite(const Mat& A) { return A.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

void require_shape(const Mat& A, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (A.rows() != rows || A.cols() != cols) {
    throw Error(ErrorCode::DimMismatch, std::string(what) + ": expected " + std::to_string(rows) +
                                            "x" + std::to_string(cols) + ", got " +
                                            std::to_string(A.rows()) + "x" +
                                            std::to_string(A.cols()));
  }
}

void require_size(const Vec& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw Error(ErrorCode::DimMismatch, std::string(what) + ": expected length " +
                                            std::to_string(n) + ", got " +
                                            std::to_string(v.size()));
  }
}

}  // namespace ifk
