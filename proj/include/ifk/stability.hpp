#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ifk/inverse.hpp"

namespace ifk {

/// Limiting gains of the forward KF-without-DF and the resulting inverse
/// system x_hat_{k+1} = F_bar x_hat_k + E_bar (H x_{k+1} + v_{k+1}).
struct LimitingGains {
  Mat K_bar, M_bar, F_bar, E_bar, Q_bar;
  Mat Sigma_fix;  // fixed point of the prediction covariance
  int iterations = 0;
  double residual = 0.0;
};

/// Iterates the KF-without-DF covariance recursion until successive
/// prediction covariances differ by less than tol (max-abs).
LimitingGains limiting_kf_wodf_gains(const SystemModel& model, const Mat& Sigma0,
                                     int max_iter = 500, double tol = 1e-10);

struct Theorem1Report {
  int n = 0;
  int observability_rank = 0;
  int controllability_rank = 0;
  double rank_rel_tol = 1e-10;
  Mat C;            // Q_bar = C^T C
  Mat Sigma_bar;    // inverse-filter Riccati fixed point (prediction form)
  bool riccati_converged = false;
  int riccati_iterations = 0;
  double riccati_residual = 0.0;
  double spectral_radius = 0.0;
  bool pass = false;
};

/// Observability of (F_bar, G), controllability of (F_bar, C), the inverse
/// Riccati fixed point and the spectral radius of
/// F_bar - F_bar Sigma G^T (G Sigma G^T + Sigma_eps)^-1 G. Passes iff the
/// Riccati iteration converged and the radius is below 1 - 1e-9.
/// Non-convergence is reported, not thrown.
Theorem1Report theorem1_check(const LimitingGains& gains, const Mat& G, const Mat& Sigma_eps,
                              int max_iter = 10000, double tol = 1e-12);

/// Stationary-Riccati residual max|Sigma - Ric(Sigma)| of the inverse filter.
double inverse_riccati_residual(const Mat& F_bar, const Mat& Q_bar, const Mat& G,
                                const Mat& Sigma_eps, const Mat& Sigma);

/// One filter step of one run as seen by the bound estimators.
struct StepRecord {
  Mat F, H, K, Sigma_pred;  // forward: F_k, H_{k+1}, gain, Sigma_{k+1|k}
  Mat Ux, Uy;               // instrumental diagonals, empty when not estimated
  // Inverse filter; empty when no inverse ran.
  Mat G, Sigma_bar_pred, Q_bar, F_tilde, K_bar, Ua;
};

struct Perturbations {
  double delta_Q = 0.0;      // added to Q
  double delta_R = 0.0;      // added to R
  double delta_Q_bar = 0.0;  // added to Q_bar
  double delta_eps = 0.0;    // added to Sigma_eps
};

struct BoundEstimates {
  std::optional<double> f_bar, h_bar, g_bar, k_bar;
  std::optional<double> sigma_lo, sigma_hi, q_lo, q_hi, r_lo, r_hi, p_lo, p_hi;
  std::optional<double> alpha_bar, beta_bar, gamma_bar, c_bar, d_bar, eps_bar;
  std::optional<double> q_hat, r_hat, c_hat, d_hat;
  std::vector<std::string> assumed;  // bounds set to 1 because they are not identifiable
  int runs = 0;
  int steps = 0;
};

enum class BoundSide { Forward, Inverse };

/// Empirical sup/inf of every bound over all records of all runs.
BoundEstimates estimate_bounds(const SystemModel& model,
                               const std::vector<std::vector<StepRecord>>& ensemble,
                               BoundSide which, const Perturbations& knobs = {});

enum class StabilityTheorem { Thm2, Thm3 };

struct InequalityReport {
  StabilityTheorem theorem = StabilityTheorem::Thm2;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  bool pass = false;
};

/// Theorem 2: sigma_hi gamma_bar h_bar^2 beta_bar^2 < r_hat.
/// Theorem 3: p_hi d_bar g_bar^2 c_bar^2 < d_hat. Throws MissingBound.
InequalityReport check_inequality(const BoundEstimates& b, StabilityTheorem which);

/// Diagonal instrumental matrices of one run:
///   (x_{k+1} - x_hat_{k+1|k} - w_k)_i / (F_k (x_k - x_hat_k))_i and
///   (y_{k+1} - h(x_hat_{k+1|k}) - v_{k+1})_i / (H_{k+1} (x_{k+1} - x_hat_{k+1|k}))_i.
/// Entries whose denominator is at most `guard` in magnitude are NaN and
/// flagged in the masks.
struct InstrumentalDiag {
  std::vector<Vec> ux, uy;
  std::vector<std::vector<bool>> ux_skipped, uy_skipped;
  int skipped = 0;
};

/// `run[k]` is the forward state after k steps (run[0] initial). Requires
/// a model without unknown input and a trajectory with stored noise.
InstrumentalDiag estimate_instrumental_diag(const SystemModel& model, const Trajectory& truth,
                                            const std::vector<ForwardState>& run, double guard);

/// Least-squares kappa in |f(x) - f(x_hat) - F (x - x_hat)| ~ kappa |x - x_hat|^2
/// and the same for h, over the given runs. Reported as a fit only.
struct RemainderFit {
  double kappa_phi = 0.0;
  double kappa_chi = 0.0;
  int samples = 0;
};
RemainderFit fit_taylor_remainders(const SystemModel& model,
                                   const std::vector<Trajectory>& truths,
                                   const std::vector<std::vector<ForwardState>>& runs);

/// Bundles the records of one run from stored filter states; `inv` may be
/// empty. The action instrumental diagonal compares g(x_hat_{k+1}) - g(x_dhat_{k+1|k})
/// with its linearization.
std::vector<StepRecord> step_records(const SystemModel& model, const Trajectory& truth,
                                     const std::vector<ForwardState>& fwd,
                                     const std::vector<InverseState>& inv, double guard = 1e-6);

// Report formatting: `key: value` lines and `quantity,value,pass` CSV rows.
std::string to_text(const LimitingGains& g);
std::string to_text(const Theorem1Report& r);
std::string to_text(const BoundEstimates& b);
std::string to_text(const InequalityReport& r);
std::string to_csv(const Theorem1Report& r);
std::string to_csv(const BoundEstimates& b);
std::string to_csv(const InequalityReport& r);

}  // namespace ifk
