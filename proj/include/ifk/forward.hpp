#pragma once

#include <string_view>
#include <vector>

#include "ifk/models.hpp"

namespace ifk {

enum class ForwardKind { KF, KFWodf, KFWdf, EKF, EKFWodf, EKFWdf, EKFOneStep };

std::string_view to_string(ForwardKind kind);
ForwardKind parse_forward_kind(std::string_view text);
std::vector<std::string> forward_kind_names();

/// Running estimate of an adversary filter.
///
/// u_hat holds the delayed estimate u_hat_{k-1} for the without-DF filters
/// and the current u_hat_k for the with-DF filters. For the one-step form
/// x_hat is the prediction x_hat_{k|k-1}.
struct ForwardState {
  Vec x_hat;
  Vec u_hat;
  Mat Sigma_x;
  Mat Sigma_u;
  Mat Sigma_xu;  // KF-with-DF only
  Mat K_x;       // last state gain
  Mat K_u;       // last input gain (M for the KF variants)
  int k = 0;

  // Linearization and prediction of the last step.
  Mat F, B, H, D;
  Vec x_pred;
  Mat Sigma_pred;
  Mat S;
  JacobianSource jacobians = JacobianSource::Analytic;
};

/// Initial state. Checks the existence conditions that do not depend on the
/// estimate: rank(HB) = rank(B) = m for KF-without-DF, rank(D) = m for
/// KF-with-DF, and p >= m for the unknown-input EKFs.
ForwardState make_forward_state(ForwardKind kind, const SystemModel& model, Vec x0, Mat Sigma0,
                                Vec u0 = Vec(), Mat Sigma_u0 = Mat(), Mat Sigma_xu0 = Mat());

/// Everything a step computes before the observation arrives: linearization,
/// prediction, gains and the next covariances.
struct ForwardGains {
  Mat F, B, H, D;
  Vec x_pred;
  Mat Sigma_pred;
  Mat S;
  Mat K_x;
  Mat K_u;
  Mat Sigma_x, Sigma_u, Sigma_xu;
};

/// `u_known` is the known input of the plain KF/EKF; ignored elsewhere.
ForwardGains forward_gains(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                           const Vec& u_known = Vec());

ForwardState forward_update(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                            const ForwardGains& gains, const Vec& y, const Vec& u_known = Vec());

ForwardState forward_step(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                          const Vec& y, const Vec& u_known = Vec());

/// Moves covariances, gains and linearization to the next step while
/// leaving the estimates alone. Used by gain replicas, which set the
/// estimates themselves.
ForwardState advance_covariance(const ForwardState& state, const ForwardGains& gains);

ForwardState kf_step(const ForwardState& state, const SystemModel& model, const Vec& y,
                     const Vec& u_known = Vec());
ForwardState kf_wodf_step(const ForwardState& state, const SystemModel& model, const Vec& y);
ForwardState kf_wdf_step(const ForwardState& state, const SystemModel& model, const Vec& y);
ForwardState ekf_step(const ForwardState& state, const SystemModel& model, const Vec& y);
ForwardState ekf_wodf_step(const ForwardState& state, const SystemModel& model, const Vec& y);
ForwardState ekf_wdf_step(const ForwardState& state, const SystemModel& model, const Vec& y);
/// y is y_k, the observation at the time of the current estimate.
ForwardState ekf_one_step(const ForwardState& state, const SystemModel& model, const Vec& y);

/// Solves S X = B where S is an innovation covariance; NotSPD is reported
/// as SingularInnovation.
Mat solve_innovation(const Mat& S, const Mat& B);

}  // namespace ifk
