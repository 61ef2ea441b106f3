#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ifk/models.hpp"

namespace ifk {

/// Fisher information J_k of the state at time k.
struct InfoMatrix {
  Mat J;
  int k = 0;
};

/// Q + delta I when Q is singular (smallest eigenvalue below
/// 1e-10 max(1, largest eigenvalue)), Q otherwise.
Mat enlarge_if_singular(const Mat& Q, double delta = 1e-10);

/// Additive-Gaussian recursion
///   J_{k+1} = Q^-1 + H^T R^-1 H - Q^-1 F (J_k + F^T Q^-1 F)^-1 F^T Q^-1,
/// evaluated in the equivalent form (Q + F J_k^-1 F^T)^-1 + H^T R^-1 H,
/// which stays well conditioned when Q is nearly singular.
InfoMatrix info_step_additive(const InfoMatrix& J, const Mat& F, const Mat& H_next, const Mat& Q,
                              const Mat& R);

/// Transition density x_{k+1} ~ N(mean(x_k), Q(x_k)) and observation
/// y_{k+1} ~ N(h(x_{k+1}), R). Non-additive noise is brought into this form
/// by pushing it through its Jacobian at the sampled point.
struct GaussianTransition {
  StateMap mean;
  StateJacobian F;  // Jacobian of mean at x_k
  StateJacobian Q;  // process covariance at x_k
  StateJacobian H;  // observation Jacobian at x_{k+1}
  Mat R;
};

GaussianTransition additive_transition(const SystemModel& model, const Vec& u_k,
                                       const Vec& u_next);

/// Monte-Carlo estimates of
///   D11 = E[F^T Q^-1 F], D12 = -E[F^T Q^-1], D22 = E[Q^-1] + E[H^T R^-1 H]
/// with element-wise standard errors.
struct DTerms {
  Mat D11, D12, D22;
  Mat se11, se12, se22;
  int samples = 0;
};

/// `sample_state` draws x_k; sample i uses Rng(seed, i).
DTerms info_step_general_mc(const GaussianTransition& tr,
                            const std::function<Vec(Rng&)>& sample_state, int samples,
                            std::uint64_t seed);

/// J_{k+1} = D22 - D21 (J_k + D11)^-1 D12.
InfoMatrix info_step_general(const InfoMatrix& J, const DTerms& d);

/// sqrt(Tr(J^-1)).
double rcrlb_scalar(const InfoMatrix& J);
/// Tr of the leading `dim` x `dim` block of J^-1.
double inverse_trace(const Mat& J, Eigen::Index dim);

/// J_0 .. J_K along a true trajectory with Jacobians at the true states.
std::vector<InfoMatrix> additive_info_series(const SystemModel& model, const Trajectory& truth,
                                             const Mat& J0);

}  // namespace ifk
