#pragma once

#include <string_view>
#include <utility>
#include <vector>

#include "ifk/forward.hpp"

namespace ifk {

enum class InverseKind { IKF, IKFWodf, IKFWdf, IEKF, IEKFWodf, IEKFWdf, IEKFOneStep };

std::string_view to_string(InverseKind kind);
InverseKind parse_inverse_kind(std::string_view text);
std::vector<std::string> inverse_kind_names();

/// The forward filter an inverse filter is built against.
ForwardKind forward_kind_for(InverseKind kind);
InverseKind inverse_kind_for(ForwardKind kind);

/// True when the inverse state carries an input slot after x_hat.
bool is_augmented(InverseKind kind);

enum class JacobianMode {
  Analytic,          // chain rule through the model's Jacobians (FD where the model has none)
  FiniteDifference,  // central differences on the composed transition maps
};

struct InverseOptions {
  JacobianMode jacobians = JacobianMode::Analytic;
  double q_bar_delta = 0.0;  // added to Q_bar as delta * I
};

/// Linearized transition of the inverse filter for one step:
/// z_{k+1} ~ Fz z_k + (exogenous terms) + Fv v, with Q_bar = Fv blkdiag(R) Fv^T.
struct InverseLinearization {
  Mat Fz;
  Mat Fv;
  Mat Q_bar;
};

/// Input gain and H_k B_{k-1} of the previous forward step; the
/// without-DF inverse transition needs them.
struct PreviousGains {
  Mat K_u;
  Mat HB;
};

struct InverseState {
  Vec x_dhat;       // estimate of x_hat_k
  Vec u_dhat;       // input slot: u_hat_{k-2} (without-DF) or u_hat_k (with-DF)
  Mat Sigma_bar;    // over [x_dhat; u_dhat]
  Vec x_dhat_prev;  // x_dhat_{k-1}, surrogate for the unknown x_hat_{k-1}
  int k = 0;

  ForwardState replica;  // defender's copy of the forward gain recursion
  std::optional<PreviousGains> prev;

  InverseOptions options;

  // Diagnostics of the last step.
  Vec z_pred;
  Mat Sigma_pred;
  Mat S_bar;
  Mat G;
  InverseLinearization lin;

  Vec z() const;
};

/// `replica` is the forward state the defender assumes at k = 0 (its
/// estimates are replaced by the inverse estimates before every step).
/// z0 = [x_dhat_0; u_dhat_0] for augmented kinds, x_dhat_0 otherwise.
InverseState make_inverse_state(InverseKind kind, const SystemModel& model, const Vec& z0,
                                const Mat& Sigma_bar0, ForwardState replica,
                                InverseOptions options = {});

/// Exogenous knowledge of the defender for one step k -> k+1.
struct InverseInputs {
  Vec a;            // a_{k+1}; a_k for the one-step form
  Vec x_true;       // x_k
  Vec x_true_next;  // x_{k+1}
  Vec u_true_next;  // u_{k+1}, with-DF kinds only
};

InverseState inverse_step(InverseKind kind, const SystemModel& model, const InverseState& state,
                          const InverseInputs& in);

/// Same step with the forward gains supplied instead of replicated.
InverseState inverse_step_with_gains(InverseKind kind, const SystemModel& model,
                                     const InverseState& state, const InverseInputs& in,
                                     const ForwardGains& gains);

InverseState ikf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                      const Vec& x_true_next);
InverseState ikf_wodf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true_next);
InverseState ikf_wdf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                          const Vec& x_true_next, const Vec& u_true_next);
InverseState iekf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                       const Vec& x_true_next);
InverseState iekf_wodf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                            const Vec& x_true, const Vec& x_true_next);
InverseState iekf_wdf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true_next, const Vec& u_true_next);
/// a = a_k and x_true = x_k: the one-step form consumes current quantities.
InverseState iekf_one_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true);

/// Advances the replica one step at the inverse estimates and returns the
/// forward gains for this step.
ForwardGains replicate_forward_gain(ForwardState& replica, ForwardKind kind,
                                    const SystemModel& model, const Vec& x_est, const Vec& u_est);

// Transition maps of the unknown-input inverse filters, exposed for testing.

/// u_hat_{k-1} = K^u_{k-1} (H_k B_{k-1} u_hat_{k-2} - h(f(x_hat_{k-1}, u_hat_{k-2})) + h(x_k) + v_k)
Vec iekf_wodf_input_map(const SystemModel& model, const Vec& u_km2, const Vec& x_hat_km1,
                        const Vec& x_true, const PreviousGains& prev, const Vec& v);
/// x_hat_{k+1} = f(x_hat_k, u_hat_{k-1}) - K^x h(f(.)) + K^x h(x_{k+1}) + K^x v_{k+1}
Vec iekf_wodf_state_map(const SystemModel& model, const Vec& x_hat, const Vec& u_km1,
                        const Vec& x_true_next, const Mat& K_x, const Vec& v_next);
/// Returns (x_hat_{k+1}, u_hat_{k+1}) of the with-DF transition; D is the
/// forward filter's D_k.
std::pair<Vec, Vec> iekf_wdf_maps(const SystemModel& model, const Vec& x_hat, const Vec& u_hat,
                                  const Vec& x_true_next, const Vec& u_true_next, const Mat& K_x,
                                  const Mat& K_u, const Mat& D, const Vec& v_next);

/// Linearization of the inverse transition for given forward gains, at
/// the augmented point z (and x_prev for without-DF). The rcrlb module
/// evaluates it along the true forward trajectory.
InverseLinearization inverse_linearization(InverseKind kind, const SystemModel& model,
                                           const ForwardGains& gains, const Vec& z,
                                           const Vec& x_prev,
                                           const std::optional<PreviousGains>& prev,
                                           const Vec& x_true, const Vec& x_true_next,
                                           const Vec& u_true_next, JacobianMode mode);

}  // namespace ifk
