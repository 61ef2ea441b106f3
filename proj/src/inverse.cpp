#include "ifk/inverse.hpp"

#include <string>

#include "ifk/errors.hpp"

namespace ifk {

namespace {

struct KindName {
  InverseKind kind;
  const char* name;
  ForwardKind forward;
};

constexpr KindName kKindNames[] = {
    {InverseKind::IKF, "ikf", ForwardKind::KF},
    {InverseKind::IKFWodf, "ikf-wodf", ForwardKind::KFWodf},
    {InverseKind::IKFWdf, "ikf-wdf", ForwardKind::KFWdf},
    {InverseKind::IEKF, "iekf", ForwardKind::EKF},
    {InverseKind::IEKFWodf, "iekf-wodf", ForwardKind::EKFWodf},
    {InverseKind::IEKFWdf, "iekf-wdf", ForwardKind::EKFWdf},
    {InverseKind::IEKFOneStep, "iekf-one-step", ForwardKind::EKFOneStep},
};

Mat eye(Eigen::Index n) { return Mat::Identity(n, n); }

Mat blkdiag(const Mat& A, const Mat& B) {
  Mat out = Mat::Zero(A.rows() + B.rows(), A.cols() + B.cols());
  out.topLeftCorner(A.rows(), A.cols()) = A;
  out.bottomRightCorner(B.rows(), B.cols()) = B;
  return out;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

void require_vec(const Vec& v, int n, const char* what, ErrorCode missing = ErrorCode::DimMismatch) {
  if (v.size() == 0 && n > 0) {
    throw Error(missing, std::string(what) + " is required by this inverse filter");
  }
  require_size(v, n, what);
}

Mat noise_covariance(const SystemModel& model, Eigen::Index noise_dim) {
  if (noise_dim == model.p) return model.R;
  return blkdiag(model.R, model.R);
}

// Standard update shared by all two-step inverse filters.
void inverse_update(InverseState& s, const SystemModel& model, const Vec& z_pred,
                    const Mat& Sigma_pred, const Vec& a) {
  const int n = model.n;
  const Eigen::Index N = z_pred.size();
  const Vec x_pred = z_pred.head(n);
  Mat G = Mat::Zero(model.na, N);
  G.leftCols(n) = model.G_at(x_pred);
  const Mat S = symmetrize(G * Sigma_pred * G.transpose() + model.Sigma_eps);
  const Mat PGt = Sigma_pred * G.transpose();
  const Mat gain = solve_innovation(S, PGt.transpose()).transpose();
  Vec z = z_pred + gain * (a - model.g(x_pred));
  const Mat IKG = Mat::Identity(N, N) - gain * G;
  s.Sigma_bar = symmetrize(IKG * Sigma_pred * IKG.transpose() +
                           gain * model.Sigma_eps * gain.transpose());
  s.z_pred = z_pred;
  s.Sigma_pred = Sigma_pred;
  s.S_bar = S;
  s.G = G;
  s.x_dhat = z.head(n);
  s.u_dhat = z.tail(N - n);
  model.wrap_state(s.x_dhat);
  model.wrap_input_vec(s.u_dhat);
}

void require_finite(const InverseState& s) {
  if (!all_finite(s.x_dhat) || !all_finite(s.u_dhat) || !all_finite(s.Sigma_bar)) {
    throw Error(ErrorCode::NonFiniteState, "inverse filter diverged at k=" + std::to_string(s.k));
  }
}

// u_hat_{k-1|k}: the input slot after the without-DF input transition.
Vec wodf_input_estimate(const SystemModel& model, const InverseState& s, const Vec& x_true) {
  if (!s.prev || model.m == 0) return s.u_dhat;
  return iekf_wodf_input_map(model, s.u_dhat, s.x_dhat_prev, x_true, *s.prev, Vec::Zero(model.p));
}

}  // namespace

std::string_view to_string(InverseKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

InverseKind parse_inverse_kind(std::string_view text) {
  for (const auto& kn : kKindNames) {
    if (text == kn.name) return kn.kind;
  }
  throw Error(ErrorCode::ConfigError, "unknown inverse filter '" + std::string(text) + "'");
}

std::vector<std::string> inverse_kind_names() {
  std::vector<std::string> out;
  for (const auto& kn : kKindNames) out.emplace_back(kn.name);
  return out;
}

ForwardKind forward_kind_for(InverseKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.forward;
  }
  throw Error(ErrorCode::ConfigError, "unknown inverse filter kind");
}

InverseKind inverse_kind_for(ForwardKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.forward == kind) return kn.kind;
  }
  throw Error(ErrorCode::ConfigError, "no inverse filter for this forward filter");
}

bool is_augmented(InverseKind kind) {
  return kind == InverseKind::IKFWdf || kind == InverseKind::IEKFWodf ||
         kind == InverseKind::IEKFWdf;
}

Vec InverseState::z() const { return concat(x_dhat, u_dhat); }

InverseState make_inverse_state(InverseKind kind, const SystemModel& model, const Vec& z0,
                                const Mat& Sigma_bar0, ForwardState replica,
                                InverseOptions options) {
  const int n = model.n;
  const int N = n + (is_augmented(kind) ? model.m : 0);
  require_size(z0, N, "initial inverse estimate");
  require_shape(Sigma_bar0, N, N, "Sigma_bar0");
  if (!psd_check(Sigma_bar0, 1e-8)) {
    throw Error(ErrorCode::NotSPD, "Sigma_bar0 is not symmetric PSD");
  }
  require_size(replica.x_hat, n, "replica x_hat");
  InverseState s;
  s.x_dhat = z0.head(n);
  s.u_dhat = z0.tail(N - n);
  model.wrap_state(s.x_dhat);
  model.wrap_input_vec(s.u_dhat);
  s.Sigma_bar = Sigma_bar0;
  s.x_dhat_prev = s.x_dhat;
  s.replica = std::move(replica);
  s.options = options;
  return s;
}

Vec iekf_wodf_input_map(const SystemModel& model, const Vec& u_km2, const Vec& x_hat_km1,
                        const Vec& x_true, const PreviousGains& prev, const Vec& v) {
  Vec pred = model.f(x_hat_km1, u_km2);
  model.wrap_state(pred);
  return prev.K_u * (prev.HB * u_km2 - model.h(pred, u_km2) + model.h(x_true, u_km2) + v);
}

Vec iekf_wodf_state_map(const SystemModel& model, const Vec& x_hat, const Vec& u_km1,
                        const Vec& x_true_next, const Mat& K_x, const Vec& v_next) {
  Vec pred = model.f(x_hat, u_km1);
  model.wrap_state(pred);
  return pred - K_x * model.h(pred, u_km1) + K_x * (model.h(x_true_next, u_km1) + v_next);
}

std::pair<Vec, Vec> iekf_wdf_maps(const SystemModel& model, const Vec& x_hat, const Vec& u_hat,
                                  const Vec& x_true_next, const Vec& u_true_next, const Mat& K_x,
                                  const Mat& K_u, const Mat& D, const Vec& v_next) {
  Vec pred = model.f(x_hat, u_hat);
  model.wrap_state(pred);
  const Vec h_pred = model.h(pred, u_hat);
  const Vec y = model.h(x_true_next, u_true_next) + v_next;
  Vec u_next = K_u * (y - h_pred + D * u_hat);
  Vec x_next = pred - K_x * h_pred - K_x * D * (u_next - u_hat) + K_x * y;
  return {std::move(x_next), std::move(u_next)};
}

ForwardGains replicate_forward_gain(ForwardState& replica, ForwardKind kind,
                                    const SystemModel& model, const Vec& x_est, const Vec& u_est) {
  replica.x_hat = x_est;
  if (u_est.size() > 0) replica.u_hat = u_est;
  ForwardGains g = forward_gains(kind, model, replica);
  replica = advance_covariance(replica, g);
  return g;
}

InverseLinearization inverse_linearization(InverseKind kind, const SystemModel& model,
                                           const ForwardGains& g, const Vec& z,
                                           const Vec& x_prev,
                                           const std::optional<PreviousGains>& prev,
                                           const Vec& x_true, const Vec& x_true_next,
                                           const Vec& u_true_next, JacobianMode mode) {
  const int n = model.n;
  const int m = model.m;
  const int p = model.p;
  const Mat I = eye(n);
  InverseLinearization lin;

  switch (kind) {
    case InverseKind::IKF:
      lin.Fz = (I - g.K_x * g.H) * g.F;
      lin.Fv = g.K_x;
      break;
    case InverseKind::IKFWodf: {
      const Mat BM = g.B * g.K_u;
      lin.Fz = (I - g.K_x * g.H) * (I - BM * g.H) * g.F;
      lin.Fv = BM - g.K_x * g.H * BM + g.K_x;
      break;
    }
    case InverseKind::IKFWdf: {
      const Mat& K = g.K_x;
      const Mat& M = g.K_u;
      const Mat T = I - K * g.H + K * g.D * M * g.H;
      lin.Fz.resize(n + m, n + m);
      lin.Fz << T * g.F, T * g.B, -M * g.H * g.F, -M * g.H * g.B;
      lin.Fv.resize(n + m, p);
      lin.Fv << K * (eye(p) - g.D * M), M;
      break;
    }
    case InverseKind::IEKF: {
      const Vec x = z.head(n);
      if (mode == JacobianMode::Analytic) {
        lin.Fz = g.F - g.K_x * g.H * g.F;
      } else {
        const Vec u0 = model.zero_input();
        lin.Fz = jacobian_fd(
            [&](const Vec& xx) {
              Vec pred = model.f(xx, u0);
              return Vec(pred - g.K_x * model.h(pred, u0) + g.K_x * model.h(x_true_next, u0));
            },
            x);
      }
      lin.Fv = g.K_x;
      break;
    }
    case InverseKind::IEKFOneStep: {
      const Vec x = z.head(n);
      if (mode == JacobianMode::Analytic) {
        lin.Fz = g.F - g.K_x * g.H;
      } else {
        const Vec u0 = model.zero_input();
        lin.Fz = jacobian_fd(
            [&](const Vec& xx) {
              return Vec(model.f(xx, u0) - g.K_x * model.h(xx, u0) +
                         g.K_x * model.h(x_true, u0));
            },
            x);
      }
      lin.Fv = g.K_x;
      break;
    }
    case InverseKind::IEKFWodf: {
      const Vec x = z.head(n);
      const Vec u_slot = z.tail(m);
      const bool have_prev = prev.has_value() && m > 0;
      const Mat K_u_prev = have_prev ? prev->K_u : Mat::Zero(m, p);
      if (mode == JacobianMode::Analytic) {
        Mat dh = eye(m);
        if (have_prev) {
          Vec pred_prev = model.f(x_prev, u_slot);
          model.wrap_state(pred_prev);
          dh = prev->K_u *
               (prev->HB - model.H_at(pred_prev, u_slot) * model.B_at(x_prev, u_slot));
        }
        const Mat dphi_x = g.F - g.K_x * g.H * g.F;
        const Mat dphi_u = (I - g.K_x * g.H) * g.B;
        lin.Fz = Mat::Zero(n + m, n + m);
        lin.Fz.topLeftCorner(n, n) = dphi_x;
        lin.Fz.topRightCorner(n, m) = dphi_u * dh;
        lin.Fz.bottomRightCorner(m, m) = dh;
        lin.Fv = Mat::Zero(n + m, 2 * p);
        lin.Fv.topLeftCorner(n, p) = dphi_u * K_u_prev;
        lin.Fv.topRightCorner(n, p) = g.K_x;
        lin.Fv.bottomLeftCorner(m, p) = K_u_prev;
      } else {
        auto transition = [&](const Vec& zz, const Vec& vv) -> Vec {
          const Vec xs = zz.head(n);
          const Vec us = zz.tail(m);
          const Vec u_next = have_prev ? iekf_wodf_input_map(model, us, x_prev, x_true, *prev,
                                                             vv.head(p))
                                       : us;
          return concat(iekf_wodf_state_map(model, xs, u_next, x_true_next, g.K_x, vv.tail(p)),
                        u_next);
        };
        const Vec v0 = Vec::Zero(2 * p);
        lin.Fz = jacobian_fd([&](const Vec& zz) { return transition(zz, v0); }, z);
        lin.Fv = jacobian_fd([&](const Vec& vv) { return transition(z, vv); }, v0);
      }
      break;
    }
    case InverseKind::IEKFWdf: {
      const Vec x = z.head(n);
      const Vec u = z.tail(m);
      if (mode == JacobianMode::Analytic) {
        const Mat& Fx = g.F;
        const Mat& Fu = g.B;
        const Mat& Hx = g.H;
        const Mat& Hu = g.D;
        const Mat& D = g.D;
        const Mat dh_x = -g.K_u * Hx * Fx;
        const Mat dh_u = g.K_u * (-Hx * Fu - Hu + D);
        const Mat df_x = Fx - g.K_x * Hx * Fx - g.K_x * D * dh_x;
        const Mat df_u = Fu - g.K_x * (Hx * Fu + Hu) - g.K_x * D * (dh_u - eye(m));
        lin.Fz.resize(n + m, n + m);
        lin.Fz << df_x, df_u, dh_x, dh_u;
        lin.Fv.resize(n + m, p);
        lin.Fv << g.K_x - g.K_x * D * g.K_u, g.K_u;
      } else {
        auto transition = [&](const Vec& zz, const Vec& vv) -> Vec {
          auto [xn, un] = iekf_wdf_maps(model, zz.head(n), zz.tail(m), x_true_next, u_true_next,
                                        g.K_x, g.K_u, g.D, vv);
          return concat(xn, un);
        };
        const Vec v0 = Vec::Zero(p);
        lin.Fz = jacobian_fd([&](const Vec& zz) { return transition(zz, v0); }, z);
        lin.Fv = jacobian_fd([&](const Vec& vv) { return transition(z, vv); }, v0);
      }
      (void)x;
      (void)u;
      break;
    }
  }
  lin.Q_bar = symmetrize(lin.Fv * noise_covariance(model, lin.Fv.cols()) * lin.Fv.transpose());
  return lin;
}

InverseState inverse_step_with_gains(InverseKind kind, const SystemModel& model,
                                     const InverseState& state, const InverseInputs& in,
                                     const ForwardGains& g) {
  const int n = model.n;
  const int m = model.m;
  const JacobianMode mode = state.options.jacobians;
  InverseState next = state;
  next.k = state.k + 1;

  if (kind == InverseKind::IEKFOneStep) {
    require_vec(in.x_true, n, "x_k");
    require_size(in.a, model.na, "a_k");
    const Vec u0 = model.zero_input();
    const Vec& x = state.x_dhat;
    next.lin = inverse_linearization(kind, model, g, x, state.x_dhat_prev, state.prev, in.x_true,
                                     Vec(), Vec(), mode);
    if (state.options.q_bar_delta > 0.0) next.lin.Q_bar += state.options.q_bar_delta * eye(n);
    const Mat& Ft = next.lin.Fz;
    const Vec f_tilde = g.x_pred - g.K_x * model.h(x, u0) + g.K_x * model.h(in.x_true, u0);
    const Mat G = model.G_at(x);
    const Mat S = symmetrize(G * state.Sigma_bar * G.transpose() + model.Sigma_eps);
    const Mat gain = solve_innovation(S, G * state.Sigma_bar * Ft.transpose()).transpose();
    next.x_dhat = f_tilde + gain * (in.a - model.g(x));
    model.wrap_state(next.x_dhat);
    next.Sigma_pred = symmetrize(Ft * state.Sigma_bar * Ft.transpose() + next.lin.Q_bar);
    next.Sigma_bar = symmetrize(next.Sigma_pred - gain * S * gain.transpose());
    next.z_pred = f_tilde;
    next.S_bar = S;
    next.G = G;
    next.x_dhat_prev = state.x_dhat;
    require_finite(next);
    return next;
  }

  require_vec(in.x_true_next, n, "x_{k+1}");
  require_size(in.a, model.na, "a_{k+1}");
  const bool with_df = kind == InverseKind::IKFWdf || kind == InverseKind::IEKFWdf;
  if (with_df) require_vec(in.u_true_next, m, "u_{k+1}", ErrorCode::MissingInput);

  Vec z_pred;
  Vec z_lin = state.z();
  switch (kind) {
    case InverseKind::IKF: {
      next.lin = inverse_linearization(kind, model, g, z_lin, Vec(), std::nullopt, Vec(), Vec(),
                                       Vec(), mode);
      z_pred = next.lin.Fz * state.x_dhat + g.K_x * g.H * in.x_true_next;
      break;
    }
    case InverseKind::IKFWodf: {
      next.lin = inverse_linearization(kind, model, g, z_lin, Vec(), std::nullopt, Vec(), Vec(),
                                       Vec(), mode);
      z_pred = next.lin.Fz * state.x_dhat + next.lin.Fv * g.H * in.x_true_next;
      break;
    }
    case InverseKind::IKFWdf: {
      next.lin = inverse_linearization(kind, model, g, z_lin, Vec(), std::nullopt, Vec(), Vec(),
                                       Vec(), mode);
      Vec y_clean = g.H * in.x_true_next;
      if (m > 0) y_clean += g.D * in.u_true_next;
      z_pred = next.lin.Fz * z_lin + next.lin.Fv * y_clean;
      break;
    }
    case InverseKind::IEKF: {
      const Vec u0 = model.zero_input();
      next.lin = inverse_linearization(kind, model, g, z_lin, Vec(), std::nullopt, Vec(),
                                       in.x_true_next, Vec(), mode);
      z_pred = g.x_pred - g.K_x * model.h(g.x_pred, u0) + g.K_x * model.h(in.x_true_next, u0);
      break;
    }
    case InverseKind::IEKFWodf: {
      if (state.prev) require_vec(in.x_true, n, "x_k");
      const Vec u_est = wodf_input_estimate(model, state, in.x_true);
      next.lin = inverse_linearization(kind, model, g, z_lin, state.x_dhat_prev, state.prev,
                                       in.x_true, in.x_true_next, Vec(), mode);
      z_pred = concat(iekf_wodf_state_map(model, state.x_dhat, u_est, in.x_true_next, g.K_x,
                                          Vec::Zero(model.p)),
                      u_est);
      next.prev = PreviousGains{g.K_u, g.H * g.B};
      break;
    }
    case InverseKind::IEKFWdf: {
      next.lin = inverse_linearization(kind, model, g, z_lin, Vec(), std::nullopt, Vec(),
                                       in.x_true_next, in.u_true_next, mode);
      auto [xn, un] = iekf_wdf_maps(model, state.x_dhat, state.u_dhat, in.x_true_next,
                                    in.u_true_next, g.K_x, g.K_u, g.D, Vec::Zero(model.p));
      z_pred = concat(xn, un);
      break;
    }
    case InverseKind::IEKFOneStep:
      break;
  }
  const Eigen::Index N = z_pred.size();
  {
    Vec x_part = z_pred.head(n);
    model.wrap_state(x_part);
    z_pred.head(n) = x_part;
  }
  if (state.options.q_bar_delta > 0.0) next.lin.Q_bar += state.options.q_bar_delta * eye(N);
  const Mat Sigma_pred =
      symmetrize(next.lin.Fz * state.Sigma_bar * next.lin.Fz.transpose() + next.lin.Q_bar);
  next.x_dhat_prev = state.x_dhat;
  inverse_update(next, model, z_pred, Sigma_pred, in.a);
  require_finite(next);
  return next;
}

InverseState inverse_step(InverseKind kind, const SystemModel& model, const InverseState& state,
                          const InverseInputs& in) {
  const ForwardKind fk = forward_kind_for(kind);
  InverseState work = state;
  Vec u_est;
  switch (kind) {
    case InverseKind::IEKFWodf:
      if (work.prev) require_vec(in.x_true, model.n, "x_k");
      u_est = wodf_input_estimate(model, work, in.x_true);
      break;
    case InverseKind::IEKFWdf:
      u_est = work.u_dhat;
      break;
    default:
      break;
  }
  ForwardGains g;
  try {
    g = replicate_forward_gain(work.replica, fk, model, work.x_dhat, u_est);
  } catch (const Error& e) {
    throw Error(e.code(), "replica: " + std::string(e.what()));
  }
  return inverse_step_with_gains(kind, model, work, in, g);
}

InverseState ikf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                      const Vec& x_true_next) {
  return inverse_step(InverseKind::IKF, model, s, {a, Vec(), x_true_next, Vec()});
}

InverseState ikf_wodf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true_next) {
  return inverse_step(InverseKind::IKFWodf, model, s, {a, Vec(), x_true_next, Vec()});
}

InverseState ikf_wdf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                          const Vec& x_true_next, const Vec& u_true_next) {
  return inverse_step(InverseKind::IKFWdf, model, s, {a, Vec(), x_true_next, u_true_next});
}

InverseState iekf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                       const Vec& x_true_next) {
  return inverse_step(InverseKind::IEKF, model, s, {a, Vec(), x_true_next, Vec()});
}

InverseState iekf_wodf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                            const Vec& x_true, const Vec& x_true_next) {
  return inverse_step(InverseKind::IEKFWodf, model, s, {a, x_true, x_true_next, Vec()});
}

InverseState iekf_wdf_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true_next, const Vec& u_true_next) {
  return inverse_step(InverseKind::IEKFWdf, model, s, {a, Vec(), x_true_next, u_true_next});
}

InverseState iekf_one_step(const InverseState& s, const SystemModel& model, const Vec& a,
                           const Vec& x_true) {
  return inverse_step(InverseKind::IEKFOneStep, model, s, {a, x_true, Vec(), Vec()});
}

}  // namespace ifk
