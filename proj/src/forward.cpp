#include "ifk/forward.hpp"

#include <string>

#include "ifk/errors.hpp"

namespace ifk {

namespace {

struct KindName {
  ForwardKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {ForwardKind::KF, "kf"},           {ForwardKind::KFWodf, "kf-wodf"},
    {ForwardKind::KFWdf, "kf-wdf"},    {ForwardKind::EKF, "ekf"},
    {ForwardKind::EKFWodf, "ekf-wodf"}, {ForwardKind::EKFWdf, "ekf-wdf"},
    {ForwardKind::EKFOneStep, "ekf-one-step"},
};

bool is_linear_kind(ForwardKind kind) {
  return kind == ForwardKind::KF || kind == ForwardKind::KFWodf || kind == ForwardKind::KFWdf;
}

Vec input_or_zero(const SystemModel& model, const Vec& u) {
  if (model.m == 0) return Vec(0);
  if (u.size() == 0) return model.zero_input();
  require_size(u, model.m, "known input");
  return u;
}

Mat eye(Eigen::Index n) { return Mat::Identity(n, n); }

void require_finite_state(const ForwardState& s) {
  if (!all_finite(s.x_hat) || !all_finite(s.u_hat) || !all_finite(s.Sigma_x)) {
    throw Error(ErrorCode::NonFiniteState,
                "forward filter diverged at k=" + std::to_string(s.k));
  }
}

// Information matrix of the input estimate; its inverse is Sigma^u.
Mat checked_input_information(const Mat& info, ErrorCode code) {
  const Mat sym = symmetrize(info);
  const double m = static_cast<double>(sym.rows());
  if (sym.rows() > 0 && !(min_eigenvalue(sym) > 1e-10 * std::abs(sym.trace()) / m)) {
    throw Error(code, "input estimation covariance is rank deficient");
  }
  return sym;
}

ForwardGains gains_kf(const SystemModel& model, const ForwardState& s, const Vec& u_known) {
  const LinearMatrices& L = *model.linear;
  ForwardGains g;
  g.F = L.F;
  g.B = L.B;
  g.H = L.H;
  g.D = L.D;
  const Vec u = input_or_zero(model, u_known);
  g.x_pred = L.F * s.x_hat;
  if (model.m > 0) g.x_pred += L.B * u;
  g.Sigma_pred = L.F * s.Sigma_x * L.F.transpose() + model.Q;
  g.S = symmetrize(L.H * g.Sigma_pred * L.H.transpose() + model.R);
  g.K_x = solve_innovation(g.S, L.H * g.Sigma_pred).transpose();
  const Mat IKH = eye(model.n) - g.K_x * L.H;
  g.Sigma_x = symmetrize(IKH * g.Sigma_pred * IKH.transpose() + g.K_x * model.R * g.K_x.transpose());
  return g;
}

ForwardGains gains_kf_wodf(const SystemModel& model, const ForwardState& s) {
  const LinearMatrices& L = *model.linear;
  ForwardGains g;
  g.F = L.F;
  g.B = L.B;
  g.H = L.H;
  g.D = L.D;
  g.x_pred = L.F * s.x_hat;
  g.Sigma_pred = L.F * s.Sigma_x * L.F.transpose() + model.Q;
  g.S = symmetrize(L.H * g.Sigma_pred * L.H.transpose() + model.R);
  const Mat HB = L.H * L.B;
  const Mat Sinv_HB = solve_innovation(g.S, HB);
  const Mat info = symmetrize(HB.transpose() * Sinv_HB);
  Mat M;
  try {
    g.Sigma_u = inverse_spd(info);
    M = solve_spd(info, Sinv_HB.transpose());
  } catch (const Error&) {
    throw Error(ErrorCode::SingularInnovation, "KF-without-DF: (HB)^T S^-1 HB is singular");
  }
  g.K_u = M;
  g.K_x = solve_innovation(g.S, L.H * g.Sigma_pred).transpose();
  const Mat BM = L.B * M;
  const Mat IBMH = eye(model.n) - BM * L.H;
  const Mat Sigma_tilde =
      IBMH * g.Sigma_pred * IBMH.transpose() + BM * model.R * BM.transpose();
  g.Sigma_x = symmetrize(Sigma_tilde -
                         g.K_x * (Sigma_tilde * L.H.transpose() - BM * model.R).transpose());
  return g;
}

ForwardGains gains_kf_wdf(const SystemModel& model, const ForwardState& s) {
  const LinearMatrices& L = *model.linear;
  const int n = model.n;
  const int m = model.m;
  ForwardGains g;
  g.F = L.F;
  g.B = L.B;
  g.H = L.H;
  g.D = L.D;
  g.x_pred = L.F * s.x_hat;
  Mat FB(n, n + m);
  FB << L.F, L.B;
  Mat joint(n + m, n + m);
  joint << s.Sigma_x, s.Sigma_xu, s.Sigma_xu.transpose(), s.Sigma_u;
  if (m > 0) g.x_pred += L.B * s.u_hat;
  g.Sigma_pred = symmetrize(FB * joint * FB.transpose() + model.Q);
  g.S = symmetrize(L.H * g.Sigma_pred * L.H.transpose() + model.R);
  const Mat Sinv_D = solve_innovation(g.S, L.D);
  const Mat info = symmetrize(L.D.transpose() * Sinv_D);
  try {
    g.Sigma_u = inverse_spd(info);
  } catch (const Error&) {
    throw Error(ErrorCode::SingularInnovation, "KF-with-DF: D^T S^-1 D is singular");
  }
  g.K_u = g.Sigma_u * Sinv_D.transpose();
  g.K_x = solve_innovation(g.S, L.H * g.Sigma_pred).transpose();
  g.Sigma_x = symmetrize(g.Sigma_pred -
                         g.K_x * (g.S - L.D * g.Sigma_u * L.D.transpose()) * g.K_x.transpose());
  g.Sigma_xu = -g.K_x * L.D * g.Sigma_u;
  return g;
}

ForwardGains gains_ekf(const SystemModel& model, const ForwardState& s, const Vec& u_known) {
  const Vec u = input_or_zero(model, u_known);
  ForwardGains g;
  g.F = model.F_at(s.x_hat, u);
  g.x_pred = model.f(s.x_hat, u);
  model.wrap_state(g.x_pred);
  g.H = model.H_at(g.x_pred, u);
  g.B = Mat::Zero(model.n, 0);
  g.D = Mat::Zero(model.p, 0);
  g.Sigma_pred = symmetrize(g.F * s.Sigma_x * g.F.transpose() + model.Q);
  g.S = symmetrize(g.H * g.Sigma_pred * g.H.transpose() + model.R);
  g.K_x = solve_innovation(g.S, g.H * g.Sigma_pred).transpose();
  const Mat IKH = eye(model.n) - g.K_x * g.H;
  g.Sigma_x = symmetrize(IKH * g.Sigma_pred * IKH.transpose() + g.K_x * model.R * g.K_x.transpose());
  return g;
}

ForwardGains gains_ekf_wodf(const SystemModel& model, const ForwardState& s) {
  const Vec& u_prev = s.u_hat;
  ForwardGains g;
  g.F = model.F_at(s.x_hat, u_prev);
  g.B = model.B_at(s.x_hat, u_prev);
  g.x_pred = model.f(s.x_hat, u_prev);
  model.wrap_state(g.x_pred);
  g.H = model.H_at(g.x_pred, u_prev);
  g.D = Mat::Zero(model.p, model.m);
  g.Sigma_pred = symmetrize(g.F * s.Sigma_x * g.F.transpose() + model.Q);
  g.S = symmetrize(g.H * g.Sigma_pred * g.H.transpose() + model.R);
  g.K_x = solve_innovation(g.S, g.H * g.Sigma_pred).transpose();

  const Mat IKH = eye(model.n) - g.K_x * g.H;
  if (model.m == 0) {
    g.Sigma_u = Mat::Zero(0, 0);
    g.K_u = Mat::Zero(0, model.p);
    g.Sigma_x = symmetrize(IKH * g.Sigma_pred);
    return g;
  }
  const Mat HB = g.H * g.B;
  const Mat A = solve_spd(model.R, eye(model.p) - g.H * g.K_x);  // R^-1 (I - H K^x)
  const Mat info = checked_input_information(HB.transpose() * A * HB, ErrorCode::InputCovSingular);
  try {
    g.Sigma_u = symmetrize(inverse_spd(info));
  } catch (const Error&) {
    throw Error(ErrorCode::InputCovSingular, "EKF-without-DF: input covariance is singular");
  }
  g.K_u = g.Sigma_u * HB.transpose() * A;
  g.Sigma_x = symmetrize(IKH * (g.Sigma_pred + g.B * g.Sigma_u * g.B.transpose() * IKH.transpose()));
  return g;
}

ForwardGains gains_ekf_wdf(const SystemModel& model, const ForwardState& s) {
  const Vec& u = s.u_hat;
  ForwardGains g;
  g.F = model.F_at(s.x_hat, u);
  g.B = model.B_at(s.x_hat, u);
  g.x_pred = model.f(s.x_hat, u);
  model.wrap_state(g.x_pred);
  g.H = model.H_at(g.x_pred, u);
  g.D = model.D_at(g.x_pred, u);
  if (numerical_rank(g.D) != model.m) {
    throw Error(ErrorCode::RankDeficient,
                "EKF-with-DF: D_k lost full column rank at k=" + std::to_string(s.k));
  }
  g.Sigma_pred = symmetrize(g.F * s.Sigma_x * g.F.transpose() + model.Q);
  g.S = symmetrize(g.H * g.Sigma_pred * g.H.transpose() + model.R);
  g.K_x = solve_innovation(g.S, g.H * g.Sigma_pred).transpose();
  const Mat IKH = eye(model.n) - g.K_x * g.H;
  if (model.m == 0) {
    g.Sigma_u = Mat::Zero(0, 0);
    g.K_u = Mat::Zero(0, model.p);
    g.Sigma_x = symmetrize(IKH * g.Sigma_pred);
    return g;
  }
  const Mat A = solve_spd(model.R, eye(model.p) - g.H * g.K_x);
  const Mat info = checked_input_information(g.D.transpose() * A * g.D, ErrorCode::RankDeficient);
  g.Sigma_u = symmetrize(inverse_spd(info));
  g.K_u = g.Sigma_u * g.D.transpose() * A;
  const Mat Rinv_H = solve_spd(model.R, g.H);
  g.Sigma_x = symmetrize(
      (eye(model.n) + g.K_x * g.D * g.Sigma_u * g.D.transpose() * Rinv_H) * IKH * g.Sigma_pred);
  return g;
}

ForwardGains gains_one_step(const SystemModel& model, const ForwardState& s, const Vec& u_known) {
  const Vec u = input_or_zero(model, u_known);
  ForwardGains g;
  g.F = model.F_at(s.x_hat, u);
  g.H = model.H_at(s.x_hat, u);
  g.B = Mat::Zero(model.n, 0);
  g.D = Mat::Zero(model.p, 0);
  g.x_pred = model.f(s.x_hat, u);
  model.wrap_state(g.x_pred);
  g.Sigma_pred = symmetrize(g.F * s.Sigma_x * g.F.transpose() + model.Q);
  g.S = symmetrize(g.H * s.Sigma_x * g.H.transpose() + model.R);
  g.K_x = solve_innovation(g.S, g.H * s.Sigma_x * g.F.transpose()).transpose();
  g.Sigma_x = symmetrize(g.Sigma_pred - g.K_x * g.S * g.K_x.transpose());
  return g;
}

}  // namespace

std::string_view to_string(ForwardKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

ForwardKind parse_forward_kind(std::string_view text) {
  for (const auto& kn : kKindNames) {
    if (text == kn.name) return kn.kind;
  }
  throw Error(ErrorCode::ConfigError, "unknown forward filter '" + std::string(text) + "'");
}

std::vector<std::string> forward_kind_names() {
  std::vector<std::string> out;
  for (const auto& kn : kKindNames) out.emplace_back(kn.name);
  return out;
}

Mat solve_innovation(const Mat& S, const Mat& B) {
  try {
    return solve_spd(S, B);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotSPD) {
      throw Error(ErrorCode::SingularInnovation, "innovation covariance is not positive definite");
    }
    throw;
  }
}

ForwardState make_forward_state(ForwardKind kind, const SystemModel& model, Vec x0, Mat Sigma0,
                                Vec u0, Mat Sigma_u0, Mat Sigma_xu0) {
  const int n = model.n;
  const int m = model.m;
  require_size(x0, n, "x0");
  require_shape(Sigma0, n, n, "Sigma0");
  if (!psd_check(Sigma0, 1e-8)) throw Error(ErrorCode::NotSPD, "Sigma0 is not symmetric PSD");
  if (is_linear_kind(kind) && !model.linear) {
    throw Error(ErrorCode::ConfigError,
                std::string(to_string(kind)) + " requires a linear model, got " + model.name);
  }

  ForwardState s;
  s.x_hat = std::move(x0);
  model.wrap_state(s.x_hat);
  s.Sigma_x = std::move(Sigma0);
  s.u_hat = u0.size() == 0 ? model.zero_input() : std::move(u0);
  require_size(s.u_hat, m, "u0");
  s.Sigma_u = Sigma_u0.size() == 0 ? Mat::Zero(m, m) : std::move(Sigma_u0);
  require_shape(s.Sigma_u, m, m, "Sigma_u0");
  s.Sigma_xu = Sigma_xu0.size() == 0 ? Mat::Zero(n, m) : std::move(Sigma_xu0);
  require_shape(s.Sigma_xu, n, m, "Sigma_xu0");
  s.jacobians = is_linear_kind(kind) ? JacobianSource::Analytic : model.jacobian_source();

  switch (kind) {
    case ForwardKind::KFWodf: {
      const LinearMatrices& L = *model.linear;
      if (numerical_rank(L.B) != m || numerical_rank(L.H * L.B) != m) {
        throw Error(ErrorCode::RankDeficient,
                    "KF-without-DF requires rank(HB) = rank(B) = m = " + std::to_string(m));
      }
      break;
    }
    case ForwardKind::KFWdf: {
      if (numerical_rank(model.linear->D) != m) {
        throw Error(ErrorCode::RankDeficient,
                    "KF-with-DF requires rank(D) = m = " + std::to_string(m));
      }
      Mat joint(n + m, n + m);
      joint << s.Sigma_x, s.Sigma_xu, s.Sigma_xu.transpose(), s.Sigma_u;
      if (!psd_check(joint, 1e-8)) {
        throw Error(ErrorCode::NotSPD, "initial joint state/input covariance is not PSD");
      }
      break;
    }
    case ForwardKind::EKFWodf:
    case ForwardKind::EKFWdf:
      if (model.p < m) {
        throw Error(ErrorCode::RankDeficient, "unknown-input EKF requires p >= m");
      }
      break;
    default:
      break;
  }
  return s;
}

ForwardGains forward_gains(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                           const Vec& u_known) {
  switch (kind) {
    case ForwardKind::KF: return gains_kf(model, state, u_known);
    case ForwardKind::KFWodf: return gains_kf_wodf(model, state);
    case ForwardKind::KFWdf: return gains_kf_wdf(model, state);
    case ForwardKind::EKF: return gains_ekf(model, state, u_known);
    case ForwardKind::EKFWodf: return gains_ekf_wodf(model, state);
    case ForwardKind::EKFWdf: return gains_ekf_wdf(model, state);
    case ForwardKind::EKFOneStep: return gains_one_step(model, state, u_known);
  }
  throw Error(ErrorCode::ConfigError, "unknown forward filter kind");
}

ForwardState advance_covariance(const ForwardState& state, const ForwardGains& g) {
  ForwardState next = state;
  next.Sigma_x = g.Sigma_x;
  if (g.Sigma_u.size() > 0 || state.Sigma_u.size() == 0) next.Sigma_u = g.Sigma_u;
  if (g.Sigma_xu.size() > 0) next.Sigma_xu = g.Sigma_xu;
  next.K_x = g.K_x;
  next.K_u = g.K_u;
  next.F = g.F;
  next.B = g.B;
  next.H = g.H;
  next.D = g.D;
  next.x_pred = g.x_pred;
  next.Sigma_pred = g.Sigma_pred;
  next.S = g.S;
  next.k = state.k + 1;
  return next;
}

ForwardState forward_update(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                            const ForwardGains& g, const Vec& y, const Vec& u_known) {
  require_size(y, model.p, "observation y");
  ForwardState next = advance_covariance(state, g);
  switch (kind) {
    case ForwardKind::KF: {
      Vec innov = y - g.H * g.x_pred;
      if (model.m > 0) innov -= g.D * input_or_zero(model, u_known);
      next.x_hat = g.x_pred + g.K_x * innov;
      break;
    }
    case ForwardKind::KFWodf: {
      const Vec u = g.K_u * (y - g.H * g.x_pred);
      const Vec x_tilde = g.x_pred + g.B * u;
      next.x_hat = x_tilde + g.K_x * (y - g.H * x_tilde);
      next.u_hat = u;
      break;
    }
    case ForwardKind::KFWdf: {
      const Vec innov = y - g.H * g.x_pred;
      const Vec u = g.K_u * innov;
      next.x_hat = g.x_pred + g.K_x * (innov - g.D * u);
      next.u_hat = u;
      break;
    }
    case ForwardKind::EKF: {
      const Vec u = input_or_zero(model, u_known);
      next.x_hat = g.x_pred + g.K_x * (y - model.h(g.x_pred, u));
      break;
    }
    case ForwardKind::EKFWodf: {
      const Vec innov = y - model.h(g.x_pred, state.u_hat);
      next.x_hat = g.x_pred + g.K_x * innov;
      if (model.m > 0) {
        next.u_hat = g.K_u * (innov + g.H * g.B * state.u_hat);
        model.wrap_input_vec(next.u_hat);
      }
      break;
    }
    case ForwardKind::EKFWdf: {
      const Vec innov = y - model.h(g.x_pred, state.u_hat);
      if (model.m > 0) {
        const Vec u = g.K_u * (innov + g.D * state.u_hat);
        next.x_hat = g.x_pred + g.K_x * (innov - g.D * (u - state.u_hat));
        next.u_hat = u;
        model.wrap_input_vec(next.u_hat);
      } else {
        next.x_hat = g.x_pred + g.K_x * innov;
      }
      break;
    }
    case ForwardKind::EKFOneStep: {
      const Vec u = input_or_zero(model, u_known);
      next.x_hat = g.x_pred + g.K_x * (y - model.h(state.x_hat, u));
      break;
    }
  }
  model.wrap_state(next.x_hat);
  require_finite_state(next);
  return next;
}

ForwardState forward_step(ForwardKind kind, const SystemModel& model, const ForwardState& state,
                          const Vec& y, const Vec& u_known) {
  return forward_update(kind, model, state, forward_gains(kind, model, state, u_known), y, u_known);
}

ForwardState kf_step(const ForwardState& state, const SystemModel& model, const Vec& y,
                     const Vec& u_known) {
  return forward_step(ForwardKind::KF, model, state, y, u_known);
}

ForwardState kf_wodf_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::KFWodf, model, state, y);
}

ForwardState kf_wdf_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::KFWdf, model, state, y);
}

ForwardState ekf_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::EKF, model, state, y);
}

ForwardState ekf_wodf_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::EKFWodf, model, state, y);
}

ForwardState ekf_wdf_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::EKFWdf, model, state, y);
}

ForwardState ekf_one_step(const ForwardState& state, const SystemModel& model, const Vec& y) {
  return forward_step(ForwardKind::EKFOneStep, model, state, y);
}

}  // namespace ifk
