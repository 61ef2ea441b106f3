#include "ifk/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ifk/errors.hpp"
#include "ifk/io.hpp"

namespace ifk {

namespace {

double max_abs(const Mat& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

Mat riccati_map(const Mat& F, const Mat& Q, const Mat& G, const Mat& Sigma_eps, const Mat& P) {
  const Mat S = symmetrize(G * P * G.transpose() + Sigma_eps);
  const Mat FPGt = F * P * G.transpose();
  return symmetrize(F * P * F.transpose() + Q - FPGt * solve_innovation(S, FPGt.transpose()));
}

void update_max(std::optional<double>& slot, double v) {
  if (!std::isfinite(v)) return;
  slot = slot ? std::max(*slot, v) : v;
}

void update_min(std::optional<double>& slot, double v) {
  if (!std::isfinite(v)) return;
  slot = slot ? std::min(*slot, v) : v;
}

// Largest finite magnitude of an instrumental diagonal; NaN entries are skipped.
double instrumental_norm(const Mat& U) {
  double out = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index i = 0; i < U.size(); ++i) {
    const double v = std::abs(U(i));
    if (std::isfinite(v)) out = std::isfinite(out) ? std::max(out, v) : v;
  }
  return out;
}

// Ratio of numerator to denominator entries, NaN where |den| <= guard.
Vec guarded_ratio(const Vec& num, const Vec& den, double guard, std::vector<bool>& skipped,
                  int& count) {
  Vec out(num.size());
  skipped.assign(num.size(), false);
  for (Eigen::Index i = 0; i < num.size(); ++i) {
    if (std::abs(den(i)) > guard) {
      out(i) = num(i) / den(i);
    } else {
      out(i) = std::numeric_limits<double>::quiet_NaN();
      skipped[i] = true;
      ++count;
    }
  }
  return out;
}

Mat diag_or_identity(const Mat& U, Eigen::Index n) {
  if (U.size() != n) return Mat::Identity(n, n);
  Mat out = Mat::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(U(i))) out(i, i) = U(i);
  }
  return out;
}

std::string fmt(double v) { return format_double(v); }

const char* theorem_name(StabilityTheorem t) { return t == StabilityTheorem::Thm2 ? "thm2" : "thm3"; }

template <typename Fn>
void for_each_bound(const BoundEstimates& b, Fn&& fn) {
  fn("f_bar", b.f_bar);
  fn("h_bar", b.h_bar);
  fn("g_bar", b.g_bar);
  fn("k_bar", b.k_bar);
  fn("sigma_lo", b.sigma_lo);
  fn("sigma_hi", b.sigma_hi);
  fn("q_lo", b.q_lo);
  fn("q_hi", b.q_hi);
  fn("r_lo", b.r_lo);
  fn("r_hi", b.r_hi);
  fn("p_lo", b.p_lo);
  fn("p_hi", b.p_hi);
  fn("alpha_bar", b.alpha_bar);
  fn("beta_bar", b.beta_bar);
  fn("gamma_bar", b.gamma_bar);
  fn("c_bar", b.c_bar);
  fn("d_bar", b.d_bar);
  fn("eps_bar", b.eps_bar);
  fn("q_hat", b.q_hat);
  fn("r_hat", b.r_hat);
  fn("c_hat", b.c_hat);
  fn("d_hat", b.d_hat);
}

}  // namespace

LimitingGains limiting_kf_wodf_gains(const SystemModel& model, const Mat& Sigma0, int max_iter,
                                     double tol) {
  if (!model.linear) throw Error(ErrorCode::ConfigError, "limiting gains need a linear model");
  ForwardState s = make_forward_state(ForwardKind::KFWodf, model, Vec::Zero(model.n), Sigma0);
  Mat prev_pred;
  LimitingGains out;
  for (int it = 1; it <= max_iter; ++it) {
    const ForwardGains g = forward_gains(ForwardKind::KFWodf, model, s);
    s.Sigma_x = g.Sigma_x;
    if (prev_pred.size() > 0) {
      out.residual = max_abs(g.Sigma_pred - prev_pred);
      if (out.residual < tol) {
        const LinearMatrices& L = *model.linear;
        const Mat I = Mat::Identity(model.n, model.n);
        const Mat BM = L.B * g.K_u;
        out.K_bar = g.K_x;
        out.M_bar = g.K_u;
        out.F_bar = (I - g.K_x * L.H) * (I - BM * L.H) * L.F;
        out.E_bar = BM - g.K_x * L.H * BM + g.K_x;
        out.Q_bar = symmetrize(out.E_bar * model.R * out.E_bar.transpose());
        out.Sigma_fix = g.Sigma_pred;
        out.iterations = it;
        return out;
      }
    }
    prev_pred = g.Sigma_pred;
  }
  throw Error(ErrorCode::NoConvergence, "KF-without-DF Riccati recursion did not converge in " +
                                            std::to_string(max_iter) + " iterations");
}

double inverse_riccati_residual(const Mat& F_bar, const Mat& Q_bar, const Mat& G,
                                const Mat& Sigma_eps, const Mat& Sigma) {
  return max_abs(Sigma - riccati_map(F_bar, Q_bar, G, Sigma_eps, Sigma));
}

Theorem1Report theorem1_check(const LimitingGains& gains, const Mat& G, const Mat& Sigma_eps,
                              int max_iter, double tol) {
  const Mat& F = gains.F_bar;
  const Eigen::Index n = F.rows();
  require_shape(F, n, n, "F_bar");
  require_shape(G, Sigma_eps.rows(), n, "G");
  Theorem1Report r;
  r.n = static_cast<int>(n);

  Mat obs(G.rows() * n, n);
  Mat block = G;
  for (Eigen::Index i = 0; i < n; ++i) {
    obs.middleRows(i * G.rows(), G.rows()) = block;
    block = block * F;
  }
  r.observability_rank = numerical_rank(obs, r.rank_rel_tol);

  r.C = psd_factor(gains.Q_bar);
  Mat ctrl(n, r.C.rows() * n);
  Mat col = r.C.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    ctrl.middleCols(i * r.C.rows(), r.C.rows()) = col;
    col = F * col;
  }
  r.controllability_rank = numerical_rank(ctrl, r.rank_rel_tol);

  Mat P = gains.Q_bar + Mat::Identity(n, n);
  for (int it = 1; it <= max_iter; ++it) {
    const Mat next = riccati_map(F, gains.Q_bar, G, Sigma_eps, P);
    r.riccati_iterations = it;
    if (!all_finite(next) || max_abs(next) > 1e100) break;
    const double change = max_abs(next - P);
    P = next;
    if (change < tol * std::max(1.0, max_abs(P))) {
      r.riccati_converged = true;
      break;
    }
  }
  r.Sigma_bar = P;
  r.riccati_residual = all_finite(P) ? inverse_riccati_residual(F, gains.Q_bar, G, Sigma_eps, P)
                                     : std::numeric_limits<double>::infinity();

  if (r.riccati_converged) {
    const Mat S = symmetrize(G * P * G.transpose() + Sigma_eps);
    const Mat closed = F - F * P * G.transpose() * solve_innovation(S, G);
    r.spectral_radius = spectral_radius(closed);
  } else {
    r.spectral_radius = spectral_radius(F);
  }
  r.pass = r.riccati_converged && r.spectral_radius < 1.0 - 1e-9;
  return r;
}

InstrumentalDiag estimate_instrumental_diag(const SystemModel& model, const Trajectory& truth,
                                            const std::vector<ForwardState>& run, double guard) {
  if (model.m != 0) {
    throw Error(ErrorCode::ConfigError, "instrumental diagonals need a model without input");
  }
  const int K = truth.steps();
  if (static_cast<int>(run.size()) != K + 1 || static_cast<int>(truth.w.size()) != K ||
      static_cast<int>(truth.v.size()) != K + 1) {
    throw Error(ErrorCode::DimMismatch, "filter run and trajectory are not aligned");
  }
  InstrumentalDiag out;
  const Vec u0 = model.zero_input();
  for (int k = 0; k < K; ++k) {
    const ForwardState& next = run[k + 1];
    const Vec err = model.state_difference(truth.x[k], run[k].x_hat);
    const Vec pred_err = model.state_difference(truth.x[k + 1], next.x_pred);
    Vec num_x = pred_err - truth.w[k];
    for (int i : model.angle_dims) num_x(i) = wrap_angle(num_x(i));
    std::vector<bool> sx, sy;
    out.ux.push_back(guarded_ratio(num_x, next.F * err, guard, sx, out.skipped));
    out.ux_skipped.push_back(sx);
    const Vec y_err = truth.y[k + 1] - model.h(next.x_pred, u0);
    out.uy.push_back(guarded_ratio(y_err - truth.v[k + 1], next.H * pred_err, guard, sy,
                                   out.skipped));
    out.uy_skipped.push_back(sy);
  }
  return out;
}

std::vector<StepRecord> step_records(const SystemModel& model, const Trajectory& truth,
                                     const std::vector<ForwardState>& fwd,
                                     const std::vector<InverseState>& inv, double guard) {
  const int K = static_cast<int>(fwd.size()) - 1;
  std::optional<InstrumentalDiag> diag;
  if (model.m == 0 && truth.w.size() == static_cast<std::size_t>(K)) {
    diag = estimate_instrumental_diag(model, truth, fwd, guard);
  }
  std::vector<StepRecord> out(K);
  for (int k = 0; k < K; ++k) {
    StepRecord& r = out[k];
    const ForwardState& s = fwd[k + 1];
    r.F = s.F;
    r.H = s.H;
    r.K = s.K_x;
    r.Sigma_pred = s.Sigma_pred;
    if (diag) {
      r.Ux = diag->ux[k];
      r.Uy = diag->uy[k];
    }
    if (inv.size() == fwd.size()) {
      const InverseState& q = inv[k + 1];
      r.G = q.G;
      r.Sigma_bar_pred = q.Sigma_pred;
      r.Q_bar = q.lin.Q_bar;
      r.F_tilde = q.lin.Fz;
      r.K_bar = solve_innovation(q.S_bar, q.G * q.Sigma_pred).transpose();
      const Vec x_pred = q.z_pred.head(model.n);
      const Vec diff = model.state_difference(s.x_hat, x_pred);
      const Vec num = model.g(s.x_hat) - model.g(x_pred);
      std::vector<bool> skipped;
      int count = 0;
      r.Ua = guarded_ratio(num, q.G.leftCols(model.n) * diff, guard, skipped, count);
    }
  }
  return out;
}

BoundEstimates estimate_bounds(const SystemModel& model,
                               const std::vector<std::vector<StepRecord>>& ensemble,
                               BoundSide which, const Perturbations& knobs) {
  BoundEstimates b;
  for (const auto& run : ensemble) b.steps += static_cast<int>(run.size());
  if (ensemble.empty() || b.steps == 0) {
    throw Error(ErrorCode::EmptyEnsemble, "no filter steps to estimate bounds from");
  }
  b.runs = static_cast<int>(ensemble.size());
  const Mat Q = model.Q + knobs.delta_Q * Mat::Identity(model.n, model.n);
  const Mat R = model.R + knobs.delta_R * Mat::Identity(model.p, model.p);
  const Mat E = model.Sigma_eps + knobs.delta_eps * Mat::Identity(model.na, model.na);

  b.q_lo = min_eigenvalue(Q);
  b.q_hi = max_eigenvalue(Q);
  b.r_lo = min_eigenvalue(R);
  b.r_hi = max_eigenvalue(R);
  b.r_hat = min_eigenvalue(R);

  for (const auto& run : ensemble) {
    for (const StepRecord& r : run) {
      if (which == BoundSide::Forward) {
        update_max(b.f_bar, spectral_norm(r.F));
        update_max(b.h_bar, spectral_norm(r.H));
        update_max(b.k_bar, spectral_norm(r.K));
        update_min(b.sigma_lo, min_eigenvalue(r.Sigma_pred));
        update_max(b.sigma_hi, max_eigenvalue(r.Sigma_pred));
        if (r.Ux.size() > 0) update_max(b.alpha_bar, instrumental_norm(r.Ux));
        if (r.Uy.size() > 0) update_max(b.beta_bar, instrumental_norm(r.Uy));
        const Mat U = diag_or_identity(r.Ux, model.n);
        const Mat UFK = U * r.F * r.K;
        update_min(b.q_hat, min_eigenvalue(symmetrize(Q + UFK * R * UFK.transpose())));
      } else {
        if (r.G.size() == 0) continue;
        update_max(b.g_bar, spectral_norm(r.G));
        update_min(b.p_lo, min_eigenvalue(r.Sigma_bar_pred));
        update_max(b.p_hi, max_eigenvalue(r.Sigma_bar_pred));
        if (r.Ua.size() > 0) update_max(b.c_bar, instrumental_norm(r.Ua));
        const Eigen::Index N = r.Q_bar.rows();
        const Mat FK = r.F_tilde * r.K_bar;
        update_min(b.c_hat,
                   min_eigenvalue(symmetrize(r.Q_bar + knobs.delta_Q_bar * Mat::Identity(N, N) +
                                             FK * E * FK.transpose())));
      }
    }
  }

  if (which == BoundSide::Forward) {
    if (!b.alpha_bar) {
      b.alpha_bar = 1.0;
      b.assumed.push_back("alpha_bar");
    }
    if (!b.beta_bar) {
      b.beta_bar = 1.0;
      b.assumed.push_back("beta_bar");
    }
    b.gamma_bar = 1.0;
    b.assumed.push_back("gamma_bar");
  } else {
    if (!b.g_bar) throw Error(ErrorCode::EmptyEnsemble, "no inverse filter steps in ensemble");
    if (!b.c_bar) {
      b.c_bar = 1.0;
      b.assumed.push_back("c_bar");
    }
    b.d_bar = 1.0;
    b.assumed.push_back("d_bar");
    b.eps_bar = max_eigenvalue(E);
    b.d_hat = min_eigenvalue(E);
  }
  return b;
}

InequalityReport check_inequality(const BoundEstimates& b, StabilityTheorem which) {
  auto need = [](const std::optional<double>& v, const char* name) {
    if (!v) throw Error(ErrorCode::MissingBound, std::string("bound '") + name + "' is missing");
    return *v;
  };
  InequalityReport r;
  r.theorem = which;
  if (which == StabilityTheorem::Thm2) {
    const double h = need(b.h_bar, "h_bar");
    const double beta = need(b.beta_bar, "beta_bar");
    r.lhs = need(b.sigma_hi, "sigma_hi") * need(b.gamma_bar, "gamma_bar") * h * h * beta * beta;
    r.rhs = need(b.r_hat, "r_hat");
  } else {
    const double g = need(b.g_bar, "g_bar");
    const double c = need(b.c_bar, "c_bar");
    r.lhs = need(b.p_hi, "p_hi") * need(b.d_bar, "d_bar") * g * g * c * c;
    r.rhs = need(b.d_hat, "d_hat");
  }
  r.margin = r.rhs - r.lhs;
  r.pass = r.lhs < r.rhs;
  return r;
}

RemainderFit fit_taylor_remainders(const SystemModel& model,
                                   const std::vector<Trajectory>& truths,
                                   const std::vector<std::vector<ForwardState>>& runs) {
  double num_phi = 0.0, num_chi = 0.0, den = 0.0;
  RemainderFit fit;
  for (std::size_t r = 0; r < truths.size() && r < runs.size(); ++r) {
    const Trajectory& t = truths[r];
    const auto& run = runs[r];
    for (std::size_t k = 0; k + 1 < run.size() && k < t.x.size(); ++k) {
      const Vec& x = t.x[k];
      const Vec& xh = run[k].x_hat;
      const Vec& u = t.u[k];
      const Vec e = model.state_difference(x, xh);
      const double e2 = e.squaredNorm();
      if (e2 == 0.0) continue;
      Vec phi = model.f(x, u) - model.f(xh, u) - model.F_at(xh, u) * e;
      for (int i : model.angle_dims) phi(i) = wrap_angle(phi(i));
      const Vec chi = model.h(x, u) - model.h(xh, u) - model.H_at(xh, u) * e;
      num_phi += phi.norm() * e2;
      num_chi += chi.norm() * e2;
      den += e2 * e2;
      ++fit.samples;
    }
  }
  if (den > 0.0) {
    fit.kappa_phi = num_phi / den;
    fit.kappa_chi = num_chi / den;
  }
  return fit;
}

std::string to_text(const LimitingGains& g) {
  std::ostringstream out;
  out << "iterations: " << g.iterations << '\n'
      << "residual: " << fmt(g.residual) << '\n'
      << "spectral_radius_F_bar: " << fmt(spectral_radius(g.F_bar)) << '\n'
      << "max_abs_K_bar: " << fmt(g.K_bar.cwiseAbs().maxCoeff()) << '\n';
  return out.str();
}

std::string to_text(const Theorem1Report& r) {
  std::ostringstream out;
  out << "state_dim: " << r.n << '\n'
      << "observability_rank: " << r.observability_rank << '\n'
      << "controllability_rank: " << r.controllability_rank << '\n'
      << "rank_threshold: " << fmt(r.rank_rel_tol) << " * sigma_max\n"
      << "riccati_converged: " << (r.riccati_converged ? "true" : "false") << '\n'
      << "riccati_iterations: " << r.riccati_iterations << '\n'
      << "riccati_residual: " << fmt(r.riccati_residual) << '\n'
      << "closed_loop_spectral_radius: " << fmt(r.spectral_radius) << '\n'
      << "pass: " << (r.pass ? "true" : "false") << '\n';
  return out.str();
}

std::string to_text(const BoundEstimates& b) {
  std::ostringstream out;
  out << "runs: " << b.runs << '\n' << "steps: " << b.steps << '\n';
  for_each_bound(b, [&](const char* name, const std::optional<double>& v) {
    if (v) out << name << ": " << fmt(*v) << '\n';
  });
  if (!b.assumed.empty()) {
    out << "assumed_one:";
    for (const auto& a : b.assumed) out << ' ' << a;
    out << '\n';
  }
  out << "note: empirical finite-sample estimates, evidence rather than a certificate\n";
  return out.str();
}

std::string to_text(const InequalityReport& r) {
  std::ostringstream out;
  out << "theorem: " << theorem_name(r.theorem) << '\n'
      << "lhs: " << fmt(r.lhs) << '\n'
      << "rhs: " << fmt(r.rhs) << '\n'
      << "margin: " << fmt(r.margin) << '\n'
      << "pass: " << (r.pass ? "true" : "false") << '\n';
  return out.str();
}

std::string to_csv(const Theorem1Report& r) {
  std::ostringstream out;
  out << "quantity,value,pass\n"
      << "observability_rank," << r.observability_rank << ','
      << (r.observability_rank == r.n ? "true" : "false") << '\n'
      << "controllability_rank," << r.controllability_rank << ','
      << (r.controllability_rank == r.n ? "true" : "false") << '\n'
      << "riccati_residual," << fmt(r.riccati_residual) << ','
      << (r.riccati_converged ? "true" : "false") << '\n'
      << "closed_loop_spectral_radius," << fmt(r.spectral_radius) << ','
      << (r.pass ? "true" : "false") << '\n';
  return out.str();
}

std::string to_csv(const BoundEstimates& b) {
  std::ostringstream out;
  out << "quantity,value,pass\n";
  for_each_bound(b, [&](const char* name, const std::optional<double>& v) {
    if (v) out << name << ',' << fmt(*v) << ",\n";
  });
  return out.str();
}

std::string to_csv(const InequalityReport& r) {
  std::ostringstream out;
  const std::string t = theorem_name(r.theorem);
  const char* pass = r.pass ? "true" : "false";
  out << "quantity,value,pass\n"
      << t << "_lhs," << fmt(r.lhs) << ",\n"
      << t << "_rhs," << fmt(r.rhs) << ",\n"
      << t << "_margin," << fmt(r.margin) << ',' << pass << '\n';
  return out.str();
}

}  // namespace ifk
