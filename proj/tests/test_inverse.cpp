#include <gtest/gtest.h>

#include <cmath>

#include "ifk/errors.hpp"
#include "ifk/inverse.hpp"

using namespace ifk;

namespace {

Mat s(double v) { return Mat::Constant(1, 1, v); }
Vec sv(double v) { return Vec::Constant(1, v); }
double max_abs(const Mat& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

SystemModel scalar_model(Variant variant, double F, double B, double H, double D, double Q,
                         double R, double G, double eps) {
  LinearMatrices L;
  L.F = s(F);
  L.H = s(H);
  L.G = s(G);
  L.B = variant == Variant::NoInput ? Mat::Zero(1, 0) : s(B);
  L.D = variant == Variant::NoInput ? Mat::Zero(1, 0) : s(D);
  return make_linear_model("scalar", variant, L, s(Q), s(R), s(eps));
}

ForwardGains scalar_gains(double F, double B, double H, double D, double K, double M) {
  ForwardGains g;
  g.F = s(F);
  g.B = s(B);
  g.H = s(H);
  g.D = s(D);
  g.K_x = s(K);
  g.K_u = s(M);
  g.x_pred = sv(0);
  return g;
}

struct FwdRun {
  Trajectory truth;
  std::vector<ForwardState> fwd;
  std::vector<Vec> a;
};

FwdRun forward_run(const SystemModel& m, ForwardKind kind, const ForwardState& init,
                const InputSchedule& u, int K, std::uint64_t seed) {
  Rng rng(seed);
  FwdRun r;
  r.truth = simulate_trajectory(m, Vec::Ones(m.n), u, K, rng);
  r.fwd.push_back(init);
  r.a.emplace_back();
  for (int k = 1; k <= K; ++k) {
    r.fwd.push_back(forward_step(kind, m, r.fwd.back(), r.truth.y[k]));
    r.a.push_back(m.g(r.fwd.back().x_hat) + rng.gaussian(m.Sigma_eps));
  }
  return r;
}

}  // namespace

TEST(IkfWodf, ScalarFixedPointPrediction) {
  const SystemModel m = scalar_model(Variant::WithoutDf, 1, 1, 1, 0, 1, 1, 1, 5);
  const ForwardGains g = scalar_gains(1, 1, 1, 0, 2.0 / 3.0, 1.0);
  const ForwardState rep = make_forward_state(ForwardKind::KFWodf, m, sv(0), s(1));
  const InverseState st = make_inverse_state(InverseKind::IKFWodf, m, sv(0.4), s(2), rep);
  const InverseState next =
      inverse_step_with_gains(InverseKind::IKFWodf, m, st, {sv(1.0), Vec(), sv(2.5), Vec()}, g);
  EXPECT_NEAR(next.lin.Fz(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(next.lin.Fv(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(next.z_pred(0), 2.5, 1e-12);
  EXPECT_NEAR(next.lin.Q_bar(0, 0), 1.0, 1e-12);
}

TEST(IkfWodf, ZeroGainAndPerfectChannel) {
  const SystemModel quiet = scalar_model(Variant::WithoutDf, 1, 1, 1, 0, 1, 1, 2, 1e12);
  const SystemModel sharp = scalar_model(Variant::WithoutDf, 1, 1, 1, 0, 1, 1, 2, 1e-12);
  const ForwardGains g = scalar_gains(1, 1, 1, 0, 0.6, 0.8);
  const InverseInputs in{sv(3.0), Vec(), sv(1.2), Vec()};
  for (const SystemModel* m : {&quiet, &sharp}) {
    const ForwardState rep = make_forward_state(ForwardKind::KFWodf, *m, sv(0), s(1));
    const InverseState st = make_inverse_state(InverseKind::IKFWodf, *m, sv(0.4), s(2), rep);
    const InverseState next = inverse_step_with_gains(InverseKind::IKFWodf, *m, st, in, g);
    if (m == &quiet) {
      EXPECT_NEAR(next.x_dhat(0), next.z_pred(0), 1e-9);
    } else {
      EXPECT_NEAR(next.x_dhat(0), 3.0 / 2.0, 1e-9);
    }
  }
}

TEST(IkfWdf, ScalarSubstitution) {
  const SystemModel m = scalar_model(Variant::WithDf, 1, 0, 1, 1, 1, 1, 1, 1e-12);
  const ForwardState f0 = make_forward_state(ForwardKind::KFWdf, m, sv(0), s(1), sv(0), s(1), s(0));
  const ForwardState f1 = kf_wdf_step(f0, m, sv(3));
  ASSERT_NEAR(f1.x_hat(0), 0.0, 1e-12);
  const Vec z0 = (Vec(2) << 1.0, 1.0).finished();
  const InverseState st = make_inverse_state(InverseKind::IKFWdf, m, z0, Mat::Identity(2, 2), f0);
  const InverseState next = ikf_wdf_step(st, m, m.g(f1.x_hat), sv(0.5), sv(2.0));
  EXPECT_NEAR(next.x_dhat(0), f1.x_hat(0), 1e-6);
  EXPECT_TRUE(psd_check(next.lin.Q_bar, 1e-12));
}

TEST(IkfWdf, RequiresCurrentInput) {
  const SystemModel m = builtin_model("linear3:with-df");
  const ForwardState f0 = make_forward_state(ForwardKind::KFWdf, m, Vec::Zero(3), Mat::Identity(3, 3),
                                             sv(0), s(10), Mat::Zero(3, 1));
  const InverseState st =
      make_inverse_state(InverseKind::IKFWdf, m, Vec::Zero(4), 5.0 * Mat::Identity(4, 4), f0);
  try {
    inverse_step(InverseKind::IKFWdf, m, st, {sv(1), Vec(), Vec::Ones(3), Vec()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingInput);
  }
  EXPECT_THROW(inverse_step(InverseKind::IEKFWdf, m, st, {sv(1), Vec(), Vec::Ones(3), Vec()}), Error);
}

TEST(IkfWdf, WithoutInputColumnsEqualsIkfWodf) {
  const SystemModel full = builtin_model("linear3:with-df");
  LinearMatrices L = *full.linear;
  L.B = Mat::Zero(3, 0);
  L.D = Mat::Zero(2, 0);
  const SystemModel wdf = make_linear_model("l", Variant::WithDf, L, full.Q, full.R, full.Sigma_eps);
  const SystemModel wodf = make_linear_model("l", Variant::WithoutDf, L, full.Q, full.R, full.Sigma_eps);
  const FwdRun r = forward_run(wdf, ForwardKind::KF, make_forward_state(ForwardKind::KF, wdf, Vec::Zero(3), Mat::Identity(3, 3)),
                            constant_schedule(Vec()), 100, 4);
  InverseState a = make_inverse_state(InverseKind::IKFWdf, wdf, Vec::Zero(3), 5.0 * Mat::Identity(3, 3),
                                      make_forward_state(ForwardKind::KFWdf, wdf, Vec::Zero(3), Mat::Identity(3, 3)));
  InverseState b = make_inverse_state(InverseKind::IKFWodf, wodf, Vec::Zero(3), 5.0 * Mat::Identity(3, 3),
                                      make_forward_state(ForwardKind::KFWodf, wodf, Vec::Zero(3), Mat::Identity(3, 3)));
  for (int k = 0; k < 100; ++k) {
    a = inverse_step(InverseKind::IKFWdf, wdf, a, {r.a[k + 1], r.truth.x[k], r.truth.x[k + 1], Vec(0)});
    b = inverse_step(InverseKind::IKFWodf, wodf, b, {r.a[k + 1], r.truth.x[k], r.truth.x[k + 1], Vec()});
    ASSERT_LT(max_abs(a.x_dhat - b.x_dhat), 1e-9);
    ASSERT_LT(max_abs(a.Sigma_bar - b.Sigma_bar), 1e-9);
  }
}

TEST(Iekf, ZeroGainIsPurePropagation) {
  const SystemModel m = builtin_model("fm:no-input");
  ForwardGains g;
  const Vec x = (Vec(2) << 0.4, 1.0).finished();
  g.F = m.F_at(x, Vec());
  g.x_pred = m.f(x, Vec());
  m.wrap_state(g.x_pred);
  g.H = m.H_at(g.x_pred, Vec());
  g.K_x = Mat::Zero(2, 2);
  g.B = Mat::Zero(2, 0);
  g.D = Mat::Zero(2, 0);
  const InverseState st = make_inverse_state(InverseKind::IEKF, m, x, 5.0 * Mat::Identity(2, 2),
                                             make_forward_state(ForwardKind::EKF, m, x, Mat::Identity(2, 2)));
  const InverseState next =
      inverse_step_with_gains(InverseKind::IEKF, m, st, {sv(0.1), Vec(), Vec::Zero(2), Vec()}, g);
  EXPECT_LT(max_abs(m.state_difference(next.z_pred, g.x_pred)), 1e-12);
  EXPECT_LT(max_abs(next.lin.Q_bar), 1e-15);
}

TEST(Iekf, EqualsIkfOnLinearSystem) {
  const SystemModel m = builtin_model("linear3:no-input");
  const ForwardState f0 = make_forward_state(ForwardKind::KF, m, Vec::Zero(3), Mat::Identity(3, 3));
  const FwdRun r = forward_run(m, ForwardKind::KF, f0, constant_schedule(Vec()), 100, 5);
  InverseState a = make_inverse_state(InverseKind::IEKF, m, Vec::Ones(3), 5.0 * Mat::Identity(3, 3),
                                      make_forward_state(ForwardKind::EKF, m, Vec::Zero(3), Mat::Identity(3, 3)));
  InverseState b = make_inverse_state(InverseKind::IKF, m, Vec::Ones(3), 5.0 * Mat::Identity(3, 3), f0);
  for (int k = 0; k < 100; ++k) {
    a = iekf_step(a, m, r.a[k + 1], r.truth.x[k + 1]);
    b = ikf_step(b, m, r.a[k + 1], r.truth.x[k + 1]);
    ASSERT_LT(max_abs(a.x_dhat - b.x_dhat), 1e-9) << k;
    ASSERT_LT(max_abs(a.Sigma_bar - b.Sigma_bar), 1e-9) << k;
  }
}

TEST(Iekf, QuadraticActionJacobian) {
  const SystemModel m = builtin_model("fm:no-input");
  const FwdRun r = forward_run(m, ForwardKind::EKF, make_forward_state(ForwardKind::EKF, m, Vec::Zero(2), 10.0 * Mat::Identity(2, 2)),
                            constant_schedule(Vec()), 3, 6);
  InverseState st = make_inverse_state(InverseKind::IEKF, m, (Vec(2) << 0.3, 0.2).finished(), 5.0 * Mat::Identity(2, 2),
                                       make_forward_state(ForwardKind::EKF, m, Vec::Zero(2), 5.0 * Mat::Identity(2, 2)));
  for (int k = 0; k < 3; ++k) {
    st = iekf_step(st, m, r.a[k + 1], r.truth.x[k + 1]);
    EXPECT_NEAR(st.G(0, 0), 2.0 * st.z_pred(0), 1e-12);
    EXPECT_EQ(st.G(0, 1), 0.0);
  }
}

TEST(IekfWodf, TransitionMapSubstitution) {
  const SystemModel m = scalar_model(Variant::WithoutDf, 1, 1, 1, 0, 1, 1, 1, 1);
  const PreviousGains prev{s(1.0), s(1.0)};
  const Vec u = iekf_wodf_input_map(m, sv(0.7), sv(2.0), sv(3.0), prev, sv(0.0));
  EXPECT_NEAR(u(0), 1.0, 1e-15);
  const Vec x = iekf_wodf_state_map(m, sv(2.0), u, sv(4.0), s(0.5), sv(0.0));
  EXPECT_NEAR(x(0), 3.5, 1e-15);
}

TEST(IekfWodf, NoiseFreeLinearizationHasZeroQbar) {
  SystemModel m = builtin_model("fm:without-df");
  m.R = Mat::Zero(2, 2);
  ForwardGains g;
  const Vec x = (Vec(2) << 0.4, 1.0).finished();
  g.F = m.F_at(x, sv(0.1));
  g.B = m.B_at(x, sv(0.1));
  g.H = m.H_at(x, sv(0.1));
  g.K_x = 0.3 * Mat::Ones(2, 2);
  g.K_u = Mat::Ones(1, 2);
  const Vec z = (Vec(3) << 0.4, 1.0, 0.1).finished();
  const PreviousGains prev{Mat::Ones(1, 2), (Mat(2, 1) << 0.5, 0.2).finished()};
  for (JacobianMode mode : {JacobianMode::Analytic, JacobianMode::FiniteDifference}) {
    const InverseLinearization lin = inverse_linearization(
        InverseKind::IEKFWodf, m, g, z, x, prev, x, x, Vec(), mode);
    EXPECT_EQ(max_abs(lin.Q_bar), 0.0);
    EXPECT_EQ(lin.Fv.cols(), 4);
  }
}

TEST(IekfWodf, AnalyticMatchesFiniteDifferenceLinearization) {
  const SystemModel m = builtin_model("fm:without-df");
  const Vec x = (Vec(2) << 0.4, 1.0).finished();
  const Vec z = (Vec(3) << 0.4, 1.0, 0.2).finished();
  const Vec x_prev = (Vec(2) << 0.35, 0.9).finished();
  const PreviousGains prev{(Mat(1, 2) << 0.3, 0.1).finished(), (Mat(2, 1) << 0.5, 0.2).finished()};
  const Vec xt = (Vec(2) << 0.5, 1.1).finished();
  // Gains are linearized where the transition evaluates them: at x and the propagated input.
  const Vec u = iekf_wodf_input_map(m, z.tail(1), x_prev, xt, prev, Vec::Zero(2));
  ForwardGains g;
  g.F = m.F_at(x, u);
  g.B = m.B_at(x, u);
  g.H = m.H_at(m.f(x, u), u);
  g.K_x = (Mat(2, 2) << 0.01, 0.02, 0.3, -0.1).finished();
  g.K_u = (Mat(1, 2) << 0.2, -0.4).finished();
  const Vec xn = (Vec(2) << 0.45, 1.3).finished();
  const auto a = inverse_linearization(InverseKind::IEKFWodf, m, g, z, x_prev, prev, xt, xn, Vec(), JacobianMode::Analytic);
  const auto f = inverse_linearization(InverseKind::IEKFWodf, m, g, z, x_prev, prev, xt, xn, Vec(), JacobianMode::FiniteDifference);
  EXPECT_LT(max_abs(a.Fz - f.Fz), 1e-5);
  EXPECT_LT(max_abs(a.Fv - f.Fv), 1e-5);
}

TEST(IekfWodf, LinearMatchesHandCodedSpecialization) {
  const SystemModel m = builtin_model("linear3:without-df");
  const Mat F = m.linear->F, B = m.linear->B, H = m.linear->H, G = m.linear->G;
  const Mat Q = m.Q, R = m.R, E = m.Sigma_eps;
  const ForwardState f0 = make_forward_state(ForwardKind::EKFWodf, m, Vec::Zero(3), Mat::Identity(3, 3), sv(0));
  const FwdRun r = forward_run(m, ForwardKind::EKFWodf, f0, step_schedule(sv(50), sv(-50), 50), 100, 7);

  const Vec z0 = (Vec(4) << 1, 1, 1, 0).finished();
  InverseState st = make_inverse_state(InverseKind::IEKFWodf, m, z0, 5.0 * Mat::Identity(4, 4),
                                       make_forward_state(ForwardKind::EKFWodf, m, Vec::Zero(3), Mat::Identity(3, 3), sv(0)));

  // Gains of the linear unknown-input filter depend only on the covariance.
  const Mat I3 = Mat::Identity(3, 3), I2 = Mat::Identity(2, 2);
  Mat P = Mat::Identity(3, 3);
  Vec z = z0;
  Mat Sb = 5.0 * Mat::Identity(4, 4);
  Vec x_prev = z0.head(3);
  Mat Ku_prev;
  for (int k = 0; k < 100; ++k) {
    const Mat Pp = F * P * F.transpose() + Q;
    const Mat Kx = Pp * H.transpose() * (H * Pp * H.transpose() + R).inverse();
    const Mat Su = (B.transpose() * H.transpose() * R.inverse() * (I2 - H * Kx) * H * B).inverse();
    const Mat Ku = Su * B.transpose() * H.transpose() * R.inverse() * (I2 - H * Kx);
    P = (I3 - Kx * H) * (Pp + B * Su * B.transpose() * (I3 - Kx * H).transpose());

    Mat Fz = Mat::Zero(4, 4);
    Mat Fv = Mat::Zero(4, 4);
    Vec u_next = z.tail(1);
    if (k == 0) {
      Fz.topLeftCorner(3, 3) = (I3 - Kx * H) * F;
      Fz.topRightCorner(3, 1) = (I3 - Kx * H) * B;
      Fz(3, 3) = 1.0;
      Fv.topRightCorner(3, 2) = Kx;
    } else {
      // The H B u terms cancel: u_hat_{k-1} = K^u_{k-1} (H x_k - H F x_hat_{k-1} + v_k).
      u_next = Ku_prev * (H * r.truth.x[k] - H * F * x_prev);
      Fz.topLeftCorner(3, 3) = (I3 - Kx * H) * F;
      Fv.topLeftCorner(3, 2) = (I3 - Kx * H) * B * Ku_prev;
      Fv.topRightCorner(3, 2) = Kx;
      Fv.bottomLeftCorner(1, 2) = Ku_prev;
    }
    Vec zp(4);
    zp.head(3) = (I3 - Kx * H) * (F * z.head(3) + B * u_next) + Kx * H * r.truth.x[k + 1];
    zp(3) = u_next(0);
    Mat Rb = Mat::Zero(4, 4);
    Rb.topLeftCorner(2, 2) = R;
    Rb.bottomRightCorner(2, 2) = R;
    const Mat Sp = Fz * Sb * Fz.transpose() + Fv * Rb * Fv.transpose();
    Mat Gb = Mat::Zero(1, 4);
    Gb.leftCols(3) = G;
    const Mat S = Gb * Sp * Gb.transpose() + E;
    const Mat L = Sp * Gb.transpose() * S.inverse();
    x_prev = z.head(3);
    z = zp + L * (r.a[k + 1] - G * zp.head(3));
    Sb = Sp - L * Gb * Sp;
    Ku_prev = Ku;

    st = iekf_wodf_step(st, m, r.a[k + 1], r.truth.x[k], r.truth.x[k + 1]);
    const double scale = std::max(1.0, max_abs(z));
    ASSERT_LT(max_abs(st.z() - z), 1e-9 * scale) << k;
    ASSERT_LT(max_abs(st.Sigma_bar - Sb), 1e-9 * std::max(1.0, max_abs(Sb))) << k;
  }
}

TEST(IekfWdf, ZeroGainReduction) {
  const SystemModel m = builtin_model("fm:with-df");
  const Vec x = (Vec(2) << 0.4, 1.0).finished();
  const Vec u = sv(0.3);
  const auto [xn, un] = iekf_wdf_maps(m, x, u, x, u, Mat::Zero(2, 2), Mat::Zero(1, 2),
                                      m.D_at(x, u), Vec::Zero(2));
  Vec expect = m.f(x, u);
  m.wrap_state(expect);
  EXPECT_LT(max_abs(m.state_difference(xn, expect)), 1e-12);
  EXPECT_EQ(un(0), 0.0);
}

TEST(IekfWdf, EqualsIkfWdfWithMatchedGains) {
  const SystemModel m = builtin_model("linear3:with-df");
  const ForwardState f0 = make_forward_state(ForwardKind::KFWdf, m, Vec::Zero(3), Mat::Identity(3, 3),
                                             sv(10), s(10), Mat::Zero(3, 1));
  const FwdRun r = forward_run(m, ForwardKind::KFWdf, f0, step_schedule(sv(50), sv(-50), 50), 100, 8);
  const Vec z0 = (Vec(4) << 1, 1, 1, 50).finished();
  InverseState a = make_inverse_state(InverseKind::IEKFWdf, m, z0, 5.0 * Mat::Identity(4, 4), f0);
  InverseState b = make_inverse_state(InverseKind::IKFWdf, m, z0, 5.0 * Mat::Identity(4, 4), f0);
  ForwardState rep = f0;
  for (int k = 0; k < 100; ++k) {
    const ForwardGains g = replicate_forward_gain(rep, ForwardKind::KFWdf, m, b.x_dhat, b.u_dhat);
    const InverseInputs in{r.a[k + 1], r.truth.x[k], r.truth.x[k + 1], r.truth.u[k + 1]};
    a = inverse_step_with_gains(InverseKind::IEKFWdf, m, a, in, g);
    b = inverse_step_with_gains(InverseKind::IKFWdf, m, b, in, g);
    const double scale = std::max(1.0, max_abs(b.z()));
    ASSERT_LT(max_abs(a.z() - b.z()), 1e-9 * scale) << k;
    ASSERT_LT(max_abs(a.Sigma_bar - b.Sigma_bar), 1e-9 * std::max(1.0, max_abs(b.Sigma_bar))) << k;
  }
}

TEST(IekfWdf, InputEstimateWrapped) {
  const SystemModel m = builtin_model("fm:with-df");
  const ForwardState f0 = make_forward_state(ForwardKind::EKFWdf, m, Vec::Zero(2), 10.0 * Mat::Identity(2, 2), sv(0));
  const FwdRun r = forward_run(m, ForwardKind::EKFWdf, f0, constant_schedule(sv(3.0)), 50, 9);
  InverseState st = make_inverse_state(InverseKind::IEKFWdf, m, (Vec(3) << 0, 0, 3.0).finished(),
                                       15.0 * Mat::Identity(3, 3), f0);
  for (int k = 0; k < 50; ++k) {
    st = iekf_wdf_step(st, m, r.a[k + 1], r.truth.x[k + 1], r.truth.u[k + 1]);
    ASSERT_GE(st.u_dhat(0), -M_PI);
    ASSERT_LT(st.u_dhat(0), M_PI);
  }
}

TEST(IekfOneStep, LinearizationExamples) {
  const SystemModel m = scalar_model(Variant::NoInput, 1, 0, 1, 0, 1, 3, 1, 1);
  ForwardGains g = scalar_gains(1, 0, 1, 0, 0.0, 0.0);
  g.B = Mat::Zero(1, 0);
  g.D = Mat::Zero(1, 0);
  auto lin = inverse_linearization(InverseKind::IEKFOneStep, m, g, sv(0.2), Vec(), std::nullopt,
                                   sv(0.1), Vec(), Vec(), JacobianMode::Analytic);
  EXPECT_NEAR(lin.Fz(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(lin.Q_bar(0, 0), 0.0, 1e-15);
  g.K_x = s(0.5);
  lin = inverse_linearization(InverseKind::IEKFOneStep, m, g, sv(0.2), Vec(), std::nullopt,
                              sv(0.1), Vec(), Vec(), JacobianMode::Analytic);
  EXPECT_NEAR(lin.Fz(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(lin.Q_bar(0, 0), 0.25 * 3.0, 1e-15);
}

TEST(IekfOneStep, EqualsTwoStepFilterOnOneStepTransition) {
  const SystemModel m = builtin_model("linear3:no-input");
  const Mat F = m.linear->F, H = m.linear->H, G = m.linear->G;
  const Mat S0 = F * F.transpose() + m.Q;
  const ForwardState f0 = make_forward_state(ForwardKind::EKFOneStep, m, Vec::Zero(3), S0);
  Rng rng(10);
  const Trajectory t = simulate_trajectory(m, Vec::Ones(3), constant_schedule(Vec()), 100, rng);
  // Forward one-step run: fwd[k] holds x_hat_{k|k-1}; a_k = G x_hat_{k|k-1} + eps.
  std::vector<ForwardState> fwd{f0};
  std::vector<Vec> a;
  for (int k = 1; k <= 100; ++k) {
    a.push_back(m.g(fwd.back().x_hat) + rng.gaussian(m.Sigma_eps));
    fwd.push_back(ekf_one_step(fwd.back(), m, t.y[k]));
  }
  InverseState st = make_inverse_state(InverseKind::IEKFOneStep, m, Vec::Ones(3), 5.0 * Mat::Identity(3, 3), f0);
  Vec sp = Vec::Ones(3);
  Mat Pp = 5.0 * Mat::Identity(3, 3);
  Mat P = S0;
  for (int k = 1; k <= 100; ++k) {
    // Two-step KF on s_{k+1} = (F - K H) s_k + K H x_k + K v_k, a_k = G s_k + eps.
    const Mat S = H * P * H.transpose() + m.R;
    const Mat K = F * P * H.transpose() * S.inverse();
    P = F * P * F.transpose() + m.Q - K * S * K.transpose();
    const Mat L = Pp * G.transpose() * (G * Pp * G.transpose() + m.Sigma_eps).inverse();
    const Vec post = sp + L * (a[k - 1] - G * sp);
    const Mat Ppost = Pp - L * G * Pp;
    const Mat Ft = F - K * H;
    sp = Ft * post + K * H * t.x[k];
    Pp = Ft * Ppost * Ft.transpose() + K * m.R * K.transpose();

    st = iekf_one_step(st, m, a[k - 1], t.x[k]);
    ASSERT_LT(max_abs(st.x_dhat - sp), 1e-9) << k;
    ASSERT_LT(max_abs(st.Sigma_bar - Pp), 1e-9) << k;
  }
}

TEST(Replica, LinearGainsIgnoreEstimates) {
  const SystemModel m = builtin_model("linear3:without-df");
  ForwardState fwd = make_forward_state(ForwardKind::KFWodf, m, Vec::Zero(3), Mat::Identity(3, 3));
  ForwardState rep = fwd;
  Rng rng(2);
  for (int k = 0; k < 30; ++k) {
    const ForwardGains gf = forward_gains(ForwardKind::KFWodf, m, fwd);
    fwd = advance_covariance(fwd, gf);
    const Vec junk = (Vec(3) << rng.normal(0, 100), rng.normal(0, 100), rng.normal(0, 100)).finished();
    const ForwardGains gr = replicate_forward_gain(rep, ForwardKind::KFWodf, m, junk, sv(rng.normal()));
    ASSERT_LT(max_abs(gf.K_x - gr.K_x), 1e-12);
    ASSERT_LT(max_abs(gf.K_u - gr.K_u), 1e-12);
  }
}

TEST(Replica, IdenticalInitializationReproducesForwardGain) {
  const SystemModel m = builtin_model("fm:no-input");
  const ForwardState f0 = make_forward_state(ForwardKind::EKF, m, (Vec(2) << 0.3, 0.5).finished(), 10.0 * Mat::Identity(2, 2));
  const FwdRun r = forward_run(m, ForwardKind::EKF, f0, constant_schedule(Vec()), 30, 11);
  ForwardState rep = f0;
  for (int k = 0; k < 30; ++k) {
    const ForwardGains g = replicate_forward_gain(rep, ForwardKind::EKF, m, r.fwd[k].x_hat, Vec());
    ASSERT_LT(max_abs(g.K_x - r.fwd[k + 1].K_x), 1e-12);
  }
}

TEST(Replica, MismatchedInitialCovarianceConverges) {
  const SystemModel m = builtin_model("fm:no-input");
  const ForwardState f0 = make_forward_state(ForwardKind::EKF, m, (Vec(2) << 0.3, 0.5).finished(), 10.0 * Mat::Identity(2, 2));
  const FwdRun r = forward_run(m, ForwardKind::EKF, f0, constant_schedule(Vec()), 100, 12);
  ForwardState rep = make_forward_state(ForwardKind::EKF, m, f0.x_hat, 5.0 * Mat::Identity(2, 2));
  double d5 = 0.0, d100 = 0.0;
  for (int k = 0; k < 100; ++k) {
    const ForwardGains g = replicate_forward_gain(rep, ForwardKind::EKF, m, r.fwd[k].x_hat, Vec());
    const double d = (g.K_x - r.fwd[k + 1].K_x).norm();
    if (k + 1 == 5) d5 = d;
    if (k + 1 == 100) d100 = d;
  }
  EXPECT_LT(d100, d5);
}

TEST(Inverse, CovariancesStayPsdOverRuns) {
  struct Case {
    const char* model;
    ForwardKind fk;
    InverseKind ik;
    double u;
  };
  const Case cases[] = {
      {"linear3:no-input", ForwardKind::KF, InverseKind::IKF, 0},
      {"linear3:without-df", ForwardKind::KFWodf, InverseKind::IKFWodf, 50},
      {"linear3:with-df", ForwardKind::KFWdf, InverseKind::IKFWdf, 50},
      {"fm:no-input", ForwardKind::EKF, InverseKind::IEKF, 0},
      {"fm:with-df", ForwardKind::EKFWdf, InverseKind::IEKFWdf, 0.7},
  };
  for (const Case& c : cases) {
    const SystemModel m = builtin_model(c.model);
    const int n = m.n;
    const ForwardState f0 = make_forward_state(c.fk, m, Vec::Zero(n), Mat::Identity(n, n),
                                               Vec::Zero(m.m), Mat::Identity(m.m, m.m), Mat::Zero(n, m.m));
    const FwdRun r = forward_run(m, c.fk, f0, constant_schedule(Vec::Constant(m.m, c.u)), 100, 13);
    const int N = n + (is_augmented(c.ik) ? m.m : 0);
    InverseState st = make_inverse_state(c.ik, m, Vec::Zero(N), 5.0 * Mat::Identity(N, N), f0);
    for (int k = 0; k < 100; ++k) {
      st = inverse_step(c.ik, m, st, {r.a[k + 1], r.truth.x[k], r.truth.x[k + 1], r.truth.u[k + 1]});
      ASSERT_TRUE(psd_check(st.Sigma_bar, 1e-8)) << c.model << " k=" << k;
    }
  }
}
