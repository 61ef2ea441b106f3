#include "ifk/rcrlb.hpp"

#include <cmath>
#include <string>

#include "ifk/errors.hpp"

namespace ifk {

namespace {

Mat checked_inverse(const Mat& A, ErrorCode code, const char* what) {
  try {
    return symmetrize(inverse_spd(symmetrize(A)));
  } catch (const Error&) {
    throw Error(code, std::string(what) + " is singular");
  }
}

}  // namespace

Mat enlarge_if_singular(const Mat& Q, double delta) {
  if (Q.rows() == 0) return Q;
  const double top = std::max(1.0, max_eigenvalue(Q));
  if (min_eigenvalue(Q) < 1e-10 * top) return Q + delta * Mat::Identity(Q.rows(), Q.cols());
  return Q;
}

InfoMatrix info_step_additive(const InfoMatrix& J, const Mat& F, const Mat& H_next, const Mat& Q,
                              const Mat& R) {
  const Eigen::Index n = J.J.rows();
  require_shape(J.J, n, n, "J");
  require_shape(F, n, n, "F");
  require_shape(Q, n, n, "Q");
  require_shape(H_next, R.rows(), n, "H");
  const Mat J_inv = checked_inverse(J.J, ErrorCode::SingularJ, "J");
  const Mat P = symmetrize(Q + F * J_inv * F.transpose());
  Mat prior;
  try {
    prior = inverse_spd(P);
  } catch (const Error&) {
    prior = checked_inverse(P + 1e-10 * Mat::Identity(n, n), ErrorCode::SingularQ,
                            "Q + F J^-1 F^T");
  }
  const Mat R_inv = checked_inverse(R, ErrorCode::SingularR, "R");
  return {symmetrize(prior + H_next.transpose() * R_inv * H_next), J.k + 1};
}

GaussianTransition additive_transition(const SystemModel& model, const Vec& u_k,
                                       const Vec& u_next) {
  GaussianTransition tr;
  tr.mean = [&model, u_k](const Vec& x) {
    Vec next = model.f(x, u_k);
    model.wrap_state(next);
    return next;
  };
  tr.F = [&model, u_k](const Vec& x) { return model.F_at(x, u_k); };
  const Mat Q = model.Q;
  tr.Q = [Q](const Vec&) { return Q; };
  tr.H = [&model, u_next](const Vec& x) { return model.H_at(x, u_next); };
  tr.R = model.R;
  return tr;
}

DTerms info_step_general_mc(const GaussianTransition& tr,
                            const std::function<Vec(Rng&)>& sample_state, int samples,
                            std::uint64_t seed) {
  if (samples < 2) throw Error(ErrorCode::DimMismatch, "at least two samples are required");
  const Mat R_inv = checked_inverse(tr.R, ErrorCode::SingularR, "R");

  std::vector<Mat> d11(samples), d12(samples), d22(samples);
  for (int i = 0; i < samples; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    const Vec x = sample_state(rng);
    const Mat F = tr.F(x);
    const Mat Q = tr.Q(x);
    if (Q.size() == 0 || max_eigenvalue(Q) <= 0.0) {
      throw Error(ErrorCode::DegenerateNoise, "transition is deterministic (Q = 0)");
    }
    const Mat Q_inv = checked_inverse(enlarge_if_singular(Q), ErrorCode::DegenerateNoise, "Q");
    const Vec x_next = tr.mean(x) + psd_sqrt(Q) * rng.normal_vec(x.size());
    const Mat H = tr.H(x_next);
    d11[i] = F.transpose() * Q_inv * F;
    d12[i] = -F.transpose() * Q_inv;
    d22[i] = Q_inv + H.transpose() * R_inv * H;
  }

  auto mean_se = [samples](const std::vector<Mat>& xs, Mat& mean, Mat& se) {
    mean = Mat::Zero(xs[0].rows(), xs[0].cols());
    for (const Mat& x : xs) mean += x;
    mean /= samples;
    Mat var = Mat::Zero(mean.rows(), mean.cols());
    for (const Mat& x : xs) var += (x - mean).cwiseAbs2();
    var /= (samples - 1);
    se = (var / samples).cwiseSqrt();
  };
  DTerms d;
  d.samples = samples;
  mean_se(d11, d.D11, d.se11);
  mean_se(d12, d.D12, d.se12);
  mean_se(d22, d.D22, d.se22);
  d.D11 = symmetrize(d.D11);
  d.D22 = symmetrize(d.D22);
  return d;
}

InfoMatrix info_step_general(const InfoMatrix& J, const DTerms& d) {
  Mat A = symmetrize(J.J + d.D11);
  Mat X;
  try {
    X = solve_spd(A, d.D12);
  } catch (const Error&) {
    throw Error(ErrorCode::SingularJ, "J + D11 is singular");
  }
  return {symmetrize(d.D22 - d.D12.transpose() * X), J.k + 1};
}

double inverse_trace(const Mat& J, Eigen::Index dim) {
  const Mat J_inv = checked_inverse(J, ErrorCode::SingularJ, "J");
  return J_inv.topLeftCorner(dim, dim).trace();
}

double rcrlb_scalar(const InfoMatrix& J) {
  return std::sqrt(inverse_trace(J.J, J.J.rows()));
}

std::vector<InfoMatrix> additive_info_series(const SystemModel& model, const Trajectory& truth,
                                             const Mat& J0) {
  const int K = truth.steps();
  std::vector<InfoMatrix> out;
  out.reserve(K + 1);
  out.push_back({J0, 0});
  const Mat Q = enlarge_if_singular(model.Q);
  for (int k = 0; k < K; ++k) {
    const Mat F = model.F_at(truth.x[k], truth.u[k]);
    const Mat H = model.H_at(truth.x[k + 1], truth.u[k + 1]);
    out.push_back(info_step_additive(out.back(), F, H, Q, model.R));
  }
  return out;
}

}  // namespace ifk
