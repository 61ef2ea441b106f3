#include "ifk/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "ifk/errors.hpp"
#include "ifk/io.hpp"

namespace ifk {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::NoInput: return "no-input";
    case Variant::WithoutDf: return "without-df";
    case Variant::WithDf: return "with-df";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "no-input") return Variant::NoInput;
  if (text == "without-df") return Variant::WithoutDf;
  if (text == "with-df") return Variant::WithDf;
  throw Error(ErrorCode::UnknownModel, "unknown variant '" + std::string(text) + "'");
}

double wrap_angle(double v) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double r = std::fmod(v + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  r -= kPi;
  if (r >= kPi) r -= kTwoPi;
  return r;
}

Mat jacobian_fd(const std::function<Vec(const Vec&)>& map, const Vec& at) {
  const Vec f0 = map(at);
  if (!all_finite(f0)) {
    throw Error(ErrorCode::NonFiniteEvaluation, "jacobian_fd: map is not finite at the point");
  }
  Mat J(f0.size(), at.size());
  Vec xp = at;
  Vec xm = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double step = std::max(1e-6, 1e-6 * std::abs(at(i)));
    xp(i) = at(i) + step;
    xm(i) = at(i) - step;
    const Vec fp = map(xp);
    const Vec fm = map(xm);
    if (!all_finite(fp) || !all_finite(fm)) {
      throw Error(ErrorCode::NonFiniteEvaluation, "jacobian_fd: map is not finite near the point");
    }
    // Divide by the step actually represented in floating point.
    J.col(i) = (fp - fm) / (xp(i) - xm(i));
    xp(i) = at(i);
    xm(i) = at(i);
  }
  return J;
}

Mat jacobian_fd(const StateInputMap& map, const Vec& x, const Vec& u, JacobianArg arg) {
  if (arg == JacobianArg::State) {
    return jacobian_fd([&](const Vec& xx) { return map(xx, u); }, x);
  }
  return jacobian_fd([&](const Vec& uu) { return map(x, uu); }, u);
}

bool SystemModel::analytic_jacobians() const {
  const bool input_ok = m == 0 || (jac_f_u && (!direct_feedthrough() || jac_h_u));
  return jac_f_x && jac_h_x && jac_g_x && input_ok;
}

Mat SystemModel::F_at(const Vec& x, const Vec& u) const {
  return jac_f_x ? jac_f_x(x, u) : jacobian_fd(f, x, u, JacobianArg::State);
}

Mat SystemModel::B_at(const Vec& x, const Vec& u) const {
  if (m == 0) return Mat::Zero(n, 0);
  return jac_f_u ? jac_f_u(x, u) : jacobian_fd(f, x, u, JacobianArg::Input);
}

Mat SystemModel::H_at(const Vec& x, const Vec& u) const {
  return jac_h_x ? jac_h_x(x, u) : jacobian_fd(h, x, u, JacobianArg::State);
}

Mat SystemModel::D_at(const Vec& x, const Vec& u) const {
  if (m == 0) return Mat::Zero(p, 0);
  if (jac_h_u) return jac_h_u(x, u);
  return jacobian_fd(h, x, u, JacobianArg::Input);
}

Mat SystemModel::G_at(const Vec& x) const { return jac_g_x ? jac_g_x(x) : jacobian_fd(g, x); }

void SystemModel::wrap_state(Vec& x) const {
  for (int i : angle_dims) x(i) = wrap_angle(x(i));
}

void SystemModel::wrap_input_vec(Vec& u) const {
  if (!wrap_input) return;
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = wrap_angle(u(i));
}

Vec SystemModel::state_difference(const Vec& a, const Vec& b) const {
  Vec d = a - b;
  for (int i : angle_dims) d(i) = wrap_angle(d(i));
  return d;
}

void SystemModel::validate() const {
  if (n <= 0 || m < 0 || p <= 0 || na <= 0) {
    throw Error(ErrorCode::DimMismatch, name + ": invalid dimensions");
  }
  require_shape(Q, n, n, "Q");
  require_shape(R, p, p, "R");
  require_shape(Sigma_eps, na, na, "Sigma_eps");
  if (!psd_check(Q, 1e-9)) throw Error(ErrorCode::NotSPD, name + ": Q is not symmetric PSD");
  if (!psd_check(R, 1e-9) || min_eigenvalue(R) <= 0.0) {
    throw Error(ErrorCode::SingularR, name + ": R must be positive definite");
  }
  if (!psd_check(Sigma_eps, 1e-9) || min_eigenvalue(Sigma_eps) <= 0.0) {
    throw Error(ErrorCode::NotSPD, name + ": Sigma_eps must be positive definite");
  }
  if (!f || !h || !g) throw Error(ErrorCode::UnknownModel, name + ": missing model map");
  for (int i : angle_dims) {
    if (i < 0 || i >= n) throw Error(ErrorCode::DimMismatch, name + ": angle index out of range");
  }
}

SystemModel make_linear_model(std::string name, Variant variant, const LinearMatrices& mats,
                              const Mat& Q, const Mat& R, const Mat& Sigma_eps) {
  SystemModel model;
  model.name = std::move(name);
  model.variant = variant;
  model.n = static_cast<int>(mats.F.rows());
  model.m = static_cast<int>(mats.B.cols());
  model.p = static_cast<int>(mats.H.rows());
  model.na = static_cast<int>(mats.G.rows());
  require_shape(mats.F, model.n, model.n, "F");
  require_shape(mats.B, model.n, model.m, "B");
  require_shape(mats.H, model.p, model.n, "H");
  require_shape(mats.D, model.p, model.m, "D");
  require_shape(mats.G, model.na, model.n, "G");

  const LinearMatrices M = mats;
  model.f = [M](const Vec& x, const Vec& u) -> Vec {
    Vec out = M.F * x;
    if (M.B.cols() > 0) out += M.B * u;
    return out;
  };
  model.h = [M](const Vec& x, const Vec& u) -> Vec {
    Vec out = M.H * x;
    if (M.D.cols() > 0) out += M.D * u;
    return out;
  };
  model.g = [M](const Vec& x) -> Vec { return M.G * x; };
  model.jac_f_x = [M](const Vec&, const Vec&) -> Mat { return M.F; };
  model.jac_f_u = [M](const Vec&, const Vec&) -> Mat { return M.B; };
  model.jac_h_x = [M](const Vec&, const Vec&) -> Mat { return M.H; };
  model.jac_h_u = [M](const Vec&, const Vec&) -> Mat { return M.D; };
  model.jac_g_x = [M](const Vec&) -> Mat { return M.G; };
  model.Q = Q;
  model.R = R;
  model.Sigma_eps = Sigma_eps;
  model.linear = mats;
  model.validate();
  return model;
}

namespace {

SystemModel linear3(Variant variant) {
  LinearMatrices mats;
  mats.F.resize(3, 3);
  mats.F << 0.1, 0.5, 0.08,
            0.6, 0.01, 0.04,
            0.1, 0.7, 0.05;
  mats.H.resize(2, 3);
  mats.H << 1, 1, 0,
            0, 1, 1;
  mats.G = Mat::Ones(1, 3);
  if (variant == Variant::NoInput) {
    mats.B = Mat::Zero(3, 0);
    mats.D = Mat::Zero(2, 0);
  } else {
    mats.B = (Mat(3, 1) << 0, 2, 1).finished();
    mats.D = variant == Variant::WithDf ? (Mat(2, 1) << 0, 1).finished() : Mat::Zero(2, 1);
  }
  return make_linear_model("linear3", variant, mats, Mat::Identity(3, 3),
                           2.0 * Mat::Identity(2, 2), Mat::Constant(1, 1, 5.0));
}

// FM demodulator: state (lambda, theta), T = 2 pi / 16, beta = 100.
SystemModel fm(Variant variant) {
  constexpr double kT = 2.0 * std::numbers::pi / 16.0;
  constexpr double kBeta = 100.0;
  const double decay = std::exp(-kT / kBeta);
  Mat F(2, 2);
  F << decay, 0.0,
       -kBeta * decay - 1.0, 1.0;
  const Vec noise_dir = (Vec(2) << 1.0, -kBeta).finished();
  const Vec input_col = (Vec(2) << 0.001, 1.0).finished();
  const double sqrt2 = std::numbers::sqrt2;

  SystemModel model;
  model.name = "fm";
  model.variant = variant;
  model.n = 2;
  model.m = variant == Variant::NoInput ? 0 : 1;
  model.p = 2;
  model.na = 1;
  model.Q = 0.01 * noise_dir * noise_dir.transpose();
  model.R = Mat::Identity(2, 2);
  model.Sigma_eps = Mat::Constant(1, 1, 5.0);
  model.angle_dims = {1};

  if (variant == Variant::WithoutDf) {
    model.f = [F, input_col](const Vec& x, const Vec& u) -> Vec { return F * x + input_col * u(0); };
    model.jac_f_u = [input_col](const Vec&, const Vec&) -> Mat { return input_col; };
  } else {
    model.f = [F](const Vec& x, const Vec&) -> Vec { return F * x; };
    if (model.m > 0) model.jac_f_u = [](const Vec&, const Vec&) -> Mat { return Mat::Zero(2, 1); };
  }
  model.jac_f_x = [F](const Vec&, const Vec&) -> Mat { return F; };

  if (variant == Variant::WithDf) {
    model.h = [sqrt2](const Vec& x, const Vec& u) -> Vec {
      const double phase = x(1) + u(0);
      return (Vec(2) << sqrt2 * std::sin(phase), sqrt2 * std::cos(phase)).finished();
    };
    model.jac_h_x = [sqrt2](const Vec& x, const Vec& u) -> Mat {
      const double phase = x(1) + u(0);
      return (Mat(2, 2) << 0.0, sqrt2 * std::cos(phase), 0.0, -sqrt2 * std::sin(phase)).finished();
    };
    model.jac_h_u = [sqrt2](const Vec& x, const Vec& u) -> Mat {
      const double phase = x(1) + u(0);
      return (Mat(2, 1) << sqrt2 * std::cos(phase), -sqrt2 * std::sin(phase)).finished();
    };
    model.wrap_input = true;
  } else {
    model.h = [sqrt2](const Vec& x, const Vec&) -> Vec {
      return (Vec(2) << sqrt2 * std::sin(x(1)), sqrt2 * std::cos(x(1))).finished();
    };
    model.jac_h_x = [sqrt2](const Vec& x, const Vec&) -> Mat {
      return (Mat(2, 2) << 0.0, sqrt2 * std::cos(x(1)), 0.0, -sqrt2 * std::sin(x(1))).finished();
    };
    if (model.m > 0) model.jac_h_u = [](const Vec&, const Vec&) -> Mat { return Mat::Zero(2, 1); };
  }

  if (variant == Variant::NoInput) {
    model.g = [](const Vec& x) -> Vec { return Vec::Constant(1, x(0) * x(0)); };
    model.jac_g_x = [](const Vec& x) -> Mat { return (Mat(1, 2) << 2.0 * x(0), 0.0).finished(); };
  } else {
    model.g = [](const Vec& x) -> Vec { return Vec::Constant(1, x(0)); };
    model.jac_g_x = [](const Vec&) -> Mat { return (Mat(1, 2) << 1.0, 0.0).finished(); };
  }
  model.validate();
  return model;
}

}  // namespace

SystemModel builtin_model(std::string_view name, Variant variant) {
  if (name == "linear3") return linear3(variant);
  if (name == "fm") return fm(variant);
  throw Error(ErrorCode::UnknownModel, "unknown model '" + std::string(name) + "'");
}

SystemModel builtin_model(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::UnknownModel,
                "model must be given as <name>:<variant>, got '" + std::string(spec) + "'");
  }
  return builtin_model(spec.substr(0, colon), parse_variant(spec.substr(colon + 1)));
}

std::vector<std::string> builtin_model_names() { return {"linear3", "fm"}; }

InputSchedule step_schedule(Vec before, Vec after, int last_before) {
  return [before = std::move(before), after = std::move(after), last_before](int k) -> Vec {
    return k <= last_before ? before : after;
  };
}

InputSchedule constant_schedule(Vec value) {
  return [value = std::move(value)](int) -> Vec { return value; };
}

Trajectory simulate_trajectory(const SystemModel& model, const Vec& x0,
                               const InputSchedule& inputs, int K, Rng& rng) {
  require_size(x0, model.n, "simulate_trajectory: x0");
  if (K < 1) throw Error(ErrorCode::DimMismatch, "simulate_trajectory: K must be >= 1");

  const Mat q_sqrt = psd_sqrt(model.Q);
  const Mat r_sqrt = psd_sqrt(model.R);

  Trajectory traj;
  traj.seed = rng.seed();
  traj.x.reserve(K + 1);
  traj.u.reserve(K + 1);
  traj.y.reserve(K + 1);
  traj.w.reserve(K);
  traj.v.reserve(K + 1);

  Vec x = x0;
  model.wrap_state(x);
  traj.x.push_back(x);
  traj.u.push_back(model.m > 0 ? inputs(0) : Vec(0));
  traj.y.emplace_back(0);
  traj.v.emplace_back(0);
  require_size(traj.u.back(), model.m, "simulate_trajectory: input");

  for (int k = 0; k < K; ++k) {
    const Vec w = q_sqrt * rng.normal_vec(model.n);
    Vec next = model.f(traj.x[k], traj.u[k]) + w;
    model.wrap_state(next);
    if (!all_finite(next)) {
      throw Error(ErrorCode::NonFiniteState,
                  "simulate_trajectory: state diverged at k=" + std::to_string(k + 1));
    }
    const Vec u_next = model.m > 0 ? inputs(k + 1) : Vec(0);
    require_size(u_next, model.m, "simulate_trajectory: input");
    const Vec v = r_sqrt * rng.normal_vec(model.p);
    traj.w.push_back(w);
    traj.x.push_back(next);
    traj.u.push_back(u_next);
    traj.v.push_back(v);
    traj.y.push_back(model.h(next, u_next) + v);
  }
  return traj;
}

Trajectory simulate_trajectory(const SystemModel& model, const Vec& x0,
                               const InputSchedule& inputs, int K, std::uint64_t seed) {
  Rng rng(seed);
  return simulate_trajectory(model, x0, inputs, K, rng);
}

std::string trajectory_csv(const Trajectory& traj) {
  if (traj.x.empty()) throw Error(ErrorCode::DimMismatch, "trajectory_csv: empty trajectory");
  const Eigen::Index n = traj.x[0].size();
  const Eigen::Index m = traj.u[0].size();
  const Eigen::Index p = traj.y.size() > 1 ? traj.y[1].size() : 0;

  std::ostringstream out;
  out << "k";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x_" << i;
  for (Eigen::Index i = 0; i < m; ++i) out << ",u_" << i;
  for (Eigen::Index i = 0; i < p; ++i) out << ",y_" << i;
  out << '\n';
  for (std::size_t k = 0; k < traj.x.size(); ++k) {
    out << k;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_double(traj.x[k](i));
    for (Eigen::Index i = 0; i < m; ++i) out << ',' << format_double(traj.u[k](i));
    for (Eigen::Index i = 0; i < p; ++i) {
      out << ',';
      if (traj.y[k].size() == p) out << format_double(traj.y[k](i));
    }
    out << '\n';
  }
  return out.str();
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  write_file_atomic(path, trajectory_csv(traj));
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "'" + path + "' is empty");
  const auto header = split(line, ',');
  int n = 0, m = 0, p = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0) ++n;
    if (h.rfind("u_", 0) == 0) ++m;
    if (h.rfind("y_", 0) == 0) ++p;
  }
  if (header.empty() || header[0] != "k" ||
      static_cast<int>(header.size()) != 1 + n + m + p) {
    throw Error(ErrorCode::IoError, "'" + path + "' has an unexpected header");
  }

  Trajectory traj;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (static_cast<int>(cells.size()) != 1 + n + m + p) {
      throw Error(ErrorCode::IoError, "'" + path + "': wrong number of cells");
    }
    Vec x(n), u(m);
    for (int i = 0; i < n; ++i) x(i) = parse_double(cells[1 + i]);
    for (int i = 0; i < m; ++i) u(i) = parse_double(cells[1 + n + i]);
    Vec y(0);
    if (p > 0 && !cells[1 + n + m].empty()) {
      y.resize(p);
      for (int i = 0; i < p; ++i) y(i) = parse_double(cells[1 + n + m + i]);
    }
    traj.x.push_back(x);
    traj.u.push_back(u);
    traj.y.push_back(y);
  }
  return traj;
}

}  // namespace ifk
