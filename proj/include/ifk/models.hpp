#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ifk/matkit.hpp"
#include "ifk/rng.hpp"

namespace ifk {

using StateInputMap = std::function<Vec(const Vec& x, const Vec& u)>;
using StateMap = std::function<Vec(const Vec& x)>;
using StateInputJacobian = std::function<Mat(const Vec& x, const Vec& u)>;
using StateJacobian = std::function<Mat(const Vec& x)>;

/// k -> u_k. Schedules are functions so step changes land on exact indices.
using InputSchedule = std::function<Vec(int k)>;

enum class Variant { NoInput, WithoutDf, WithDf };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

enum class JacobianSource { Analytic, FiniteDifference };

/// Constant system matrices, present only for linear models.
struct LinearMatrices {
  Mat F, B, H, D, G;
};

/// x_{k+1} = f(x_k, u_k) + w_k,  y_k = h(x_k, u_k) + v_k,  a_k = g(x_hat_k) + eps_k.
///
/// Models without direct feed-through ignore u in h; models without input
/// have m == 0 and are called with an empty u.
struct SystemModel {
  std::string name;
  Variant variant = Variant::NoInput;
  int n = 0;   // state
  int m = 0;   // unknown input
  int p = 0;   // adversary observation
  int na = 0;  // defender (action) observation

  StateInputMap f;
  StateInputMap h;
  StateMap g;

  Mat Q;          // n x n
  Mat R;          // p x p
  Mat Sigma_eps;  // na x na

  // Optional analytic Jacobians; finite differences are used where absent.
  StateInputJacobian jac_f_x, jac_f_u, jac_h_x, jac_h_u;
  StateJacobian jac_g_x;

  std::vector<int> angle_dims;  // state entries wrapped into [-pi, pi)
  bool wrap_input = false;      // input estimates are phases as well

  std::optional<LinearMatrices> linear;

  bool direct_feedthrough() const { return variant == Variant::WithDf; }
  bool analytic_jacobians() const;
  JacobianSource jacobian_source() const {
    return analytic_jacobians() ? JacobianSource::Analytic : JacobianSource::FiniteDifference;
  }

  Mat F_at(const Vec& x, const Vec& u) const;  // d f / d x
  Mat B_at(const Vec& x, const Vec& u) const;  // d f / d u
  Mat H_at(const Vec& x, const Vec& u) const;  // d h / d x
  Mat D_at(const Vec& x, const Vec& u) const;  // d h / d u
  Mat G_at(const Vec& x) const;                // d g / d x

  void wrap_state(Vec& x) const;
  void wrap_input_vec(Vec& u) const;
  /// Difference a - b with angle entries wrapped.
  Vec state_difference(const Vec& a, const Vec& b) const;

  Vec zero_input() const { return Vec::Zero(m); }

  /// Checks dimensions, symmetry and definiteness of the noise covariances.
  void validate() const;
};

/// linear3 or fm, in any variant.
SystemModel builtin_model(std::string_view name, Variant variant);
/// "<name>:<variant>", e.g. "fm:with-df".
SystemModel builtin_model(std::string_view spec);
std::vector<std::string> builtin_model_names();

/// Linear model from matrices. B and D may have zero columns.
SystemModel make_linear_model(std::string name, Variant variant, const LinearMatrices& mats,
                              const Mat& Q, const Mat& R, const Mat& Sigma_eps);

/// Finite-difference Jacobian of a map R^n -> R^q with central differences
/// and step max(1e-6, 1e-6 |x_i|).
Mat jacobian_fd(const std::function<Vec(const Vec&)>& map, const Vec& at);

enum class JacobianArg { State, Input };
Mat jacobian_fd(const StateInputMap& map, const Vec& x, const Vec& u, JacobianArg arg);

/// Value in [-pi, pi) congruent to v modulo 2 pi.
double wrap_angle(double v);

/// u_k = before for k <= last_before, after otherwise.
InputSchedule step_schedule(Vec before, Vec after, int last_before);
InputSchedule constant_schedule(Vec value);

struct Trajectory {
  std::vector<Vec> x;  // x_0 .. x_K
  std::vector<Vec> u;  // u_0 .. u_K
  std::vector<Vec> y;  // y_0 .. y_K; y_0 is empty
  std::vector<Vec> w;  // w_0 .. w_{K-1}
  std::vector<Vec> v;  // v_0 .. v_K; v_0 is empty
  std::uint64_t seed = 0;

  int steps() const { return static_cast<int>(x.size()) - 1; }
};

Trajectory simulate_trajectory(const SystemModel& model, const Vec& x0,
                               const InputSchedule& inputs, int K, Rng& rng);
Trajectory simulate_trajectory(const SystemModel& model, const Vec& x0,
                               const InputSchedule& inputs, int K, std::uint64_t seed);

/// CSV with header `k,x_0..x_{n-1},u_0..u_{m-1},y_0..y_{p-1}`; the y cells
/// of row 0 are empty. Written atomically.
void write_trajectory_csv(const Trajectory& traj, const std::string& path);
std::string trajectory_csv(const Trajectory& traj);
/// Reads states, inputs and observations back; noise columns are not stored.
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace ifk
