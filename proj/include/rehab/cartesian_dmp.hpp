#pragma once

#include <optional>

#include <Eigen/Core>

#include "rehab/motion_types.hpp"

namespace rehab::dmp {

inline constexpr double kDefaultStiffness = 150.0;
inline constexpr double kDefaultSMin = 0.01;
inline constexpr int kDefaultBasisCount = 25;
inline constexpr int kMinBasisCount = 5;
/// Start/goal separation below which the position forcing is left unscaled.
inline constexpr double kMinAmplitude = 1e-3;

/// Phase clock driven by tau * ds/dt = -max(0, epsilon + gamma * f_t) * s.
struct CanonicalState {
  double s = 1.0;
  double tau = 1.0;       // s
  double gamma = 0.0;     // 1/N
  double epsilon = 1.0;
  double s_min = kDefaultSMin;

  void validate() const;
};

/// Effective decay rate max(0, epsilon + gamma * f_t), dimensionless.
double phase_rate(const CanonicalState& state, double f_t);

/// Exact exponential update for a force held constant over dt. The phase is
/// returned unchanged, bit for bit, when the rate clamps to zero.
CanonicalState step_canonical(const CanonicalState& state, double f_t, double dt);

/// ln(s) / ln(s_min), clamped to [0, 1].
double progress(double s, double s_min);
inline double progress(const CanonicalState& state) { return progress(state.s, state.s_min); }

using WeightMatrix = Eigen::Matrix<double, 3, Eigen::Dynamic>;

/// Cartesian DMP in the body frame.
///
/// Transformation system in nominal (demonstration) time t_n, with
/// tau = tau_demo / ln(1/s_min):
///   tau * dz/dt_n = K (g - y) - D z + s * |g - y0| * F_p(s),   tau * dy/dt_n = z
///   tau * deta/dt_n = K log(g * q^-1) - D eta + s * F_o(s),           omega_n = eta / tau
/// F(s) = sum_i psi_i(s) (w_i + b_i (s - c_i)) / sum_i psi_i(s), psi_i(s) = exp(-h_i (s - c_i)^2).
/// Nominal time advances with the phase as dt_n = tau * ln(s_prev / s_next), so
/// the path is a function of the phase alone and the wall-clock speed follows
/// whatever law drives the canonical system.
struct DmpModel {
  int n_basis = 0;
  WeightMatrix pos_weights;
  WeightMatrix ori_weights;
  WeightMatrix pos_slopes;  // local linear terms b_i
  WeightMatrix ori_slopes;
  Eigen::VectorXd centers;
  Eigen::VectorXd widths;
  Pose start;
  Pose goal;
  double tau_demo = 0.0;    // demonstration duration, s
  double limb_length = 0.0; // limb the model is sized for, m (0 = unknown)
  double stiffness = kDefaultStiffness;
  double damping = 0.0;
  double s_min = kDefaultSMin;
  FrameId frame_id = FrameId::kBody;

  /// Time constant shared by the canonical and transformation systems at nominal speed.
  double system_tau() const;
  Vec3 amplitude() const { return goal.position() - start.position(); }
  /// |g - y0|, or 1 for closed paths. Scaling the chord by lambda scales the
  /// whole position forcing by lambda, including axes where start and goal agree.
  double forcing_scale() const;
  Vec3 position_forcing(double s) const;
  Vec3 orientation_forcing(double s) const;
  void validate() const;
};

struct ReferenceSample {
  Pose pose_ref;
  Vec3 v_ref = Vec3::Zero();      // m/s
  Vec3 omega_ref = Vec3::Zero();  // rad/s
};

/// Transformation-system state, owned by whoever drives the rollout.
struct DmpIntegrator {
  double s = 1.0;
  Vec3 y = Vec3::Zero();
  Vec3 z = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 eta = Vec3::Zero();

  static DmpIntegrator at_start(const DmpModel& model);
};

/// Advances the transformation system to phase `s` (no-op when s has not
/// decreased) and returns the reference at that phase. `s_dot` (1/s, <= 0)
/// converts nominal velocities to wall-clock velocities.
ReferenceSample dmp_query(const DmpModel& model, DmpIntegrator& integrator, double s, double s_dot);

struct FitOptions {
  int n_basis = kDefaultBasisCount;
  double limb_length = 0.0;
  double stiffness = kDefaultStiffness;
  double s_min = kDefaultSMin;
};

/// Locally weighted regression of the forcing terms on a body-frame demonstration.
DmpModel fit_dmp(const TimedTrajectory& demo, const FitOptions& options = {});
inline DmpModel fit_dmp(const TimedTrajectory& demo, int n_basis) {
  FitOptions options;
  options.n_basis = n_basis;
  return fit_dmp(demo, options);
}

/// Limb-length scaling about the (new) start. Without an explicit goal the
/// chord is kept in direction and stretched by L_patient / limb_length; an
/// explicit goal takes precedence. Weights are untouched.
DmpModel scale_dmp(const DmpModel& model, double limb_length_patient,
                   const std::optional<Pose>& start = std::nullopt,
                   const std::optional<Pose>& goal = std::nullopt);

/// Constant-rate rollout at nominal speed (tau = system_tau, rate 1) sampled
/// every dt until the phase reaches s_min, then for `settle_time` more seconds.
TimedTrajectory rollout(const DmpModel& model, double dt, double settle_time = 0.0);

}  // namespace rehab::dmp
