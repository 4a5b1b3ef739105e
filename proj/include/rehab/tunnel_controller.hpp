#pragma once

#include <cstdint>
#include <string_view>

#include "rehab/cartesian_dmp.hpp"

namespace rehab::tunnel {

enum class Modality { kPassive, kAssisted, kResistive };

std::string_view to_string(Modality mode);
Modality modality_from_string(std::string_view name);

struct ModalityParams {
  Modality mode = Modality::kPassive;
  double gamma = 0.0;     // 1/N
  double epsilon = 1.0;
  double A_stiff = 0.005; // (m/s)/N
  double k_return = 1.0;  // 1/s

  void validate() const;
};

/// Passive: gamma 0, eps 1. Assisted: gamma 0.08, eps 0.001. Resistive:
/// gamma 0.005, eps 0.001. All share A_stiff = 0.005 and k_return = 1.0.
ModalityParams modality_preset(Modality mode);

/// Reference velocities below this norm leave the tangent undefined; the last one is held.
inline constexpr double kMinTangentSpeed = 1e-6;

struct ForceSplit {
  Vec3 u_t;
  double f_t = 0.0;
  Vec3 f_o;
};

ForceSplit decompose_force(const Vec3& f_ex, const Vec3& v_ref, const Vec3& last_tangent);

/// v_wall = A_stiff * f_o - k_return * deviation.
Vec3 wall_velocity(const Vec3& f_o, const ModalityParams& params, const Vec3& deviation);

struct ControllerState {
  dmp::CanonicalState canonical;
  dmp::DmpIntegrator integrator;
  Vec3 deviation = Vec3::Zero();
  Vec3 last_tangent = Vec3::UnitX();
  double last_rate = 0.0;  // phase rate applied on the previous tick
  std::uint64_t tick = 0;

  /// Fresh state at s = 1. tau <= 0 selects the model's nominal time constant.
  static ControllerState initial(const dmp::DmpModel& model, const ModalityParams& params, double tau = 0.0);
};

struct TcpCommand {
  Pose pose_cmd;
  Vec3 v_cmd = Vec3::Zero();
  Vec3 omega_cmd = Vec3::Zero();
};

/// Everything one tick produced, for tracing.
struct StepResult {
  TcpCommand command;
  ControllerState state;
  dmp::ReferenceSample reference;
  ForceSplit split;
  Vec3 v_wall = Vec3::Zero();
};

/// One control tick: reference at the current phase, force split about the
/// tangent, phase advanced by f_t, orthogonal admittance integrated and
/// re-projected off the tangent, command = reference shifted by the deviation.
StepResult control_step(const dmp::DmpModel& model, const ControllerState& state,
                        const ModalityParams& params, const Vec3& f_ex, double dt);

/// Applies new gains without touching phase or deviation.
ControllerState with_params(ControllerState state, const ModalityParams& params);

}  // namespace rehab::tunnel
