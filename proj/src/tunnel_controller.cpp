#include "rehab/tunnel_controller.hpp"

#include <string>

namespace rehab::tunnel {

std::string_view to_string(Modality mode) {
  switch (mode) {
    case Modality::kPassive: return "passive";
    case Modality::kAssisted: return "assisted";
    case Modality::kResistive: return "resistive";
  }
  return "passive";
}

Modality modality_from_string(std::string_view name) {
  if (name == "passive") return Modality::kPassive;
  if (name == "assisted") return Modality::kAssisted;
  if (name == "resistive") return Modality::kResistive;
  throw Error(ErrorCode::kInvalidArgument, "unknown modality '" + std::string(name) + "'");
}

void ModalityParams::validate() const {
  if (!(gamma >= 0.0) || !(epsilon >= 0.0) || !(A_stiff >= 0.0) || !(k_return >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "modality gains must be finite and >= 0");
  }
  if (mode == Modality::kPassive && gamma != 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "passive modality requires gamma = 0");
  }
}

ModalityParams modality_preset(Modality mode) {
  ModalityParams p;
  p.mode = mode;
  switch (mode) {
    case Modality::kPassive:
      p.gamma = 0.0;
      p.epsilon = 1.0;
      break;
    case Modality::kAssisted:
      p.gamma = 0.08;
      p.epsilon = 0.001;
      break;
    case Modality::kResistive:
      p.gamma = 0.005;
      p.epsilon = 0.001;
      break;
  }
  p.A_stiff = 0.005;
  p.k_return = 1.0;
  return p;
}

ForceSplit decompose_force(const Vec3& f_ex, const Vec3& v_ref, const Vec3& last_tangent) {
  ForceSplit out;
  const double speed = v_ref.norm();
  out.u_t = speed >= kMinTangentSpeed ? Vec3(v_ref / speed) : last_tangent;
  out.f_t = f_ex.dot(out.u_t);
  out.f_o = f_ex - out.f_t * out.u_t;
  return out;
}

Vec3 wall_velocity(const Vec3& f_o, const ModalityParams& params, const Vec3& deviation) {
  return params.A_stiff * f_o - params.k_return * deviation;
}

ControllerState ControllerState::initial(const dmp::DmpModel& model, const ModalityParams& params,
                                         double tau) {
  params.validate();
  ControllerState st;
  st.canonical.s = 1.0;
  st.canonical.tau = tau > 0.0 ? tau : model.system_tau();
  st.canonical.gamma = params.gamma;
  st.canonical.epsilon = params.epsilon;
  st.canonical.s_min = model.s_min;
  st.canonical.validate();
  st.integrator = dmp::DmpIntegrator::at_start(model);
  // The reference starts at rest; until it moves, the chord stands in for the tangent.
  const Vec3 chord = model.amplitude();
  st.last_tangent = chord.norm() > 1e-9 ? Vec3(chord.normalized()) : Vec3::UnitX();
  st.last_rate = dmp::phase_rate(st.canonical, 0.0);
  return st;
}

ControllerState with_params(ControllerState state, const ModalityParams& params) {
  params.validate();
  state.canonical.gamma = params.gamma;
  state.canonical.epsilon = params.epsilon;
  return state;
}

StepResult control_step(const dmp::DmpModel& model, const ControllerState& state,
                        const ModalityParams& params, const Vec3& f_ex, double dt) {
  if (!(dt > 0.0 && dt <= 0.1)) throw Error(ErrorCode::kInvalidArgument, "dt must lie in (0, 0.1]");
  StepResult out;
  ControllerState next = state;
  next.canonical.gamma = params.gamma;
  next.canonical.epsilon = params.epsilon;

  const double s = state.canonical.s;
  const double s_dot = -state.last_rate * s / state.canonical.tau;
  out.reference = dmp::dmp_query(model, next.integrator, s, s_dot);

  out.split = decompose_force(f_ex, out.reference.v_ref, state.last_tangent);
  const Vec3& u_t = out.split.u_t;

  next.last_rate = dmp::phase_rate(next.canonical, out.split.f_t);
  next.canonical = dmp::step_canonical(next.canonical, out.split.f_t, dt);

  out.v_wall = wall_velocity(out.split.f_o, params, state.deviation);
  Vec3 deviation = state.deviation + out.v_wall * dt;
  deviation -= deviation.dot(u_t) * u_t;
  next.deviation = deviation;
  next.last_tangent = u_t;
  next.tick = state.tick + 1;

  out.command.pose_cmd = out.reference.pose_ref.translated(deviation);
  out.command.v_cmd = out.reference.v_ref + out.v_wall;
  out.command.omega_cmd = out.reference.omega_ref;
  out.state = std::move(next);
  return out;
}

}  // namespace rehab::tunnel
