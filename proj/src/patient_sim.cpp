#include "rehab/patient_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rehab/body_frame.hpp"

namespace rehab::sim {
namespace {

// Schedule boundaries are compared with this slack so that k * dt lands
// inside the window it nominally starts.
constexpr double kTimeSlack = 1e-9;

bool window_active(double t, double start, double duration) {
  return t >= start - kTimeSlack && t < start + duration - kTimeSlack;
}

Vec3 segment_force(const ForceSegment& seg, const Vec3& u) {
  Vec3 ortho = seg.direction - seg.direction.dot(u) * u;
  const double n = ortho.norm();
  ortho = n > 1e-9 ? Vec3(ortho / n) : Vec3::Zero();
  return seg.tangential * u + seg.orthogonal * ortho;
}

bool finite_segment(const ForceSegment& s) {
  return std::isfinite(s.start) && std::isfinite(s.duration) && std::isfinite(s.tangential) &&
         std::isfinite(s.orthogonal) && s.direction.allFinite();
}

}  // namespace

PlantState plant_step(const PlantState& state, const tunnel::TcpCommand& cmd, double dt, double servo_tau) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  if (!(servo_tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "servo time constant must be positive");
  const double frac = std::min(1.0, dt / servo_tau);
  const Pose& tcp = state.tcp;
  const Vec3 p = tcp.position() + (cmd.pose_cmd.position() - tcp.position()) * frac;
  const Quat q = quat_exp(quat_log(cmd.pose_cmd.orientation(), tcp.orientation()) * frac) * tcp.orientation();
  PlantState next;
  next.tcp = Pose(p, q);
  next.velocity = (p - tcp.position()) / dt;
  next.time = state.time + dt;
  return next;
}

std::string_view to_string(PatientKind kind) {
  switch (kind) {
    case PatientKind::kScripted: return "scripted";
    case PatientKind::kSpringDamper: return "spring-damper";
    case PatientKind::kSpasmInjector: return "spasm-injector";
    case PatientKind::kLimbProfile: return "limb-profile";
  }
  return "scripted";
}

PatientKind patient_kind_from_string(std::string_view name) {
  if (name == "scripted") return PatientKind::kScripted;
  if (name == "spring-damper") return PatientKind::kSpringDamper;
  if (name == "spasm-injector") return PatientKind::kSpasmInjector;
  if (name == "limb-profile") return PatientKind::kLimbProfile;
  throw Error(ErrorCode::kConfigError, "unknown patient kind '" + std::string(name) + "'");
}

void PatientModel::validate() const {
  std::vector<const ForceSegment*> timed;
  for (const auto& seg : segments) {
    if (!finite_segment(seg)) throw Error(ErrorCode::kConfigError, "non-finite force segment");
    if (seg.trigger != Trigger::kTime) throw Error(ErrorCode::kConfigError, "schedule segments must be time triggered");
    if (!(seg.duration > 0.0)) throw Error(ErrorCode::kConfigError, "segment duration must be positive");
    timed.push_back(&seg);
  }
  std::sort(timed.begin(), timed.end(), [](auto* a, auto* b) { return a->start < b->start; });
  for (std::size_t i = 1; i < timed.size(); ++i) {
    if (timed[i]->start < timed[i - 1]->start + timed[i - 1]->duration - kTimeSlack) {
      throw Error(ErrorCode::kConfigError,
                  "force segments overlap at t = " + std::to_string(timed[i]->start) + " s");
    }
  }
  for (const auto& spike : spikes) {
    if (!finite_segment(spike)) throw Error(ErrorCode::kConfigError, "non-finite spike");
    if (!(spike.duration > 0.0)) throw Error(ErrorCode::kConfigError, "spike duration must be positive");
    if (spike.trigger == Trigger::kProgress && !(spike.start >= 0.0 && spike.start <= 1.0)) {
      throw Error(ErrorCode::kConfigError, "spike progress must lie in [0, 1]");
    }
  }
  if (limb) {
    if (!std::isfinite(limb->offset) || !std::isfinite(limb->slope) || !(limb->noise_sigma >= 0.0)) {
      throw Error(ErrorCode::kConfigError, "invalid limb profile");
    }
  }
  if (spring) {
    if (!(spring->stiffness >= 0.0) || !(spring->damping >= 0.0) || !spring->anchor.allFinite()) {
      throw Error(ErrorCode::kConfigError, "invalid spring-damper limb");
    }
  }
  if (kind == PatientKind::kSpringDamper && !spring) {
    throw Error(ErrorCode::kConfigError, "spring-damper patient needs a spring_damper block");
  }
  if (kind == PatientKind::kLimbProfile && !limb) {
    throw Error(ErrorCode::kConfigError, "limb-profile patient needs a limb_profile block");
  }
  if (kind == PatientKind::kSpasmInjector && spikes.empty()) {
    throw Error(ErrorCode::kConfigError, "spasm-injector patient needs at least one spike");
  }
}

PatientState::PatientState(const PatientModel& model, std::uint64_t seed)
    : spike_onset(model.spikes.size()), rng(seed) {}

Vec3 patient_force(const PatientModel& model, PatientState& state, const PatientInput& in) {
  const Vec3 u = in.tangent.normalized();
  Vec3 f_body = Vec3::Zero();
  for (const auto& seg : model.segments) {
    if (window_active(in.time, seg.start, seg.duration)) f_body += segment_force(seg, u);
  }
  if (model.limb) {
    double mag = model.limb->offset + model.limb->slope * in.s;
    if (model.limb->noise_sigma > 0.0) {
      mag += std::normal_distribution<double>(0.0, model.limb->noise_sigma)(state.rng);
    }
    f_body -= mag * u;
  }
  if (state.spike_onset.size() != model.spikes.size()) state.spike_onset.resize(model.spikes.size());
  for (std::size_t i = 0; i < model.spikes.size(); ++i) {
    const auto& spike = model.spikes[i];
    bool active = false;
    if (spike.trigger == Trigger::kTime) {
      active = window_active(in.time, spike.start, spike.duration);
    } else {
      if (!state.spike_onset[i] && in.progress >= spike.start) state.spike_onset[i] = in.time;
      active = state.spike_onset[i] && window_active(in.time, *state.spike_onset[i], spike.duration);
    }
    if (active) f_body += segment_force(spike, u);
  }
  Vec3 f_base = in.base_from_body.orientation() * f_body;
  if (model.spring) {
    f_base += -model.spring->stiffness * (in.plant.tcp.position() - model.spring->anchor) -
              model.spring->damping * in.plant.velocity;
  }
  return f_base;
}

std::string_view to_string(CalibrationMode mode) {
  return mode == CalibrationMode::kPassive ? "passive" : "active";
}

CalibrationMode calibration_mode_from_string(std::string_view name) {
  if (name == "passive") return CalibrationMode::kPassive;
  if (name == "active") return CalibrationMode::kActive;
  throw Error(ErrorCode::kConfigError, "unknown calibration mode '" + std::string(name) + "'");
}

void Scenario::validate() const {
  if (!(dt > 0.0 && dt <= 0.1)) throw Error(ErrorCode::kConfigError, "dt must lie in (0, 0.1]");
  if (!(duration_limit > 0.0)) throw Error(ErrorCode::kConfigError, "duration_limit must be positive");
  if (!(hold_timeout > 0.0)) throw Error(ErrorCode::kConfigError, "hold_timeout must be positive");
  if (!(servo_tau > 0.0)) throw Error(ErrorCode::kConfigError, "servo_tau must be positive");
  if (!(tau >= 0.0)) throw Error(ErrorCode::kConfigError, "tau must be >= 0");
  if (patient_limb_length && !(*patient_limb_length > 0.0)) {
    throw Error(ErrorCode::kConfigError, "limb length must be positive");
  }
  model.validate();
  modality.validate();
  patient.validate();
  if (calibration.patient) calibration.patient->validate();
  if (calibration.reps < 1) throw Error(ErrorCode::kConfigError, "calibration reps must be >= 1");
  if (safety.enabled) {
    if (safety.gmr.components.empty()) throw Error(ErrorCode::kConfigError, "safety enabled without a GMR model");
    safety.gmr.validate();
    if (!(safety.n_sigma > 0.0)) throw Error(ErrorCode::kConfigError, "n_sigma must be positive");
    if (safety.dwell_ticks < 1) throw Error(ErrorCode::kConfigError, "dwell_ticks must be >= 1");
    if (!(safety.sigma_floor >= 0.0)) throw Error(ErrorCode::kConfigError, "sigma_floor must be >= 0");
  }
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::kRunning: return "running";
    case Termination::kCompleted: return "completed";
    case Termination::kDurationLimit: return "duration-limit";
    case Termination::kHoldTimeout: return "hold-timeout";
    case Termination::kStopped: return "stopped";
  }
  return "running";
}

SimLoop::SimLoop(const Scenario& scenario) : scenario_(scenario) {
  scenario_.validate();
  reset();
}

void SimLoop::reset() {
  params_ = scenario_.modality;
  ctrl_ = tunnel::ControllerState::initial(scenario_.model, params_, scenario_.tau);
  safety_ = safety::SafetyState{};
  safety_.config.n_sigma = scenario_.safety.n_sigma;
  safety_.config.dwell_ticks = scenario_.safety.dwell_ticks;
  // Retrace at the passive (epsilon = 1) nominal pace.
  safety_.config.reverse_log_rate = 1.0 / ctrl_.canonical.tau;
  checkpoints_.clear();
  plant_ = PlantState{};
  plant_.tcp = scenario_.base_from_body.compose(scenario_.model.start);
  patient_ = PatientState(scenario_.patient, scenario_.seed);
  current_cmd_ = scenario_.model.start;
  current_s_ = 1.0;
  hold_time_ = 0.0;
  tick_ = 0;
  termination_ = Termination::kRunning;
  last_ = TraceRecord{};
}

void SimLoop::set_modality(const tunnel::ModalityParams& params) {
  params.validate();
  params_ = params;
  ctrl_ = tunnel::with_params(ctrl_, params);
}

safety::ForcePrediction SimLoop::corridor(double s) const {
  return safety::gmr_predict(scenario_.safety.gmr, s, scenario_.safety.sigma_floor);
}

const TraceRecord& SimLoop::tick(const TickInput& input) {
  const double dt = scenario_.dt;
  const double s_min = scenario_.model.s_min;
  const bool guarded = scenario_.safety.enabled;
  const bool forward = !guarded || safety_.mode == safety::SafetyMode::kForward;

  TraceRecord rec;
  rec.tick = tick_;
  rec.time = static_cast<double>(tick_) * dt;
  rec.s = forward ? ctrl_.canonical.s : current_s_;
  rec.progress = dmp::progress(rec.s, s_min);

  if (input.force_body) {
    rec.f_ex = *input.force_body;
  } else {
    PatientInput pin;
    pin.time = rec.time;
    pin.s = rec.s;
    pin.progress = rec.progress;
    pin.tangent = ctrl_.last_tangent;
    pin.base_from_body = scenario_.base_from_body;
    pin.plant = plant_;
    const Vec3 f_base = patient_force(scenario_.patient, patient_, pin);
    rec.f_ex = scenario_.base_from_body.orientation().conjugate() * f_base;
  }

  if (guarded) {
    const auto pred = corridor(rec.s);
    rec.corridor_mu = pred.mu;
    rec.corridor_sigma = pred.sigma;
    rec.in_corridor = safety::corridor_check(rec.f_ex.norm(), pred.mu, pred.sigma, scenario_.safety.n_sigma);
  }

  tunnel::TcpCommand cmd;
  cmd.pose_cmd = current_cmd_;
  auto split_only = [&]() {
    const auto split = tunnel::decompose_force(rec.f_ex, Vec3::Zero(), ctrl_.last_tangent);
    rec.f_t = split.f_t;
    rec.f_o = split.f_o;
    rec.u_t = split.u_t;
  };
  auto advance = [&]() {
    const auto step = tunnel::control_step(scenario_.model, ctrl_, params_, rec.f_ex, dt);
    ctrl_ = step.state;
    cmd = step.command;
    rec.pose_ref = step.reference.pose_ref;
    rec.f_t = step.split.f_t;
    rec.f_o = step.split.f_o;
    rec.u_t = step.split.u_t;
    current_cmd_ = cmd.pose_cmd;
    current_s_ = rec.s;
  };
  auto follow = [&](const safety::Directive& d) {
    rec.directive = d.kind;
    if (d.kind == safety::DirectiveKind::kForward) return;
    cmd.pose_cmd = d.target;
    cmd.v_cmd = (d.target.position() - current_cmd_.position()) / dt;
    cmd.omega_cmd = quat_log(d.target.orientation(), current_cmd_.orientation()) / dt;
    current_cmd_ = d.target;
    current_s_ = d.s;
  };

  if (input.halt) {
    current_cmd_ = scenario_.base_from_body.inverse().compose(plant_.tcp);
    cmd.pose_cmd = current_cmd_;
    rec.pose_ref = current_cmd_;
    rec.halted = true;
    rec.directive = safety::DirectiveKind::kHold;
    split_only();
  } else if (input.hold) {
    rec.pose_ref = current_cmd_;
    rec.directive = safety::DirectiveKind::kHold;
    split_only();
  } else if (!guarded) {
    advance();
  } else if (safety_.mode == safety::SafetyMode::kForward && rec.in_corridor) {
    advance();
    follow(safety::safety_step(safety_, true, {rec.s, cmd.pose_cmd}, dt));
    checkpoints_.push_back(ctrl_);
  } else {
    const auto d = safety::safety_step(safety_, rec.in_corridor, {current_s_, current_cmd_}, dt);
    if (d.kind == safety::DirectiveKind::kForward) {
      // Resume from the controller state that produced the entry we are parked on.
      if (checkpoints_.size() > safety_.path.size()) checkpoints_.resize(safety_.path.size());
      ctrl_ = checkpoints_.empty() ? tunnel::ControllerState::initial(scenario_.model, params_, scenario_.tau)
                                   : checkpoints_.back();
      ctrl_ = tunnel::with_params(ctrl_, params_);
    }
    follow(d);
    rec.pose_ref = current_cmd_;
    split_only();
  }
  if (checkpoints_.size() > safety_.path.size()) checkpoints_.resize(safety_.path.size());

  rec.pose_cmd = cmd.pose_cmd;
  rec.deviation = ctrl_.deviation.norm();
  rec.safety_mode = safety_.mode;

  tunnel::TcpCommand base_cmd = cmd;
  base_cmd.pose_cmd = scenario_.base_from_body.compose(cmd.pose_cmd);
  plant_ = plant_step(plant_, base_cmd, dt, scenario_.servo_tau);
  rec.tcp = plant_.tcp;

  ++tick_;
  if (safety_.mode == safety::SafetyMode::kHoldAtStart) {
    hold_time_ += dt;
  } else {
    hold_time_ = 0.0;
  }
  if (forward && !input.halt && !input.hold && rec.progress >= 1.0 &&
      safety_.mode == safety::SafetyMode::kForward) {
    termination_ = Termination::kCompleted;
  } else if (hold_time_ >= scenario_.hold_timeout - kTimeSlack) {
    termination_ = Termination::kHoldTimeout;
  } else if (static_cast<double>(tick_) * dt >= scenario_.duration_limit - kTimeSlack) {
    termination_ = Termination::kDurationLimit;
  }
  last_ = rec;
  return last_;
}

SimTrace run_scenario(const Scenario& scenario) {
  SimLoop loop(scenario);
  SimTrace trace;
  trace.dt = scenario.dt;
  trace.limb_length = scenario.limb_length();
  trace.n_sigma = scenario.safety.n_sigma;
  trace.seed = scenario.seed;
  trace.scenario = scenario.name;
  trace.modality = std::string(tunnel::to_string(scenario.modality.mode));
  trace.records.reserve(static_cast<std::size_t>(scenario.duration_limit / scenario.dt) + 1);
  while (!loop.done()) trace.records.push_back(loop.tick());
  trace.termination = loop.termination();
  return trace;
}

std::vector<safety::ForceSample> acquire_baseline(const Scenario& scenario, CalibrationMode mode, int reps) {
  if (reps < 1) throw Error(ErrorCode::kInvalidArgument, "calibration needs at least one repetition");
  Scenario c = scenario;
  c.safety.enabled = false;
  if (scenario.calibration.patient) {
    c.patient = *scenario.calibration.patient;
  } else {
    c.patient.spikes.clear();
    if (c.patient.kind == PatientKind::kSpasmInjector) {
      c.patient.kind = c.patient.limb ? PatientKind::kLimbProfile : PatientKind::kScripted;
    }
  }
  if (mode == CalibrationMode::kPassive) {
    c.modality = tunnel::modality_preset(tunnel::Modality::kPassive);
  } else if (c.modality.mode == tunnel::Modality::kPassive) {
    throw Error(ErrorCode::kConfigError, "active calibration needs an assisted or resistive modality");
  }
  std::vector<safety::ForceSample> samples;
  for (int r = 0; r < reps; ++r) {
    c.seed = scenario.seed + static_cast<std::uint64_t>(r);
    const auto trace = run_scenario(c);
    for (const auto& rec : trace.records) samples.push_back({rec.s, rec.f_ex.norm()});
  }
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, "empty-rollout: calibration produced no samples");
  return samples;
}

namespace {

Vec3 position_at(const TimedTrajectory& traj, double u) {
  const auto& smp = traj.samples;
  const double t0 = smp.front().time;
  const double t = t0 + u * (smp.back().time - t0);
  auto it = std::upper_bound(smp.begin(), smp.end(), t, [](double v, const TimedPose& p) { return v < p.time; });
  if (it == smp.begin()) return smp.front().pose.position();
  if (it == smp.end()) return smp.back().pose.position();
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double w = (t - a.time) / (b.time - a.time);
  return a.pose.position() + w * (b.pose.position() - a.pose.position());
}

void require_records(const SimTrace& trace) {
  if (trace.records.empty()) throw Error(ErrorCode::kEmptyInput, "trace has no records");
}

}  // namespace

double metric_rmse(const TimedTrajectory& a, const TimedTrajectory& b) {
  if (a.samples.empty() || b.samples.empty()) throw Error(ErrorCode::kEmptyInput, "empty trajectory");
  a.validate();
  b.validate();
  const std::size_t n = std::max(a.samples.size(), b.samples.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(n - 1);
    sum += (position_at(a, u) - position_at(b, u)).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(n));
}

double metric_max_deviation(const SimTrace& trace) {
  require_records(trace);
  double m = 0.0;
  for (const auto& r : trace.records) m = std::max(m, r.deviation);
  return m;
}

std::optional<double> metric_completion_time(const SimTrace& trace) {
  require_records(trace);
  for (const auto& r : trace.records) {
    if (r.progress >= 1.0 && r.safety_mode == safety::SafetyMode::kForward) return r.time;
  }
  return std::nullopt;
}

std::optional<double> metric_reaction_time(const SimTrace& trace) {
  require_records(trace);
  const auto& recs = trace.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].in_corridor) continue;
    for (std::size_t j = i; j < recs.size(); ++j) {
      if (recs[j].directive == safety::DirectiveKind::kReverseTo) return recs[j].time - recs[i].time;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

double metric_rom(const SimTrace& trace, const Vec3& proximal, const Vec3& pivot) {
  require_records(trace);
  double lo = 180.0, hi = 0.0;
  for (const auto& r : trace.records) {
    const double a = body::joint_angle(proximal, pivot, r.pose_ref.position());
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  return hi - lo;
}

double metric_reach_ratio(const SimTrace& trace) {
  require_records(trace);
  std::vector<Vec3> pts;
  pts.reserve(trace.records.size());
  for (const auto& r : trace.records) pts.push_back(r.pose_ref.position());
  return body::reach_ratio(body::path_distance(pts), trace.limb_length);
}

TimedTrajectory reference_trajectory(const SimTrace& trace) {
  TimedTrajectory out;
  out.frame_id = FrameId::kBody;
  out.samples.reserve(trace.records.size());
  for (const auto& r : trace.records) out.samples.push_back({r.time, r.pose_ref});
  return out;
}

}  // namespace rehab::sim
