#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rehab/cartesian_dmp.hpp"
#include "rehab/force_safety.hpp"
#include "rehab/tunnel_controller.hpp"

namespace rehab::sim {

inline constexpr double kDefaultServoTau = 0.02;  // s
inline constexpr double kDefaultDt = 0.01;        // s

struct PlantState {
  Pose tcp;                      // robot-base frame
  Vec3 velocity = Vec3::Zero();  // finite difference over the last step, m/s
  double time = 0.0;
};

/// First-order servo toward the commanded pose; the orientation follows the
/// geodesic by the same fraction min(1, dt / servo_tau).
PlantState plant_step(const PlantState& state, const tunnel::TcpCommand& cmd, double dt,
                      double servo_tau = kDefaultServoTau);

enum class Trigger { kTime, kProgress };

/// Force held in the tangent frame: `tangential` along the path direction and
/// `orthogonal` along `direction` projected off the tangent.
struct ForceSegment {
  Trigger trigger = Trigger::kTime;
  double start = 0.0;     // s, or progress in [0, 1]
  double duration = 0.0;  // s
  double tangential = 0.0;
  double orthogonal = 0.0;
  Vec3 direction = Vec3::UnitZ();  // body frame
};

/// Passive-limb load f(s) = offset + slope * s acting against the path, plus
/// Gaussian noise on the magnitude.
struct LimbProfile {
  double offset = 0.0;  // N
  double slope = 0.0;   // N per unit phase
  double noise_sigma = 0.0;
};

struct SpringDamper {
  double stiffness = 0.0;  // N/m
  double damping = 0.0;    // N s/m
  Vec3 anchor = Vec3::Zero();  // robot-base frame
};

enum class PatientKind { kScripted, kSpringDamper, kSpasmInjector, kLimbProfile };
std::string_view to_string(PatientKind kind);
PatientKind patient_kind_from_string(std::string_view name);

/// Sum of the configured force sources. `segments` are time-scheduled and may
/// not overlap; `spikes` are transients added on top (one-shot when progress
/// triggered).
struct PatientModel {
  PatientKind kind = PatientKind::kScripted;
  std::vector<ForceSegment> segments;
  std::optional<LimbProfile> limb;
  std::optional<SpringDamper> spring;
  std::vector<ForceSegment> spikes;

  void validate() const;
};

/// Per-run patient memory: spike onsets and the noise stream.
struct PatientState {
  std::vector<std::optional<double>> spike_onset;
  std::mt19937_64 rng;

  PatientState() = default;
  PatientState(const PatientModel& model, std::uint64_t seed);
};

struct PatientInput {
  double time = 0.0;
  double s = 1.0;
  double progress = 0.0;
  Vec3 tangent = Vec3::UnitX();  // body frame
  Pose base_from_body;
  PlantState plant;
};

/// Interaction force in the robot-base frame.
Vec3 patient_force(const PatientModel& model, PatientState& state, const PatientInput& in);

struct SafetySettings {
  bool enabled = false;
  std::filesystem::path gmr_path;
  safety::GmrModel gmr;
  double n_sigma = 5.0;
  int dwell_ticks = 30;
  double sigma_floor = safety::kSigmaFloor;
};

enum class CalibrationMode { kPassive, kActive };
std::string_view to_string(CalibrationMode mode);
CalibrationMode calibration_mode_from_string(std::string_view name);

struct CalibrationSettings {
  CalibrationMode mode = CalibrationMode::kPassive;
  int reps = 3;
  std::optional<PatientModel> patient;  // defaults to the run patient without spikes
};

struct Scenario {
  std::string name;
  std::filesystem::path dmp_path;
  dmp::DmpModel model;                   // after scaling
  std::optional<double> patient_limb_length;
  double tau = 0.0;                      // 0: model's nominal time constant
  tunnel::ModalityParams modality = tunnel::modality_preset(tunnel::Modality::kPassive);
  PatientModel patient;
  SafetySettings safety;
  CalibrationSettings calibration;
  double dt = kDefaultDt;
  double duration_limit = 60.0;
  double hold_timeout = 10.0;
  std::uint64_t seed = 1;
  double servo_tau = kDefaultServoTau;
  Pose base_from_body;

  double limb_length() const { return patient_limb_length.value_or(model.limb_length); }
  void validate() const;
};

enum class Termination { kRunning, kCompleted, kDurationLimit, kHoldTimeout, kStopped };
std::string_view to_string(Termination t);

/// One control tick. `time` and `s` are taken at the start of the tick (the
/// phase the reference was queried at); `tcp` is the plant after the tick.
struct TraceRecord {
  std::uint64_t tick = 0;
  double time = 0.0;
  double s = 1.0;
  double progress = 0.0;
  Pose pose_ref;  // body frame
  Pose pose_cmd;  // body frame
  Pose tcp;       // robot-base frame
  Vec3 f_ex = Vec3::Zero();  // body frame
  double f_t = 0.0;
  Vec3 f_o = Vec3::Zero();
  Vec3 u_t = Vec3::UnitX();
  double deviation = 0.0;
  safety::SafetyMode safety_mode = safety::SafetyMode::kForward;
  safety::DirectiveKind directive = safety::DirectiveKind::kForward;
  bool in_corridor = true;
  double corridor_mu = 0.0;
  double corridor_sigma = 0.0;
  bool halted = false;
};

struct SimTrace {
  std::vector<TraceRecord> records;
  double dt = kDefaultDt;
  double limb_length = 0.0;
  double n_sigma = 5.0;
  std::uint64_t seed = 0;
  std::string scenario;
  std::string modality;
  Termination termination = Termination::kRunning;
};

/// Overrides applied to the next tick, used by live sessions.
struct TickInput {
  std::optional<Vec3> force_body;  // replaces the patient model
  bool hold = false;               // pause: command stays put, phase frozen
  bool halt = false;               // emergency stop
};

/// Closed loop at fixed dt: patient force, corridor check, controller or
/// safety directive, plant. Owns all run state.
class SimLoop {
 public:
  explicit SimLoop(const Scenario& scenario);

  const TraceRecord& tick(const TickInput& input = {});
  bool done() const { return termination_ != Termination::kRunning; }
  Termination termination() const { return termination_; }

  void set_modality(const tunnel::ModalityParams& params);
  void reset();

  const Scenario& scenario() const { return scenario_; }
  const tunnel::ModalityParams& params() const { return params_; }
  const tunnel::ControllerState& controller() const { return ctrl_; }
  const safety::SafetyState& safety_state() const { return safety_; }
  const PlantState& plant() const { return plant_; }
  const TraceRecord& last() const { return last_; }
  std::uint64_t ticks() const { return tick_; }

 private:
  safety::ForcePrediction corridor(double s) const;

  Scenario scenario_;
  tunnel::ModalityParams params_;
  tunnel::ControllerState ctrl_;
  safety::SafetyState safety_;
  std::vector<tunnel::ControllerState> checkpoints_;
  PlantState plant_;
  PatientState patient_;
  Pose current_cmd_;
  double current_s_ = 1.0;
  double hold_time_ = 0.0;
  std::uint64_t tick_ = 0;
  Termination termination_ = Termination::kRunning;
  TraceRecord last_;
};

/// Runs to completion, the duration limit, or the hold timeout.
SimTrace run_scenario(const Scenario& scenario);

/// Records (s, |f|) pairs over `reps` calibration runs (seed + rep).
std::vector<safety::ForceSample> acquire_baseline(const Scenario& scenario, CalibrationMode mode, int reps);

// Metrics.

/// RMSE of positions after resampling both trajectories on normalized time.
double metric_rmse(const TimedTrajectory& a, const TimedTrajectory& b);
double metric_max_deviation(const SimTrace& trace);
/// Time of the first record at progress 1; nullopt if never reached.
std::optional<double> metric_completion_time(const SimTrace& trace);
/// First violation to first REVERSE_TO directive; nullopt without a violation.
std::optional<double> metric_reaction_time(const SimTrace& trace);
/// max - min of the angle at `pivot` between `proximal` and the reference
/// position (degrees). Points are body-frame.
double metric_rom(const SimTrace& trace, const Vec3& proximal, const Vec3& pivot);
/// Path length of the reference over limb length.
double metric_reach_ratio(const SimTrace& trace);

TimedTrajectory reference_trajectory(const SimTrace& trace);

}  // namespace rehab::sim
