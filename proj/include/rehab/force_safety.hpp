#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rehab/motion_types.hpp"

namespace rehab::safety {

struct ForceSample {
  double s = 1.0;      // phase
  double f_mag = 0.0;  // N
};

struct GaussianComponent {
  double weight = 1.0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();           // (s, f)
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
};

struct GmrModel {
  std::vector<GaussianComponent> components;

  std::size_t size() const { return components.size(); }
  /// Weights in (0, 1] summing to 1; covariances symmetric with min eigenvalue >= 1e-8.
  void validate() const;
  double log_likelihood(const std::vector<ForceSample>& samples) const;
};

inline constexpr double kMinEigenvalue = 1e-8;
inline constexpr double kPruneWeight = 1e-4;

struct EmOptions {
  int max_iterations = 500;
  double tolerance = 1e-7;  // on the total log-likelihood
};

struct EmReport {
  std::vector<double> log_likelihood;  // after each iteration
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;   // pruned components
};

/// Expectation-maximization with k-means++ seeding on standardized (s, f).
/// Components whose weight drops below 1e-4 are pruned (reported in `report`).
GmrModel fit_gmm(const std::vector<ForceSample>& samples, int K, std::uint64_t seed,
                 EmReport* report = nullptr, const EmOptions& options = {});

struct ForcePrediction {
  double mu = 0.0;     // N
  double sigma = 0.0;  // N
};

/// Prediction-time floor on the corridor standard deviation.
inline constexpr double kSigmaFloor = 0.05;

/// Conditional mean and standard deviation of f given s, including the
/// between-component spread; sigma is raised to `sigma_floor`.
ForcePrediction gmr_predict(const GmrModel& model, double s, double sigma_floor = kSigmaFloor);

/// Inclusive band |f - mu| <= n_sigma * sigma.
bool corridor_check(double f_mag, double mu, double sigma, double n_sigma);

enum class SafetyMode { kForward, kReversing, kHoldAtStart };
std::string_view to_string(SafetyMode mode);

struct PathEntry {
  double s = 1.0;
  Pose pose;
};

struct SafetyConfig {
  double n_sigma = 5.0;
  int dwell_ticks = 30;
  /// Retrace rate in log-phase per second (1 / tau at the passive nominal speed).
  double reverse_log_rate = 1.0;
};

struct SafetyState {
  SafetyMode mode = SafetyMode::kForward;
  std::vector<PathEntry> path;   // traversed this repetition, phase decreasing
  SafetyConfig config;
  int in_corridor_streak = 0;
  std::optional<Pose> start_pose;

  void validate() const;
};

enum class DirectiveKind { kForward, kReverseTo, kHold };
std::string_view to_string(DirectiveKind kind);

struct Directive {
  DirectiveKind kind = DirectiveKind::kForward;
  Pose target;        // for kReverseTo / kHold
  double s = 1.0;     // phase of the target entry
};

struct PhasePose {
  double s = 1.0;
  Pose pose;
};

/// Forward/reverse/resume state machine. While FORWARD and in corridor the
/// current sample is appended. A violation switches to REVERSING toward the last
/// buffered entry; each reversing tick pops entries at `reverse_log_rate`.
/// `dwell_ticks` consecutive in-corridor ticks resume FORWARD; running out of
/// buffer parks in HOLD_AT_START at the first entry.
Directive safety_step(SafetyState& state, bool in_corridor, const PhasePose& current, double dt);

}  // namespace rehab::safety
