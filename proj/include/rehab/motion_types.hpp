#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "rehab/errors.hpp"

namespace rehab {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion with non-negative scalar part. Renormalizes only when the
/// norm drifted, so already-canonical values pass through bit-identical.
Quat canonical(const Quat& q);

/// 6-DoF sample: position in meters, orientation as canonical unit quaternion.
class Pose {
 public:
  Pose() : position_(Vec3::Zero()), orientation_(Quat::Identity()) {}
  Pose(const Vec3& position, const Quat& orientation)
      : position_(position), orientation_(canonical(orientation)) {}

  const Vec3& position() const { return position_; }
  const Quat& orientation() const { return orientation_; }

  Pose translated(const Vec3& offset) const { return {position_ + offset, orientation_}; }

  /// Rigid transform `this` applied to `local` (local expressed in this frame).
  Pose compose(const Pose& local) const;
  Pose inverse() const;

 private:
  Vec3 position_;
  Quat orientation_;
};

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

enum class FrameId { kBody, kRobotBase, kCamera };

std::string_view to_string(FrameId id);
FrameId frame_from_string(std::string_view name);

struct TimedPose {
  double time = 0.0;
  Pose pose;
};

struct TimedTrajectory {
  std::vector<TimedPose> samples;
  FrameId frame_id = FrameId::kBody;

  /// Throws invalid-argument unless timestamps strictly increase and size >= 2.
  void validate() const;
  double duration() const { return samples.back().time - samples.front().time; }
  std::vector<Vec3> positions() const;
};

/// Rotation vector (rad) of q * q_ref^-1, magnitude in [0, pi].
Vec3 quat_log(const Quat& q, const Quat& q_ref);

/// Unit quaternion for rotation vector `r` (rad).
Quat quat_exp(const Vec3& r);

/// Advances q by a world-frame angular velocity held over dt.
Quat quat_exp_step(const Quat& q, const Vec3& omega, double dt);

/// Smallest-angle distance between two orientations (rad).
double angular_distance(const Quat& a, const Quat& b);

namespace detail {
inline double plain_add(double a, double b) { return a + b; }
}  // namespace detail

/// Recency-weighted moving average. Output i is the convex combination of the
/// last `window` inputs (fewer during warm-up); the j-th oldest sample of the
/// window gets weight (j+1)^power, so the newest sample weighs the most.
template <typename T>
std::vector<T> power_moving_average(std::span<const T> series, std::size_t window,
                                    double power = 2.0) {
  if (window == 0) throw Error(ErrorCode::kInvalidArgument, "filter window must be >= 1");
  if (series.empty()) throw Error(ErrorCode::kInvalidArgument, "filter input is empty");
  if (!(power >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "filter power must be >= 0");

  std::vector<double> weights(window);
  for (std::size_t j = 0; j < window; ++j) weights[j] = std::pow(static_cast<double>(j + 1), power);

  std::vector<T> out;
  out.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t count = std::min(window, i + 1);
    const std::size_t first = i + 1 - count;
    double total = 0.0;
    T acc = series[first] * 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      acc = acc + series[first + j] * weights[j];
      total += weights[j];
    }
    out.push_back(acc * (1.0 / total));
  }
  return out;
}

template <typename T>
std::vector<T> power_moving_average(const std::vector<T>& series, std::size_t window,
                                    double power = 2.0) {
  return power_moving_average(std::span<const T>(series), window, power);
}

/// Filters position and orientation of every sample. Orientations are averaged
/// as hemisphere-aligned quaternions and renormalized.
TimedTrajectory smooth_trajectory(const TimedTrajectory& traj, std::size_t window, double power);

}  // namespace rehab
