#include "rehab/motion_types.hpp"

#include <algorithm>
#include <numbers>
#include <string>

namespace rehab {

Quat canonical(const Quat& q) {
  Quat out = q;
  const double n2 = out.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) {
    throw Error(ErrorCode::kInvalidArgument, "quaternion must be finite and non-zero");
  }
  if (std::abs(n2 - 1.0) > 1e-12) out.coeffs() /= std::sqrt(n2);
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

Pose Pose::compose(const Pose& local) const {
  return {position_ + orientation_ * local.position(), orientation_ * local.orientation()};
}

Pose Pose::inverse() const {
  const Quat inv = orientation_.conjugate();
  return {-(inv * position_), inv};
}

std::string_view to_string(FrameId id) {
  switch (id) {
    case FrameId::kBody: return "body";
    case FrameId::kRobotBase: return "robot-base";
    case FrameId::kCamera: return "camera";
  }
  return "body";
}

FrameId frame_from_string(std::string_view name) {
  if (name == "body") return FrameId::kBody;
  if (name == "robot-base") return FrameId::kRobotBase;
  if (name == "camera") return FrameId::kCamera;
  throw Error(ErrorCode::kParseError, "unknown frame id '" + std::string(name) + "'");
}

void TimedTrajectory::validate() const {
  if (samples.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "trajectory needs at least 2 samples");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].time > samples[i - 1].time)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "trajectory timestamps must strictly increase (sample " + std::to_string(i) + ")");
    }
  }
}

std::vector<Vec3> TimedTrajectory::positions() const {
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.pose.position());
  return out;
}

Vec3 quat_log(const Quat& q, const Quat& q_ref) {
  Quat rel = q * q_ref.conjugate();
  if (rel.w() < 0.0) rel.coeffs() = -rel.coeffs();
  const Vec3 v = rel.vec();
  const double vn = v.norm();
  if (vn < 1e-12) {
    // First-order: angle ~ 2|v|, so r ~ 2v.
    return 2.0 * v;
  }
  const double angle = 2.0 * std::atan2(vn, rel.w());
  return v * (angle / vn);
}

Quat quat_exp(const Vec3& r) {
  const double angle = r.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * r.x(), 0.5 * r.y(), 0.5 * r.z());
    return canonical(q);
  }
  const Vec3 axis = r / angle;
  const double half = 0.5 * angle;
  const double sh = std::sin(half);
  return canonical(Quat(std::cos(half), axis.x() * sh, axis.y() * sh, axis.z() * sh));
}

Quat quat_exp_step(const Quat& q, const Vec3& omega, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  if (omega.isZero(0.0)) return canonical(q);
  return canonical(quat_exp(omega * dt) * q);
}

double angular_distance(const Quat& a, const Quat& b) { return quat_log(a, b).norm(); }

TimedTrajectory smooth_trajectory(const TimedTrajectory& traj, std::size_t window, double power) {
  std::vector<Vec3> positions = traj.positions();
  std::vector<Eigen::Vector4d> quats;
  quats.reserve(traj.samples.size());
  Eigen::Vector4d prev = Eigen::Vector4d::Zero();
  for (const auto& s : traj.samples) {
    Eigen::Vector4d c = s.pose.orientation().coeffs();
    if (!quats.empty() && c.dot(prev) < 0.0) c = -c;
    quats.push_back(c);
    prev = c;
  }
  const auto fp = power_moving_average(positions, window, power);
  const auto fq = power_moving_average(quats, window, power);

  TimedTrajectory out;
  out.frame_id = traj.frame_id;
  out.samples.reserve(traj.samples.size());
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    const Eigen::Vector4d& c = fq[i];
    out.samples.push_back({traj.samples[i].time, Pose(fp[i], Quat(c[3], c[0], c[1], c[2]))});
  }
  return out;
}

}  // namespace rehab
