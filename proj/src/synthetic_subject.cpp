#include "rehab/synthetic_subject.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rehab::synth {
namespace {

constexpr double kScapularPlane = 30.0 * 3.14159265358979323846 / 180.0;
constexpr double kHipOffset = 0.12;  // lateral offset of the hip from the shoulder midline

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()) * v;
}

}  // namespace

double min_jerk(double u) {
  const double c = std::clamp(u, 0.0, 1.0);
  return c * c * c * (10.0 - 15.0 * c + 6.0 * c * c);
}

Pose Subject::camera_from_body() const {
  Mat3 facing;
  facing.col(0) = Vec3(-1.0, 0.0, 0.0);
  facing.col(1) = Vec3(0.0, 1.0, 0.0);
  facing.col(2) = Vec3(0.0, 0.0, -1.0);
  const Quat yaw(Eigen::AngleAxisd(trunk_yaw, Vec3::UnitY()));
  return {shoulder_in_camera, yaw * Quat(facing)};
}

ArmLandmarks arm_landmarks(const Subject& subject, Exercise exercise, double angle) {
  const double lateral = subject.side == body::Side::kRight ? 1.0 : -1.0;
  ArmLandmarks out;
  Vec3 forearm_dir;
  Vec3 knuckle_dir;
  switch (exercise) {
    case Exercise::kElbowFlexion: {
      out.elbow = Vec3(0.0, subject.upper_arm, 0.0);
      forearm_dir = Vec3(0.0, std::cos(angle), std::sin(angle));
      knuckle_dir = Vec3(lateral, 0.0, 0.0);
      break;
    }
    case Exercise::kShoulderAbduction: {
      const Vec3 arm(lateral * std::sin(angle) * std::cos(kScapularPlane), std::cos(angle),
                     std::sin(angle) * std::sin(kScapularPlane));
      out.elbow = subject.upper_arm * arm;
      forearm_dir = arm;
      knuckle_dir = Vec3(-lateral * std::sin(kScapularPlane), 0.0, std::cos(kScapularPlane));
      break;
    }
    case Exercise::kShoulderRotation: {
      out.elbow = Vec3(0.0, subject.upper_arm, 0.0);
      forearm_dir = Vec3(lateral * std::sin(angle), 0.0, std::cos(angle));
      knuckle_dir = Vec3(0.0, 1.0, 0.0);
      break;
    }
  }
  knuckle_dir = rotate_about(knuckle_dir, forearm_dir, subject.forearm_roll);
  out.wrist = out.elbow + subject.forearm * forearm_dir;
  for (int i = 0; i < 4; ++i) {
    const double across = -0.03 + 0.02 * i;  // index .. pinky
    out.knuckles.push_back(out.wrist + (0.08 - 0.005 * i) * forearm_dir + across * knuckle_dir);
  }
  return out;
}

TimedTrajectory wrist_path(const Subject& subject, const Motion& motion, double dt) {
  TimedTrajectory out;
  out.frame_id = FrameId::kBody;
  const long steps = std::lround(motion.duration / dt);
  for (long k = 0; k <= steps; ++k) {
    const double t = k * dt;
    const double angle =
        motion.start_angle + (motion.end_angle - motion.start_angle) * min_jerk(t / motion.duration);
    const ArmLandmarks arm = arm_landmarks(subject, motion.exercise, angle);
    body::SkeletonFrame frame;
    const auto side = subject.side;
    frame.keypoints[body::landmark::elbow(side)] = arm.elbow;
    frame.keypoints[body::landmark::wrist(side)] = arm.wrist;
    const auto names = body::landmark::knuckles(side);
    for (std::size_t i = 0; i < names.size(); ++i) frame.keypoints[names[i]] = arm.knuckles[i];
    out.samples.push_back({t, body::wrist_pose(frame, side)});
  }
  return out;
}

std::vector<body::SkeletonFrame> keypoint_stream(const Subject& subject, const Motion& motion,
                                                 const StreamOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Pose cam = subject.camera_from_body();
  const double lateral = subject.side == body::Side::kRight ? 1.0 : -1.0;
  const double w = subject.shoulder_width;

  std::vector<body::SkeletonFrame> frames;
  const long count = std::lround(motion.duration * options.rate_hz);
  for (long i = 0; i <= count; ++i) {
    const double t = i / options.rate_hz;
    const double angle =
        motion.start_angle + (motion.end_angle - motion.start_angle) * min_jerk(t / motion.duration);
    const ArmLandmarks arm = arm_landmarks(subject, motion.exercise, angle);

    std::vector<std::pair<std::string, Vec3>> local;
    const auto side = subject.side;
    const Vec3 other_shoulder(-lateral * w, 0.0, 0.0);
    local.emplace_back(body::landmark::shoulder(side), Vec3::Zero());
    local.emplace_back(body::landmark::shoulder(side == body::Side::kRight ? body::Side::kLeft
                                                                           : body::Side::kRight),
                       other_shoulder);
    // The hip sits below the shoulder midline, shifted toward the right side.
    local.emplace_back(body::landmark::kRightHip,
                       Vec3(-lateral * 0.5 * w + kHipOffset, subject.torso, 0.0));
    local.emplace_back(body::landmark::elbow(side), arm.elbow);
    local.emplace_back(body::landmark::wrist(side), arm.wrist);
    const auto names = body::landmark::knuckles(side);
    for (std::size_t k = 0; k < names.size(); ++k) local.emplace_back(names[k], arm.knuckles[k]);

    body::SkeletonFrame frame;
    frame.time = t;
    frame.index = static_cast<std::size_t>(i);
    for (const auto& [name, p] : local) {
      Vec3 c = cam.position() + cam.orientation() * p;
      if (options.noise_sigma > 0.0) {
        for (int d = 0; d < 3; ++d) c[d] += options.noise_sigma * noise(rng);
      }
      frame.keypoints[name] = c;
      frame.confidence[name] = options.confidence;
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace rehab::synth
