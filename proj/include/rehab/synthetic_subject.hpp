#pragma once

#include <cstdint>
#include <vector>

#include "rehab/body_frame.hpp"

namespace rehab::synth {

enum class Exercise { kElbowFlexion, kShoulderAbduction, kShoulderRotation };

/// Kinematic stick figure seen by a camera with x right, y down, z forward.
struct Subject {
  double upper_arm = 0.30;       // m
  double forearm = 0.31;         // m
  double shoulder_width = 0.36;  // m
  double torso = 0.50;           // shoulder line to hip, m
  body::Side side = body::Side::kRight;
  Vec3 shoulder_in_camera{0.0, -0.2, 2.0};  // tracked shoulder, before trunk rotation
  double trunk_yaw = 0.0;                   // rad about the camera vertical, through the tracked shoulder
  double forearm_roll = 0.0;                // rad, knuckle line rotation about the forearm

  double limb_length() const { return upper_arm + forearm; }
  /// Body frame expressed in the camera frame.
  Pose camera_from_body() const;
};

struct Motion {
  Exercise exercise = Exercise::kShoulderAbduction;
  double start_angle = 0.2;   // rad
  double end_angle = 1.2;     // rad
  double duration = 10.0;     // s
};

/// Minimum-jerk interpolation 10u^3 - 15u^4 + 6u^5 for u in [0, 1].
double min_jerk(double u);

/// Arm landmarks in the body frame for a given joint angle.
struct ArmLandmarks {
  Vec3 elbow;
  Vec3 wrist;
  std::vector<Vec3> knuckles;  // index, middle, ring, pinky
};
ArmLandmarks arm_landmarks(const Subject& subject, Exercise exercise, double angle);

/// Noiseless wrist trajectory in the body frame sampled every dt.
TimedTrajectory wrist_path(const Subject& subject, const Motion& motion, double dt);

struct StreamOptions {
  double rate_hz = 30.0;
  double noise_sigma = 0.0;  // m, per keypoint coordinate
  std::uint64_t seed = 1;
  double confidence = 0.95;
};

/// Camera-frame keypoint stream of the subject performing the motion.
std::vector<body::SkeletonFrame> keypoint_stream(const Subject& subject, const Motion& motion,
                                                 const StreamOptions& options);

}  // namespace rehab::synth
