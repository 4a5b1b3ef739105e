#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rehab/motion_types.hpp"

namespace rehab::body {

enum class Side { kLeft, kRight };

std::string_view to_string(Side side);
Side side_from_string(std::string_view name);

/// Landmark names used by the keypoint replay format.
namespace landmark {
inline constexpr const char* kLeftShoulder = "left_shoulder";
inline constexpr const char* kRightShoulder = "right_shoulder";
inline constexpr const char* kRightHip = "right_hip";

std::string shoulder(Side side);
std::string elbow(Side side);
std::string wrist(Side side);
/// Knuckles ordered radial to ulnar (index, middle, ring, pinky).
std::vector<std::string> knuckles(Side side);
}  // namespace landmark

/// Confidence below this marks a landmark as missing.
inline constexpr double kConfidenceThreshold = 0.5;

struct SkeletonFrame {
  double time = 0.0;
  std::size_t index = 0;  // record order in the source stream
  std::map<std::string, Vec3> keypoints;
  std::map<std::string, double> confidence;

  bool has(const std::string& name) const { return keypoints.count(name) != 0; }
  /// Throws missing-required-landmark naming this frame's index.
  const Vec3& at(const std::string& name) const;
};

/// Shoulder-anchored frame; `orientation` maps body coordinates into camera coordinates.
struct BodyFrame {
  Vec3 origin = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Mat3 axes() const { return orientation.toRotationMatrix(); }
  Pose as_pose() const { return {origin, orientation}; }
};

struct AnthropometricProfile {
  double limb_length = 0.0;  // shoulder->elbow + elbow->wrist, meters
  Side side = Side::kRight;
};

enum class GraspClass { kSupinated, kPronated };

struct ForearmRoll {
  double angle = 0.0;  // rad, (-pi, pi]
  GraspClass grasp = GraspClass::kSupinated;
};

/// Parses a line-delimited keypoint stream. Frames are returned sorted by time;
/// landmarks with confidence below kConfidenceThreshold are dropped. Each frame
/// must carry both shoulders and the right hip (frame index = record order in the file).
std::vector<SkeletonFrame> load_keypoint_stream(const std::filesystem::path& path);
std::vector<SkeletonFrame> parse_keypoint_stream(std::istream& in);
void write_keypoint_stream(std::ostream& out, const std::vector<SkeletonFrame>& frames);

/// Keypoint filter defaults: one second of history at 30 Hz.
inline constexpr std::size_t kDefaultFilterWindow = 30;
inline constexpr double kDefaultFilterPower = 2.0;

/// Runs power_moving_average over every landmark track. A track skips the
/// frames where its landmark is missing; confidences are kept.
std::vector<SkeletonFrame> smooth_keypoint_stream(std::vector<SkeletonFrame> frames, std::size_t window,
                                                  double power = kDefaultFilterPower);

/// x: left->right shoulder; y: hip direction orthogonal to x (caudal); z = x cross y.
BodyFrame build_body_frame(const SkeletonFrame& frame, Side side);

/// Wrist pose in camera coordinates. x axis along the forearm (elbow->wrist),
/// y along the knuckle line projected orthogonal to the forearm.
Pose wrist_pose(const SkeletonFrame& frame, Side side);

/// Wrist poses for every frame carrying elbow, wrist and two knuckles.
TimedTrajectory extract_wrist_trajectory(const std::vector<SkeletonFrame>& frames, Side side);

/// Nearest-neighbour pairing of each wrist sample with a skeleton frame.
inline constexpr double kAlignmentTolerance = 0.050;

TimedTrajectory to_body_frame(const TimedTrajectory& wrist_poses,
                              const std::vector<SkeletonFrame>& frames, Side side);

ForearmRoll forearm_roll(const SkeletonFrame& frame, Side side);

/// Signed roll of a knuckle vector about the forearm axis, measured from
/// `reference` transported onto the plane orthogonal to the axis.
ForearmRoll roll_about_axis(const Vec3& forearm_axis, const Vec3& knuckle_vector,
                            const Vec3& reference);

AnthropometricProfile estimate_limb_length(const std::vector<SkeletonFrame>& frames, Side side);

/// Interior angle at b between rays b->a and b->c, degrees in [0, 180].
double joint_angle(const Vec3& a, const Vec3& b, const Vec3& c);

double path_distance(const TimedTrajectory& traj);
double path_distance(const std::vector<Vec3>& points);
double reach_ratio(double path_distance_m, double limb_length_m);

/// Median of the values; averages the middle pair for even counts.
double median(std::vector<double> values);

}  // namespace rehab::body
