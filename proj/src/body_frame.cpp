#include "rehab/body_frame.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace rehab::body {
namespace {

constexpr double kMinLandmarkSeparation = 0.01;  // m
const double kSinParallelTolerance = std::sin(2.0 * std::numbers::pi / 180.0);

const char* prefix(Side side) { return side == Side::kLeft ? "left_" : "right_"; }

}  // namespace

std::string_view to_string(Side side) { return side == Side::kLeft ? "left" : "right"; }

Side side_from_string(std::string_view name) {
  if (name == "left") return Side::kLeft;
  if (name == "right") return Side::kRight;
  throw Error(ErrorCode::kInvalidArgument, "side must be 'left' or 'right'");
}

namespace landmark {
std::string shoulder(Side side) { return std::string(prefix(side)) + "shoulder"; }
std::string elbow(Side side) { return std::string(prefix(side)) + "elbow"; }
std::string wrist(Side side) { return std::string(prefix(side)) + "wrist"; }
std::vector<std::string> knuckles(Side side) {
  const std::string p = prefix(side);
  return {p + "index_knuckle", p + "middle_knuckle", p + "ring_knuckle", p + "pinky_knuckle"};
}
}  // namespace landmark

const Vec3& SkeletonFrame::at(const std::string& name) const {
  auto it = keypoints.find(name);
  if (it == keypoints.end()) throw MissingLandmarkError(index, name);
  return it->second;
}

std::vector<SkeletonFrame> parse_keypoint_stream(std::istream& in) {
  using nlohmann::json;
  std::vector<SkeletonFrame> frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("time_s") || !record["time_s"].is_number() ||
        !record.contains("keypoints") || !record["keypoints"].is_object()) {
      throw Error(ErrorCode::kParseError, where + ": expected {time_s, keypoints, confidence}");
    }
    SkeletonFrame frame;
    frame.index = frames.size();
    frame.time = record["time_s"].get<double>();
    if (!std::isfinite(frame.time)) throw Error(ErrorCode::kParseError, where + ": non-finite time");

    const json empty = json::object();
    const json& conf = record.contains("confidence") ? record["confidence"] : empty;
    if (!conf.is_object()) throw Error(ErrorCode::kParseError, where + ": confidence must be an object");
    for (const auto& [name, value] : record["keypoints"].items()) {
      if (!value.is_array() || value.size() != 3) {
        throw Error(ErrorCode::kParseError, where + ": keypoint '" + name + "' must be [x,y,z]");
      }
      Vec3 p;
      for (int k = 0; k < 3; ++k) {
        if (!value[k].is_number()) {
          throw Error(ErrorCode::kParseError, where + ": keypoint '" + name + "' has a non-number");
        }
        p[k] = value[k].get<double>();
      }
      if (!p.allFinite()) {
        throw Error(ErrorCode::kParseError, where + ": keypoint '" + name + "' is not finite");
      }
      double c = 1.0;
      if (conf.contains(name)) {
        if (!conf[name].is_number()) {
          throw Error(ErrorCode::kParseError, where + ": confidence of '" + name + "' must be a number");
        }
        c = conf[name].get<double>();
      }
      frame.confidence[name] = c;
      if (c >= kConfidenceThreshold) frame.keypoints[name] = p;
    }
    frames.push_back(std::move(frame));
  }

  for (const auto& frame : frames) {
    for (const char* name : {landmark::kLeftShoulder, landmark::kRightShoulder, landmark::kRightHip}) {
      if (!frame.has(name)) throw MissingLandmarkError(frame.index, name);
    }
  }
  std::stable_sort(frames.begin(), frames.end(),
                   [](const SkeletonFrame& a, const SkeletonFrame& b) { return a.time < b.time; });
  return frames;
}

std::vector<SkeletonFrame> load_keypoint_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open keypoint stream " + path.string());
  return parse_keypoint_stream(in);
}

void write_keypoint_stream(std::ostream& out, const std::vector<SkeletonFrame>& frames) {
  using nlohmann::json;
  for (const auto& frame : frames) {
    json record;
    record["time_s"] = frame.time;
    json kp = json::object();
    for (const auto& [name, p] : frame.keypoints) kp[name] = {p.x(), p.y(), p.z()};
    record["keypoints"] = std::move(kp);
    json conf = json::object();
    for (const auto& [name, c] : frame.confidence) conf[name] = c;
    record["confidence"] = std::move(conf);
    out << record.dump() << '\n';
  }
}

BodyFrame build_body_frame(const SkeletonFrame& frame, Side side) {
  const Vec3& ls = frame.at(landmark::kLeftShoulder);
  const Vec3& rs = frame.at(landmark::kRightShoulder);
  const Vec3& hip = frame.at(landmark::kRightHip);

  const Vec3 across = rs - ls;
  if (across.norm() < kMinLandmarkSeparation) {
    throw Error(ErrorCode::kDegenerateLandmarks, "shoulders coincide");
  }
  const Vec3 x = across.normalized();
  const Vec3 down = hip - 0.5 * (ls + rs);
  const Vec3 down_perp = down - down.dot(x) * x;
  if (down.norm() < kMinLandmarkSeparation || down_perp.norm() < kSinParallelTolerance * down.norm()) {
    throw Error(ErrorCode::kDegenerateLandmarks, "hip collinear with the shoulder line");
  }
  const Vec3 y = down_perp.normalized();
  const Vec3 z = x.cross(y);

  Mat3 axes;
  axes.col(0) = x;
  axes.col(1) = y;
  axes.col(2) = z;
  BodyFrame out;
  out.origin = side == Side::kLeft ? ls : rs;
  out.orientation = canonical(Quat(axes));
  return out;
}

Pose wrist_pose(const SkeletonFrame& frame, Side side) {
  const Vec3& elbow = frame.at(landmark::elbow(side));
  const Vec3& wrist = frame.at(landmark::wrist(side));
  std::vector<Vec3> knuckles;
  for (const auto& name : landmark::knuckles(side)) {
    if (frame.has(name)) knuckles.push_back(frame.keypoints.at(name));
  }
  if (knuckles.size() < 2) throw MissingLandmarkError(frame.index, landmark::knuckles(side).front());

  const Vec3 forearm = wrist - elbow;
  if (forearm.norm() < kMinLandmarkSeparation) {
    throw Error(ErrorCode::kDegenerateLandmarks, "wrist coincides with elbow");
  }
  const Vec3 a = forearm.normalized();
  const Vec3 k = knuckles.back() - knuckles.front();
  const Vec3 k_perp = k - k.dot(a) * a;
  if (k.norm() < 1e-6 || k_perp.norm() < kSinParallelTolerance * k.norm()) {
    throw Error(ErrorCode::kDegenerateLandmarks, "knuckle line parallel to the forearm");
  }
  Mat3 axes;
  axes.col(0) = a;
  axes.col(1) = k_perp.normalized();
  axes.col(2) = a.cross(axes.col(1));
  return {wrist, Quat(axes)};
}

std::vector<SkeletonFrame> smooth_keypoint_stream(std::vector<SkeletonFrame> frames, std::size_t window,
                                                  double power) {
  if (frames.empty()) throw Error(ErrorCode::kInvalidArgument, "keypoint stream is empty");
  std::map<std::string, std::vector<std::size_t>> tracks;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (const auto& [name, _] : frames[i].keypoints) tracks[name].push_back(i);
  }
  for (const auto& [name, rows] : tracks) {
    std::vector<Vec3> raw;
    raw.reserve(rows.size());
    for (std::size_t i : rows) raw.push_back(frames[i].keypoints.at(name));
    const auto filtered = power_moving_average(raw, window, power);
    for (std::size_t k = 0; k < rows.size(); ++k) frames[rows[k]].keypoints[name] = filtered[k];
  }
  return frames;
}

TimedTrajectory extract_wrist_trajectory(const std::vector<SkeletonFrame>& frames, Side side) {
  TimedTrajectory out;
  out.frame_id = FrameId::kCamera;
  for (const auto& frame : frames) {
    if (!frame.has(landmark::elbow(side)) || !frame.has(landmark::wrist(side))) continue;
    int knuckles = 0;
    for (const auto& name : landmark::knuckles(side)) knuckles += frame.has(name) ? 1 : 0;
    if (knuckles < 2) continue;
    if (!out.samples.empty() && !(frame.time > out.samples.back().time)) continue;
    out.samples.push_back({frame.time, wrist_pose(frame, side)});
  }
  return out;
}

TimedTrajectory to_body_frame(const TimedTrajectory& wrist_poses,
                              const std::vector<SkeletonFrame>& frames, Side side) {
  if (frames.empty()) throw Error(ErrorCode::kEmptyInput, "no skeleton frames");
  TimedTrajectory out;
  out.frame_id = FrameId::kBody;
  out.samples.reserve(wrist_poses.samples.size());
  for (const auto& sample : wrist_poses.samples) {
    auto it = std::lower_bound(frames.begin(), frames.end(), sample.time,
                               [](const SkeletonFrame& f, double t) { return f.time < t; });
    const SkeletonFrame* best = nullptr;
    double best_gap = std::numeric_limits<double>::infinity();
    if (it != frames.end()) {
      best = &*it;
      best_gap = std::abs(it->time - sample.time);
    }
    if (it != frames.begin()) {
      const auto prev = std::prev(it);
      const double gap = std::abs(prev->time - sample.time);
      if (gap <= best_gap) {
        best = &*prev;
        best_gap = gap;
      }
    }
    if (best == nullptr || best_gap > kAlignmentTolerance) {
      throw Error(ErrorCode::kAlignmentGap,
                  "no skeleton frame within 50 ms of t=" + std::to_string(sample.time));
    }
    const Pose frame_pose = build_body_frame(*best, side).as_pose();
    out.samples.push_back({sample.time, frame_pose.inverse().compose(sample.pose)});
  }
  return out;
}

ForearmRoll roll_about_axis(const Vec3& forearm_axis, const Vec3& knuckle_vector,
                            const Vec3& reference) {
  const Vec3 a = forearm_axis.normalized();
  const Vec3 k_perp = knuckle_vector - knuckle_vector.dot(a) * a;
  if (knuckle_vector.norm() < 1e-9 || k_perp.norm() < kSinParallelTolerance * knuckle_vector.norm()) {
    throw Error(ErrorCode::kDegenerateLandmarks, "knuckle line parallel to the forearm");
  }
  const Vec3 r_perp = reference - reference.dot(a) * a;
  if (reference.norm() < 1e-9 || r_perp.norm() < kSinParallelTolerance * reference.norm()) {
    throw Error(ErrorCode::kDegenerateLandmarks, "roll reference parallel to the forearm");
  }
  const Vec3 r = r_perp.normalized();
  const Vec3 k = k_perp.normalized();
  ForearmRoll out;
  out.angle = std::atan2(a.dot(r.cross(k)), r.dot(k));
  out.grasp = std::abs(out.angle) >= std::numbers::pi / 2 ? GraspClass::kPronated : GraspClass::kSupinated;
  return out;
}

ForearmRoll forearm_roll(const SkeletonFrame& frame, Side side) {
  const Vec3& elbow = frame.at(landmark::elbow(side));
  const Vec3& wrist = frame.at(landmark::wrist(side));
  if ((wrist - elbow).norm() < kMinLandmarkSeparation) {
    throw Error(ErrorCode::kDegenerateLandmarks, "wrist coincides with elbow");
  }
  std::vector<Vec3> knuckles;
  for (const auto& name : landmark::knuckles(side)) {
    if (frame.has(name)) knuckles.push_back(frame.keypoints.at(name));
  }
  if (knuckles.size() < 2) throw MissingLandmarkError(frame.index, landmark::knuckles(side).front());
  const Vec3 reference = build_body_frame(frame, side).axes().col(0);
  return roll_about_axis(wrist - elbow, knuckles.back() - knuckles.front(), reference);
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

AnthropometricProfile estimate_limb_length(const std::vector<SkeletonFrame>& frames, Side side) {
  const std::string shoulder = landmark::shoulder(side);
  const std::string elbow = landmark::elbow(side);
  const std::string wrist = landmark::wrist(side);
  std::vector<double> lengths;
  for (const auto& f : frames) {
    if (!f.has(shoulder) || !f.has(elbow) || !f.has(wrist)) continue;
    lengths.push_back((f.keypoints.at(shoulder) - f.keypoints.at(elbow)).norm() +
                      (f.keypoints.at(elbow) - f.keypoints.at(wrist)).norm());
  }
  if (lengths.size() < 10) {
    throw Error(ErrorCode::kInsufficientFrames,
                "limb length needs >= 10 frames with shoulder, elbow and wrist; got " +
                    std::to_string(lengths.size()));
  }
  AnthropometricProfile profile{median(std::move(lengths)), side};
  if (profile.limb_length < 0.3 || profile.limb_length > 1.0) {
    throw Error(ErrorCode::kInvalidArgument,
                "limb length " + std::to_string(profile.limb_length) + " m outside [0.3, 1.0]");
  }
  return profile;
}

double joint_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = a - b;
  const Vec3 v = c - b;
  if (u.norm() < kMinLandmarkSeparation || v.norm() < kMinLandmarkSeparation) {
    throw Error(ErrorCode::kDegeneratePoints, "joint vertex closer than 1 cm to a ray end");
  }
  return std::atan2(u.cross(v).norm(), u.dot(v)) * 180.0 / std::numbers::pi;
}

double path_distance(const std::vector<Vec3>& points) {
  double d = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) d += (points[i] - points[i - 1]).norm();
  return d;
}

double path_distance(const TimedTrajectory& traj) { return path_distance(traj.positions()); }

double reach_ratio(double path_distance_m, double limb_length_m) {
  if (!(limb_length_m > 0.0)) throw Error(ErrorCode::kInvalidArgument, "limb length must be positive");
  return path_distance_m / limb_length_m;
}

}  // namespace rehab::body
