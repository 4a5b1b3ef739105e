#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "rehab/motion_types.hpp"

namespace testing {

inline std::filesystem::path source_dir() { return REHAB_SOURCE_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rehab_tests_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Rodrigues formula, written out without Eigen's quaternion code.
inline rehab::Mat3 rodrigues(const rehab::Vec3& r) {
  const double th = r.norm();
  rehab::Mat3 k;
  if (th == 0.0) return rehab::Mat3::Identity();
  const rehab::Vec3 a = r / th;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return rehab::Mat3::Identity() + std::sin(th) * k + (1 - std::cos(th)) * k * k;
}

inline rehab::Vec3 random_rotation_vector(std::mt19937_64& rng, double max_angle = 3.1) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  rehab::Vec3 axis(n(rng), n(rng), n(rng));
  return axis.normalized() * u(rng);
}

inline rehab::Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  rehab::Vec3 r = random_rotation_vector(rng);
  return {rehab::Vec3(u(rng), u(rng), u(rng)), rehab::Quat(rodrigues(r))};
}

}  // namespace testing
