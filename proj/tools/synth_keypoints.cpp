// Writes a keypoint stream of the synthetic subject performing one exercise.

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>

#include <CLI11.hpp>

#include "rehab/synthetic_subject.hpp"

int main(int argc, char** argv) {
  using namespace rehab;
  CLI::App app{"Synthetic keypoint stream generator"};

  std::string exercise = "abduction";
  std::string side = "right";
  synth::Subject subject;
  synth::Motion motion;
  synth::StreamOptions stream;
  double yaw_deg = 0.0;
  std::string out;

  const std::map<std::string, synth::Exercise> exercises = {
      {"elbow-flexion", synth::Exercise::kElbowFlexion},
      {"abduction", synth::Exercise::kShoulderAbduction},
      {"rotation", synth::Exercise::kShoulderRotation}};

  app.add_option("--exercise", exercise, "elbow-flexion | abduction | rotation")
      ->check(CLI::IsMember({"elbow-flexion", "abduction", "rotation"}));
  app.add_option("--side", side)->check(CLI::IsMember({"left", "right"}));
  app.add_option("--start", motion.start_angle, "Start joint angle (rad)");
  app.add_option("--end", motion.end_angle, "End joint angle (rad)");
  app.add_option("--duration", motion.duration, "Seconds")->check(CLI::PositiveNumber);
  app.add_option("--upper-arm", subject.upper_arm, "m");
  app.add_option("--forearm", subject.forearm, "m");
  app.add_option("--yaw", yaw_deg, "Trunk rotation about the vertical (deg)");
  app.add_option("--noise", stream.noise_sigma, "Keypoint noise sigma (m)");
  app.add_option("--rate", stream.rate_hz, "Frames per second")->check(CLI::PositiveNumber);
  app.add_option("--seed", stream.seed);
  app.add_option("--out,-o", out, "Output file")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    motion.exercise = exercises.at(exercise);
    subject.side = body::side_from_string(side);
    subject.trunk_yaw = yaw_deg * std::numbers::pi / 180.0;
    const auto frames = synth::keypoint_stream(subject, motion, stream);
    std::ofstream os(out, std::ios::binary);
    if (!os) {
      std::cerr << "error: cannot write " << out << "\n";
      return 2;
    }
    body::write_keypoint_stream(os, frames);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
