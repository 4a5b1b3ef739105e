#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "rehab/cartesian_dmp.hpp"
#include "rehab/force_safety.hpp"
#include "rehab/patient_sim.hpp"

namespace rehab::io {

using Json = nlohmann::json;

inline constexpr int kDmpFormatVersion = 1;
inline constexpr int kGmrFormatVersion = 1;
inline constexpr int kScenarioVersion = 1;

/// Shortest text that parses back to the same double.
std::string format_double(double v);

Json pose_to_json(const Pose& pose);
Pose pose_from_json(const Json& j, const std::string& context);

Json dmp_to_json(const dmp::DmpModel& model);
dmp::DmpModel dmp_from_json(const Json& j);
void save_dmp(const std::filesystem::path& path, const dmp::DmpModel& model);
dmp::DmpModel load_dmp(const std::filesystem::path& path);

Json gmr_to_json(const safety::GmrModel& model);
safety::GmrModel gmr_from_json(const Json& j);
void save_gmr(const std::filesystem::path& path, const safety::GmrModel& model);
safety::GmrModel load_gmr(const std::filesystem::path& path);

/// Reads a JSON document; syntax errors become parse-error with file and line.
Json read_json(const std::filesystem::path& path);
/// Two-space indented dump with a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

/// Sets a dotted path ("modality.gamma=0.04"). The value is parsed as JSON
/// when possible and kept as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

struct ScenarioLoadOptions {
  std::vector<std::string> overrides;
  /// False skips reading the GMR file (used when calibrating it).
  bool load_gmr = true;
};

/// Relative file references resolve against `base_dir`.
sim::Scenario scenario_from_json(const Json& doc, const std::filesystem::path& base_dir,
                                 const ScenarioLoadOptions& options = {});
sim::Scenario load_scenario(const std::filesystem::path& path, const ScenarioLoadOptions& options = {});

void write_trace(std::ostream& out, const sim::SimTrace& trace);
sim::SimTrace read_trace(std::istream& in);
void save_trace(const std::filesystem::path& path, const sim::SimTrace& trace);
sim::SimTrace load_trace(const std::filesystem::path& path);

/// Two columns, s and f, one sample per row.
void write_samples(std::ostream& out, const std::vector<safety::ForceSample>& samples);

}  // namespace rehab::io
