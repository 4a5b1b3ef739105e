#include "rehab/io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace rehab::io {
namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfigError, msg); }

void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& context) {
  if (!obj.is_object()) config_error(context + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) config_error(context + ": unknown key '" + key + "'");
  }
}

const Json& require(const Json& obj, const std::string& key, const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) config_error(context + ": missing key '" + key + "'");
  return *it;
}

double number(const Json& j, const std::string& context) {
  if (!j.is_number()) config_error(context + ": expected a number");
  return j.get<double>();
}

double number_or(const Json& obj, const std::string& key, double fallback, const std::string& context) {
  auto it = obj.find(key);
  return it == obj.end() ? fallback : number(*it, context + "." + key);
}

Vec3 vec3(const Json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) config_error(context + ": expected [x, y, z]");
  return {number(j[0], context), number(j[1], context), number(j[2], context)};
}

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json row_json(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < row.size(); ++i) out.push_back(row[i]);
  return out;
}

Eigen::VectorXd vector_from(const Json& j, std::size_t n, const std::string& context) {
  if (!j.is_array() || j.size() != n) config_error(context + ": expected " + std::to_string(n) + " values");
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out[static_cast<Eigen::Index>(i)] = number(j[i], context);
  return out;
}

dmp::WeightMatrix weights_from(const Json& j, std::size_t n, const std::string& context) {
  if (!j.is_array() || j.size() != 3) config_error(context + ": expected 3 rows");
  dmp::WeightMatrix w(3, static_cast<Eigen::Index>(n));
  for (int r = 0; r < 3; ++r) w.row(r) = vector_from(j[static_cast<std::size_t>(r)], n, context).transpose();
  return w;
}

void check_format(const Json& j, const std::string& format, int version) {
  if (!j.is_object()) config_error(format + ": document is not an object");
  if (j.value("format", std::string()) != format) config_error("document is not a " + format + " file");
  const int v = j.value("version", -1);
  if (v != version) {
    config_error(format + ": unsupported version " + std::to_string(v) + " (expected " + std::to_string(version) + ")");
  }
}

std::string text_or(const Json& obj, const std::string& key, const std::string& fallback, const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) config_error(context + "." + key + ": expected a string");
  return it->get<std::string>();
}

sim::ForceSegment segment_from(const Json& j, const std::string& context, sim::Trigger default_trigger) {
  check_keys(j, {"trigger", "start", "duration", "tangential", "orthogonal", "direction"}, context);
  sim::ForceSegment seg;
  const std::string trig = text_or(j, "trigger", default_trigger == sim::Trigger::kTime ? "time" : "progress", context);
  if (trig == "time") {
    seg.trigger = sim::Trigger::kTime;
  } else if (trig == "progress") {
    seg.trigger = sim::Trigger::kProgress;
  } else {
    config_error(context + ".trigger: expected 'time' or 'progress'");
  }
  seg.start = number(require(j, "start", context), context + ".start");
  seg.duration = number(require(j, "duration", context), context + ".duration");
  seg.tangential = number_or(j, "tangential", 0.0, context);
  seg.orthogonal = number_or(j, "orthogonal", 0.0, context);
  if (j.contains("direction")) seg.direction = vec3(j["direction"], context + ".direction");
  return seg;
}

sim::PatientModel patient_from(const Json& j, const std::string& context) {
  check_keys(j, {"kind", "segments", "limb_profile", "spring_damper", "spikes"}, context);
  sim::PatientModel p;
  p.kind = sim::patient_kind_from_string(text_or(j, "kind", "scripted", context));
  if (auto it = j.find("segments"); it != j.end()) {
    if (!it->is_array()) config_error(context + ".segments: expected a list");
    for (std::size_t i = 0; i < it->size(); ++i) {
      p.segments.push_back(segment_from((*it)[i], context + ".segments[" + std::to_string(i) + "]", sim::Trigger::kTime));
    }
  }
  if (auto it = j.find("spikes"); it != j.end()) {
    if (!it->is_array()) config_error(context + ".spikes: expected a list");
    for (std::size_t i = 0; i < it->size(); ++i) {
      p.spikes.push_back(segment_from((*it)[i], context + ".spikes[" + std::to_string(i) + "]", sim::Trigger::kProgress));
    }
  }
  if (auto it = j.find("limb_profile"); it != j.end()) {
    const std::string c = context + ".limb_profile";
    check_keys(*it, {"offset", "slope", "noise_sigma"}, c);
    sim::LimbProfile limb;
    limb.offset = number_or(*it, "offset", 0.0, c);
    limb.slope = number_or(*it, "slope", 0.0, c);
    limb.noise_sigma = number_or(*it, "noise_sigma", 0.0, c);
    p.limb = limb;
  }
  if (auto it = j.find("spring_damper"); it != j.end()) {
    const std::string c = context + ".spring_damper";
    check_keys(*it, {"stiffness", "damping", "anchor"}, c);
    sim::SpringDamper sd;
    sd.stiffness = number_or(*it, "stiffness", 0.0, c);
    sd.damping = number_or(*it, "damping", 0.0, c);
    if (it->contains("anchor")) sd.anchor = vec3((*it)["anchor"], c + ".anchor");
    p.spring = sd;
  }
  return p;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& ref) {
  std::filesystem::path p(ref);
  return p.is_absolute() ? p : base / p;
}

template <typename Fn>
auto with_file_context(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(e.code())) + ": ";
    throw Error(e.code(), path.string() + ": " + what.substr(what.rfind(prefix, 0) == 0 ? prefix.size() : 0));
  }
}

safety::SafetyMode safety_mode_from(std::string_view s) {
  if (s == "FORWARD") return safety::SafetyMode::kForward;
  if (s == "REVERSING") return safety::SafetyMode::kReversing;
  if (s == "HOLD_AT_START") return safety::SafetyMode::kHoldAtStart;
  throw Error(ErrorCode::kParseError, "unknown safety mode '" + std::string(s) + "'");
}

safety::DirectiveKind directive_from(std::string_view s) {
  if (s == "FORWARD") return safety::DirectiveKind::kForward;
  if (s == "REVERSE_TO") return safety::DirectiveKind::kReverseTo;
  if (s == "HOLD") return safety::DirectiveKind::kHold;
  throw Error(ErrorCode::kParseError, "unknown directive '" + std::string(s) + "'");
}

sim::Termination termination_from(std::string_view s) {
  for (auto t : {sim::Termination::kRunning, sim::Termination::kCompleted, sim::Termination::kDurationLimit,
                 sim::Termination::kHoldTimeout, sim::Termination::kStopped}) {
    if (sim::to_string(t) == s) return t;
  }
  throw Error(ErrorCode::kParseError, "unknown termination '" + std::string(s) + "'");
}

constexpr const char* kTraceMagic = "# rehab-trace v1";

const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"tick", "time", "s", "progress"};
    for (const char* p : {"ref", "cmd", "tcp"}) {
      for (const char* f : {"x", "y", "z", "qw", "qx", "qy", "qz"}) c.push_back(std::string(p) + "_" + f);
    }
    for (const char* f : {"f_x", "f_y", "f_z", "f_t", "fo_x", "fo_y", "fo_z", "f_o_norm", "u_x", "u_y", "u_z",
                          "deviation", "safety_mode", "directive", "in_corridor", "corridor_mu", "corridor_sigma",
                          "halted"}) {
      c.emplace_back(f);
    }
    return c;
  }();
  return cols;
}

void put_pose(std::string& line, const Pose& p) {
  const auto& v = p.position();
  const auto& q = p.orientation();
  for (double x : {v.x(), v.y(), v.z(), q.w(), q.x(), q.y(), q.z()}) {
    line += ',';
    line += format_double(x);
  }
}

double parse_double(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": bad number '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorCode::kInvalidArgument, "cannot format number");
  return {buf, ptr};
}

Json pose_to_json(const Pose& pose) {
  const auto& q = pose.orientation();
  return {{"position", vec_json(pose.position())}, {"orientation", Json::array({q.w(), q.x(), q.y(), q.z()})}};
}

Pose pose_from_json(const Json& j, const std::string& context) {
  check_keys(j, {"position", "orientation"}, context);
  const Vec3 p = vec3(require(j, "position", context), context + ".position");
  const Json& o = require(j, "orientation", context);
  if (!o.is_array() || o.size() != 4) config_error(context + ".orientation: expected [w, x, y, z]");
  const Quat q(number(o[0], context), number(o[1], context), number(o[2], context), number(o[3], context));
  try {
    return {p, q};
  } catch (const Error& e) {
    config_error(context + ".orientation: " + e.what());
  }
}

Json dmp_to_json(const dmp::DmpModel& m) {
  Json pos = Json::array(), ori = Json::array(), pos_b = Json::array(), ori_b = Json::array();
  for (int r = 0; r < 3; ++r) {
    pos.push_back(row_json(m.pos_weights.row(r)));
    ori.push_back(row_json(m.ori_weights.row(r)));
    pos_b.push_back(row_json(m.pos_slopes.row(r)));
    ori_b.push_back(row_json(m.ori_slopes.row(r)));
  }
  return {{"format", "rehab-dmp"},
          {"version", kDmpFormatVersion},
          {"frame", std::string(to_string(m.frame_id))},
          {"n_basis", m.n_basis},
          {"stiffness", m.stiffness},
          {"damping", m.damping},
          {"s_min", m.s_min},
          {"tau_demo", m.tau_demo},
          {"limb_length", m.limb_length},
          {"start", pose_to_json(m.start)},
          {"goal", pose_to_json(m.goal)},
          {"centers", row_json(m.centers.transpose())},
          {"widths", row_json(m.widths.transpose())},
          {"position_weights", pos},
          {"orientation_weights", ori},
          {"position_slopes", pos_b},
          {"orientation_slopes", ori_b}};
}

dmp::DmpModel dmp_from_json(const Json& j) {
  check_format(j, "rehab-dmp", kDmpFormatVersion);
  const std::string c = "dmp";
  dmp::DmpModel m;
  m.frame_id = frame_from_string(text_or(j, "frame", "body", c));
  const Json& nb = require(j, "n_basis", c);
  if (!nb.is_number_integer() || nb.get<int>() < 1) config_error("dmp.n_basis: expected a positive integer");
  m.n_basis = nb.get<int>();
  const auto n = static_cast<std::size_t>(m.n_basis);
  m.stiffness = number(require(j, "stiffness", c), c + ".stiffness");
  m.damping = number(require(j, "damping", c), c + ".damping");
  m.s_min = number(require(j, "s_min", c), c + ".s_min");
  m.tau_demo = number(require(j, "tau_demo", c), c + ".tau_demo");
  m.limb_length = number_or(j, "limb_length", 0.0, c);
  m.start = pose_from_json(require(j, "start", c), c + ".start");
  m.goal = pose_from_json(require(j, "goal", c), c + ".goal");
  m.centers = vector_from(require(j, "centers", c), n, c + ".centers");
  m.widths = vector_from(require(j, "widths", c), n, c + ".widths");
  m.pos_weights = weights_from(require(j, "position_weights", c), n, c + ".position_weights");
  m.ori_weights = weights_from(require(j, "orientation_weights", c), n, c + ".orientation_weights");
  m.pos_slopes = weights_from(require(j, "position_slopes", c), n, c + ".position_slopes");
  m.ori_slopes = weights_from(require(j, "orientation_slopes", c), n, c + ".orientation_slopes");
  try {
    m.validate();
  } catch (const Error& e) {
    config_error(std::string("dmp: ") + e.what());
  }
  return m;
}

void save_dmp(const std::filesystem::path& path, const dmp::DmpModel& model) { write_json(path, dmp_to_json(model)); }

dmp::DmpModel load_dmp(const std::filesystem::path& path) {
  return with_file_context(path, [&] { return dmp_from_json(read_json(path)); });
}

Json gmr_to_json(const safety::GmrModel& model) {
  Json comps = Json::array();
  for (const auto& c : model.components) {
    comps.push_back({{"weight", c.weight},
                     {"mean", Json::array({c.mean[0], c.mean[1]})},
                     {"covariance", Json::array({Json::array({c.covariance(0, 0), c.covariance(0, 1)}),
                                                 Json::array({c.covariance(1, 0), c.covariance(1, 1)})})}});
  }
  return {{"format", "rehab-gmr"}, {"version", kGmrFormatVersion}, {"variables", {"s", "f"}}, {"components", comps}};
}

safety::GmrModel gmr_from_json(const Json& j) {
  check_format(j, "rehab-gmr", kGmrFormatVersion);
  const Json& comps = require(j, "components", "gmr");
  if (!comps.is_array() || comps.empty()) config_error("gmr.components: expected a non-empty list");
  safety::GmrModel model;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const std::string c = "gmr.components[" + std::to_string(k) + "]";
    check_keys(comps[k], {"weight", "mean", "covariance"}, c);
    safety::GaussianComponent g;
    g.weight = number(require(comps[k], "weight", c), c + ".weight");
    g.mean = vector_from(require(comps[k], "mean", c), 2, c + ".mean");
    const Json& cov = require(comps[k], "covariance", c);
    if (!cov.is_array() || cov.size() != 2) config_error(c + ".covariance: expected a 2x2 matrix");
    for (int r = 0; r < 2; ++r) g.covariance.row(r) = vector_from(cov[static_cast<std::size_t>(r)], 2, c).transpose();
    model.components.push_back(g);
  }
  try {
    model.validate();
  } catch (const Error& e) {
    config_error(std::string("gmr: ") + e.what());
  }
  return model;
}

void save_gmr(const std::filesystem::path& path, const safety::GmrModel& model) { write_json(path, gmr_to_json(model)); }

safety::GmrModel load_gmr(const std::filesystem::path& path) {
  return with_file_context(path, [&] { return gmr_from_json(read_json(path)); });
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, path.string() + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfigError, path.string() + ": cannot write");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kConfigError, path.string() + ": write failed");
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) config_error("override '" + assignment + "' has an empty path component");
    if (!node->is_object()) config_error("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    pos = dot + 1;
  }
}

sim::Scenario scenario_from_json(const Json& doc, const std::filesystem::path& base_dir,
                                 const ScenarioLoadOptions& options) {
  Json j = doc;
  for (const auto& o : options.overrides) apply_override(j, o);
  check_keys(j, {"version", "name", "dmp", "scale", "tau", "modality", "patient", "safety", "calibration", "dt",
                 "duration_limit", "hold_timeout", "seed", "servo_tau", "base_from_body"},
             "scenario");
  const Json& version = require(j, "version", "scenario");
  if (!version.is_number_integer() || version.get<int>() != kScenarioVersion) {
    config_error("scenario: unsupported version (expected " + std::to_string(kScenarioVersion) + ")");
  }
  sim::Scenario sc;
  sc.name = text_or(j, "name", "", "scenario");
  const Json& dmp_ref = require(j, "dmp", "scenario");
  if (!dmp_ref.is_string()) config_error("scenario.dmp: expected a file path");
  sc.dmp_path = resolve(base_dir, dmp_ref.get<std::string>());
  sc.model = load_dmp(sc.dmp_path);

  if (auto it = j.find("scale"); it != j.end()) {
    check_keys(*it, {"limb_length", "enabled", "start", "goal"}, "scenario.scale");
    const double L = number(require(*it, "limb_length", "scenario.scale"), "scenario.scale.limb_length");
    const bool enabled = it->value("enabled", true);
    sc.patient_limb_length = L;
    if (enabled) {
      std::optional<Pose> start, goal;
      if (it->contains("start")) start = pose_from_json((*it)["start"], "scenario.scale.start");
      if (it->contains("goal")) goal = pose_from_json((*it)["goal"], "scenario.scale.goal");
      try {
        sc.model = dmp::scale_dmp(sc.model, L, start, goal);
      } catch (const Error& e) {
        config_error(std::string("scenario.scale: ") + e.what());
      }
    }
  }
  sc.tau = number_or(j, "tau", 0.0, "scenario");

  if (auto it = j.find("modality"); it != j.end()) {
    if (it->is_string()) {
      sc.modality = tunnel::modality_preset(tunnel::modality_from_string(it->get<std::string>()));
    } else {
      check_keys(*it, {"mode", "gamma", "epsilon", "A_stiff", "k_return"}, "scenario.modality");
      sc.modality = tunnel::modality_preset(
          tunnel::modality_from_string(text_or(*it, "mode", "passive", "scenario.modality")));
      sc.modality.gamma = number_or(*it, "gamma", sc.modality.gamma, "scenario.modality");
      sc.modality.epsilon = number_or(*it, "epsilon", sc.modality.epsilon, "scenario.modality");
      sc.modality.A_stiff = number_or(*it, "A_stiff", sc.modality.A_stiff, "scenario.modality");
      sc.modality.k_return = number_or(*it, "k_return", sc.modality.k_return, "scenario.modality");
    }
  }
  if (auto it = j.find("patient"); it != j.end()) sc.patient = patient_from(*it, "scenario.patient");

  if (auto it = j.find("safety"); it != j.end()) {
    check_keys(*it, {"enabled", "gmr", "n_sigma", "dwell_ticks", "sigma_floor"}, "scenario.safety");
    sc.safety.enabled = it->value("enabled", true);
    sc.safety.n_sigma = number_or(*it, "n_sigma", sc.safety.n_sigma, "scenario.safety");
    sc.safety.dwell_ticks = static_cast<int>(number_or(*it, "dwell_ticks", sc.safety.dwell_ticks, "scenario.safety"));
    sc.safety.sigma_floor = number_or(*it, "sigma_floor", sc.safety.sigma_floor, "scenario.safety");
    if (it->contains("gmr")) sc.safety.gmr_path = resolve(base_dir, (*it)["gmr"].get<std::string>());
    if (sc.safety.enabled && options.load_gmr) {
      if (sc.safety.gmr_path.empty()) config_error("scenario.safety: enabled without a 'gmr' file");
      sc.safety.gmr = load_gmr(sc.safety.gmr_path);
    }
  }
  if (auto it = j.find("calibration"); it != j.end()) {
    check_keys(*it, {"mode", "reps", "patient"}, "scenario.calibration");
    sc.calibration.mode = sim::calibration_mode_from_string(text_or(*it, "mode", "passive", "scenario.calibration"));
    sc.calibration.reps = static_cast<int>(number_or(*it, "reps", 3, "scenario.calibration"));
    if (it->contains("patient")) sc.calibration.patient = patient_from((*it)["patient"], "scenario.calibration.patient");
  }
  sc.dt = number_or(j, "dt", sc.dt, "scenario");
  sc.duration_limit = number_or(j, "duration_limit", sc.duration_limit, "scenario");
  sc.hold_timeout = number_or(j, "hold_timeout", sc.hold_timeout, "scenario");
  sc.servo_tau = number_or(j, "servo_tau", sc.servo_tau, "scenario");
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_unsigned()) config_error("scenario.seed: expected a non-negative integer");
    sc.seed = it->get<std::uint64_t>();
  }
  if (auto it = j.find("base_from_body"); it != j.end()) sc.base_from_body = pose_from_json(*it, "scenario.base_from_body");

  if (options.load_gmr) {
    sc.validate();
  } else {
    auto probe = sc;
    probe.safety.enabled = false;
    probe.validate();
  }
  return sc;
}

sim::Scenario load_scenario(const std::filesystem::path& path, const ScenarioLoadOptions& options) {
  return with_file_context(path, [&] {
    auto sc = scenario_from_json(read_json(path), path.parent_path(), options);
    if (sc.name.empty()) sc.name = path.stem().string();
    return sc;
  });
}

void write_trace(std::ostream& out, const sim::SimTrace& trace) {
  out << kTraceMagic << '\n';
  out << "# scenario=" << trace.scenario << '\n';
  out << "# modality=" << trace.modality << '\n';
  out << "# dt=" << format_double(trace.dt) << '\n';
  out << "# limb_length=" << format_double(trace.limb_length) << '\n';
  out << "# n_sigma=" << format_double(trace.n_sigma) << '\n';
  out << "# seed=" << trace.seed << '\n';
  out << "# termination=" << sim::to_string(trace.termination) << '\n';
  const auto& cols = trace_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  std::string line;
  for (const auto& r : trace.records) {
    line = std::to_string(r.tick);
    for (double v : {r.time, r.s, r.progress}) {
      line += ',';
      line += format_double(v);
    }
    put_pose(line, r.pose_ref);
    put_pose(line, r.pose_cmd);
    put_pose(line, r.tcp);
    for (double v : {r.f_ex.x(), r.f_ex.y(), r.f_ex.z(), r.f_t, r.f_o.x(), r.f_o.y(), r.f_o.z(), r.f_o.norm(),
                     r.u_t.x(), r.u_t.y(), r.u_t.z(), r.deviation}) {
      line += ',';
      line += format_double(v);
    }
    line += ',';
    line += safety::to_string(r.safety_mode);
    line += ',';
    line += safety::to_string(r.directive);
    line += r.in_corridor ? ",1," : ",0,";
    line += format_double(r.corridor_mu);
    line += ',';
    line += format_double(r.corridor_sigma);
    line += r.halted ? ",1\n" : ",0\n";
    out << line;
  }
}

sim::SimTrace read_trace(std::istream& in) {
  sim::SimTrace trace;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kTraceMagic) throw Error(ErrorCode::kParseError, "not a rehab trace (bad header)");
  ++line_no;
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
    break;
  }
  if (header != trace_columns()) throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": unexpected trace columns");
  auto meta_num = [&](const std::string& k, double fallback) {
    auto it = meta.find(k);
    return it == meta.end() ? fallback : parse_double(it->second, 0);
  };
  trace.scenario = meta.count("scenario") ? meta["scenario"] : "";
  trace.modality = meta.count("modality") ? meta["modality"] : "";
  trace.dt = meta_num("dt", sim::kDefaultDt);
  trace.limb_length = meta_num("limb_length", 0.0);
  trace.n_sigma = meta_num("n_sigma", 5.0);
  trace.seed = meta.count("seed") ? std::stoull(meta["seed"]) : 0;
  if (meta.count("termination")) trace.termination = termination_from(meta["termination"]);

  std::vector<std::string_view> cells;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    cells.clear();
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected " +
                                              std::to_string(header.size()) + " columns");
    }
    std::size_t c = 0;
    auto num = [&]() { return parse_double(cells[c++], line_no); };
    // function arguments have no evaluation order, so read each cell in its own statement
    auto vec = [&]() {
      const double x = num();
      const double y = num();
      const double z = num();
      return Vec3(x, y, z);
    };
    auto pose = [&]() {
      const Vec3 p = vec();
      const double w = num();
      const Vec3 v = vec();
      return Pose(p, Quat(w, v.x(), v.y(), v.z()));
    };
    sim::TraceRecord r;
    r.tick = static_cast<std::uint64_t>(num());
    r.time = num();
    r.s = num();
    r.progress = num();
    r.pose_ref = pose();
    r.pose_cmd = pose();
    r.tcp = pose();
    r.f_ex = vec();
    r.f_t = num();
    r.f_o = vec();
    ++c;  // norm, derived
    r.u_t = vec();
    r.deviation = num();
    r.safety_mode = safety_mode_from(cells[c++]);
    r.directive = directive_from(cells[c++]);
    r.in_corridor = cells[c++] == "1";
    r.corridor_mu = num();
    r.corridor_sigma = num();
    r.halted = cells[c++] == "1";
    trace.records.push_back(r);
  }
  return trace;
}

void save_trace(const std::filesystem::path& path, const sim::SimTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfigError, path.string() + ": cannot write");
  write_trace(out, trace);
}

sim::SimTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, path.string() + ": cannot open");
  return with_file_context(path, [&] { return read_trace(in); });
}

void write_samples(std::ostream& out, const std::vector<safety::ForceSample>& samples) {
  out << "s,f\n";
  for (const auto& s : samples) out << format_double(s.s) << ',' << format_double(s.f_mag) << '\n';
}

}  // namespace rehab::io
