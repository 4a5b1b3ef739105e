#include <doctest.h>

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rehab/io.hpp"
#include "support.hpp"

using namespace rehab;
using io::Json;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

template <typename M>
bool same_bits(const M& a, const M& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!same_bits(a.data()[i], b.data()[i])) return false;
  }
  return true;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kInvalidArgument;
}

Json scenario_doc() { return io::read_json(testing::source_dir() / "scenarios/passive_baseline.json"); }

}  // namespace

TEST_SUITE("io") {

TEST_CASE("doubles print in shortest round-trip form") {
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int i = 0; i < 20000; ++i) {
    std::uint64_t b = bits(rng);
    double v;
    std::memcpy(&v, &b, sizeof v);
    if (!std::isfinite(v)) continue;
    const std::string s = io::format_double(v);
    double back = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    CHECK(same_bits(v, back));
  }
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(2.0) == "2");
}

TEST_CASE("dmp models round trip bit for bit") {
  const auto m = io::load_dmp(testing::source_dir() / "data/models/abduction_demo.json");
  const auto back = io::dmp_from_json(Json::parse(io::dmp_to_json(m).dump()));
  CHECK(same_bits(m.pos_weights, back.pos_weights));
  CHECK(same_bits(m.ori_weights, back.ori_weights));
  CHECK(same_bits(m.pos_slopes, back.pos_slopes));
  CHECK(same_bits(m.ori_slopes, back.ori_slopes));
  CHECK(same_bits(m.centers, back.centers));
  CHECK(same_bits(m.widths, back.widths));
  CHECK(same_bits(m.start.position(), back.start.position()));
  CHECK(same_bits(m.goal.orientation().coeffs(), back.goal.orientation().coeffs()));
  CHECK(same_bits(m.tau_demo, back.tau_demo));
  CHECK(same_bits(m.limb_length, back.limb_length));

  const auto dir = testing::scratch_dir("dmp");
  io::save_dmp(dir / "m.json", back);
  std::ifstream a(testing::source_dir() / "data/models/abduction_demo.json"), b(dir / "m.json");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("dmp documents are checked") {
  auto j = io::dmp_to_json(io::load_dmp(testing::source_dir() / "data/models/abduction_demo.json"));
  auto bad = j;
  bad["format"] = "other";
  CHECK_THROWS_AS(io::dmp_from_json(bad), Error);
  bad = j;
  bad["version"] = 99;
  CHECK_THROWS_AS(io::dmp_from_json(bad), Error);
  bad = j;
  bad["position_weights"][0].erase(0);
  CHECK_THROWS_AS(io::dmp_from_json(bad), Error);
  bad = j;
  bad.erase("goal");
  CHECK_THROWS_AS(io::dmp_from_json(bad), Error);
}

TEST_CASE("gmr models round trip") {
  const auto g = io::load_gmr(testing::source_dir() / "data/models/spasm_gmr.json");
  g.validate();
  const auto back = io::gmr_from_json(Json::parse(io::gmr_to_json(g).dump()));
  REQUIRE(back.size() == g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(same_bits(g.components[k].weight, back.components[k].weight));
    CHECK(same_bits(g.components[k].mean, back.components[k].mean));
    CHECK(same_bits(g.components[k].covariance, back.components[k].covariance));
  }
  auto j = io::gmr_to_json(g);
  j["components"][0]["weight"] = 2.0;
  CHECK_THROWS_AS(io::gmr_from_json(j), Error);
}

TEST_CASE("json read errors carry the file") {
  const auto dir = testing::scratch_dir("json");
  std::ofstream(dir / "bad.json") << "{\n  \"a\": 1,\n  oops\n}\n";
  try {
    io::read_json(dir / "bad.json");
    FAIL("expected parse-error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseError);
    CHECK(std::string(e.what()).find("bad.json") != std::string::npos);
  }
  CHECK_THROWS_AS(io::read_json(dir / "missing.json"), Error);
}

TEST_CASE("overrides address nested keys") {
  Json doc = {{"a", {{"b", 1}}}};
  io::apply_override(doc, "a.b=2.5");
  CHECK(doc["a"]["b"] == 2.5);
  io::apply_override(doc, "a.c=assisted");
  CHECK(doc["a"]["c"] == "assisted");
  io::apply_override(doc, "x.y.z=[1,2]");
  CHECK(doc["x"]["y"]["z"] == Json::array({1, 2}));
  io::apply_override(doc, "a.d=true");
  CHECK(doc["a"]["d"] == true);
  CHECK(code_of([&] { io::apply_override(doc, "novalue"); }) == ErrorCode::kConfigError);
  CHECK(code_of([&] { io::apply_override(doc, "a..b=1"); }) == ErrorCode::kConfigError);
  CHECK(code_of([&] { io::apply_override(doc, "a.b.c=1"); }) == ErrorCode::kConfigError);
}

TEST_CASE("every shipped scenario loads") {
  for (const auto& entry : std::filesystem::directory_iterator(testing::source_dir() / "scenarios")) {
    CAPTURE(entry.path());
    CHECK_NOTHROW(io::load_scenario(entry.path()));
  }
}

TEST_CASE("scenario fields and overrides") {
  const auto base = testing::source_dir() / "scenarios";
  const auto sc = io::scenario_from_json(scenario_doc(), base);
  CHECK(sc.modality.mode == tunnel::Modality::kPassive);
  CHECK(sc.modality.epsilon == 0.5);
  CHECK(sc.dt == 0.01);

  io::ScenarioLoadOptions opt;
  opt.overrides = {"modality=assisted", "seed=42", "dt=0.005"};
  const auto o = io::scenario_from_json(scenario_doc(), base, opt);
  CHECK(o.modality.mode == tunnel::Modality::kAssisted);
  CHECK(o.modality.gamma == 0.08);
  CHECK(o.seed == 42);
  CHECK(o.dt == 0.005);

  const auto scaled = io::load_scenario(base / "reach_L50.json");
  CHECK(scaled.model.limb_length == 0.5);
  const auto unscaled = io::load_scenario(base / "reach_L50_unscaled.json");
  CHECK(unscaled.model.limb_length == 0.61);
  CHECK(unscaled.limb_length() == 0.5);

  const auto spasm = io::load_scenario(base / "spasm.json");
  CHECK(spasm.safety.enabled);
  CHECK(spasm.safety.gmr.size() > 0);
  CHECK(spasm.patient.spikes.size() == 1);
  CHECK(spasm.patient.spikes[0].trigger == sim::Trigger::kProgress);
}

TEST_CASE("scenario errors are config errors") {
  const auto base = testing::source_dir() / "scenarios";
  auto doc = scenario_doc();
  doc["colour"] = "red";
  CHECK(code_of([&] { io::scenario_from_json(doc, base); }) == ErrorCode::kConfigError);
  doc = scenario_doc();
  doc["version"] = 2;
  CHECK(code_of([&] { io::scenario_from_json(doc, base); }) == ErrorCode::kConfigError);
  doc = scenario_doc();
  doc["modality"] = "turbo";
  CHECK_THROWS_AS(io::scenario_from_json(doc, base), Error);
  doc = scenario_doc();
  doc["patient"] = {{"kind", "scripted"}, {"segments", {{{"start", 0}, {"duration", 2}}, {{"start", 1}, {"duration", 2}}}}};
  CHECK(code_of([&] { io::scenario_from_json(doc, base); }) == ErrorCode::kConfigError);
  doc = scenario_doc();
  doc["dmp"] = "nowhere.json";
  CHECK_THROWS_AS(io::scenario_from_json(doc, base), Error);
  doc = scenario_doc();
  doc.erase("dmp");
  CHECK(code_of([&] { io::scenario_from_json(doc, base); }) == ErrorCode::kConfigError);
}

TEST_CASE("traces round trip") {
  auto sc = io::load_scenario(testing::source_dir() / "scenarios/spasm.json");
  sc.duration_limit = 6.0;
  const auto trace = sim::run_scenario(sc);
  std::ostringstream os;
  io::write_trace(os, trace);
  std::istringstream is(os.str());
  const auto back = io::read_trace(is);
  CHECK(back.scenario == trace.scenario);
  CHECK(back.modality == trace.modality);
  CHECK(back.termination == trace.termination);
  CHECK(back.seed == trace.seed);
  REQUIRE(back.records.size() == trace.records.size());
  bool any_reverse = false;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& a = trace.records[i];
    const auto& b = back.records[i];
    CHECK(same_bits(a.s, b.s));
    CHECK(same_bits(a.tcp.position(), b.tcp.position()));
    CHECK(same_bits(a.pose_cmd.orientation().coeffs(), b.pose_cmd.orientation().coeffs()));
    CHECK(same_bits(a.f_ex, b.f_ex));
    CHECK(same_bits(a.corridor_sigma, b.corridor_sigma));
    CHECK(a.safety_mode == b.safety_mode);
    CHECK(a.directive == b.directive);
    CHECK(a.in_corridor == b.in_corridor);
    any_reverse |= a.directive == safety::DirectiveKind::kReverseTo;
  }
  CHECK(any_reverse);
  std::ostringstream again;
  io::write_trace(again, back);
  CHECK(again.str() == os.str());
}

TEST_CASE("malformed traces") {
  std::istringstream none("tick,time\n");
  CHECK(code_of([&] { io::read_trace(none); }) == ErrorCode::kParseError);
  auto sc = io::load_scenario(testing::source_dir() / "scenarios/passive_baseline.json");
  sc.duration_limit = 0.05;
  std::ostringstream os;
  io::write_trace(os, sim::run_scenario(sc));
  std::string text = os.str();
  text.replace(text.rfind(','), 1, ";");
  std::istringstream broken(text);
  CHECK(code_of([&] { io::read_trace(broken); }) == ErrorCode::kParseError);
}

TEST_CASE("sample dump") {
  std::ostringstream os;
  io::write_samples(os, {{1.0, 2.5}, {0.5, 3.0}});
  CHECK(os.str() == "s,f\n1,2.5\n0.5,3\n");
}

}
