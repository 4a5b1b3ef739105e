#include <doctest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "rehab/io.hpp"
#include "support.hpp"

using namespace rehab;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  static const auto dir = testing::scratch_dir("cli_io");
  const std::string cmd = std::string(REHAB_CLI) + " " + args + " >" + (dir / "out").string() + " 2>" +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "out");
  r.err = slurp(dir / "err");
  return r;
}

std::string src(const std::string& rel) { return (testing::source_dir() / rel).string(); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(run("").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("run").code == 2);
  const auto dir = testing::scratch_dir("cli_codes");
  CHECK(run("run " + (dir / "absent.json").string() + " -o " + (dir / "t.csv").string()).code == 2);
  std::ofstream(dir / "broken.json") << "{ \"version\": 1,";
  const auto broken = run("run " + (dir / "broken.json").string() + " -o " + (dir / "t.csv").string());
  CHECK(broken.code == 2);
  CHECK(broken.err.find("parse-error") != std::string::npos);
  const auto unknown = run("run " + src("scenarios/passive_baseline.json") + " --override colour=red -o " +
                           (dir / "t.csv").string());
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("config-error") != std::string::npos);
}

TEST_CASE("missing hip is a runtime error naming the landmark") {
  const auto dir = testing::scratch_dir("cli_hip");
  std::ifstream in(src("data/keypoints/abduction_demo.jsonl"));
  std::ofstream out(dir / "nohip.jsonl");
  std::string line;
  for (int i = 0; std::getline(in, line); ++i) {
    if (i == 3) {
      auto j = io::Json::parse(line);
      j["keypoints"].erase("right_hip");
      line = j.dump();
    }
    out << line << '\n';
  }
  out.close();
  const auto r = run("learn " + (dir / "nohip.jsonl").string() + " -o " + (dir / "m.json").string());
  CHECK(r.code == 3);
  CHECK(r.err.find("missing-required-landmark") != std::string::npos);
  CHECK(r.err.find("frame 3") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "m.json"));
}

TEST_CASE("learn is idempotent and matches the shipped model") {
  const auto dir = testing::scratch_dir("cli_learn");
  const std::string kp = src("data/keypoints/abduction_demo.jsonl");
  const auto a = run("learn " + kp + " -o " + (dir / "a.json").string() + " --report " + (dir / "r.json").string());
  REQUIRE(a.code == 0);
  const auto b = run("learn " + kp + " -o " + (dir / "b.json").string());
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK(slurp(dir / "a.json") == slurp(src("data/models/abduction_demo.json")));
  const auto report = io::read_json(dir / "r.json");
  CHECK(report["reproduction_rmse_m"].get<double>() < 0.005);
  CHECK(report["limb_length_m"].get<double>() == doctest::Approx(0.61).epsilon(1e-9));
}

TEST_CASE("scale, run and report") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const auto m = (dir / "scaled.json").string();
  REQUIRE(run("scale " + src("data/models/abduction_demo.json") + " -L 0.5 -o " + m).code == 0);
  CHECK(io::load_dmp(m).limb_length == 0.5);
  CHECK(run("scale " + src("data/models/abduction_demo.json") + " -L -1 -o " + m).code == 3);

  const auto t1 = (dir / "t1.csv").string();
  const auto t2 = (dir / "t2.csv").string();
  REQUIRE(run("run " + src("scenarios/reach_L50.json") + " -o " + t1).code == 0);
  REQUIRE(run("run " + src("scenarios/reach_L50.json") + " -o " + t2).code == 0);
  CHECK(slurp(t1) == slurp(t2));

  const auto r = run("report " + t1 + " --metrics reach_ratio,completion_time");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("trace,limb_length,reach_ratio,completion_time") != std::string::npos);
  const auto trace = io::load_trace(t1);
  CHECK(r.out.find(io::format_double(sim::metric_reach_ratio(trace))) != std::string::npos);
  CHECK(run("report " + t1 + " --metrics nonsense").code == 2);
}

TEST_CASE("calibrate is deterministic") {
  const auto dir = testing::scratch_dir("cli_cal");
  const auto args = "calibrate " + src("scenarios/spasm.json") + " -K 3 --reps 1 -o ";
  REQUIRE(run(args + (dir / "a.json").string()).code == 0);
  REQUIRE(run(args + (dir / "b.json").string()).code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK_NOTHROW(io::load_gmr(dir / "a.json").validate());
}

TEST_CASE("spasm run matches the golden trace") {
  const auto dir = testing::scratch_dir("cli_golden");
  REQUIRE(run("run " + src("scenarios/spasm.json") + " -o " + (dir / "spasm.csv").string()).code == 0);
  const auto got = io::load_trace(dir / "spasm.csv");
  const auto want = io::load_trace(testing::source_dir() / "tests/golden/spasm_trace.csv");
  CHECK(got.termination == want.termination);
  REQUIRE(got.records.size() == want.records.size());
  double worst = 0.0;
  int mismatched_flags = 0;
  for (std::size_t i = 0; i < got.records.size(); ++i) {
    const auto& a = got.records[i];
    const auto& b = want.records[i];
    worst = std::max({worst, std::abs(a.s - b.s), (a.tcp.position() - b.tcp.position()).norm(),
                      (a.pose_cmd.position() - b.pose_cmd.position()).norm(), (a.f_ex - b.f_ex).norm(),
                      std::abs(a.corridor_mu - b.corridor_mu), std::abs(a.deviation - b.deviation)});
    mismatched_flags += a.safety_mode != b.safety_mode || a.directive != b.directive || a.in_corridor != b.in_corridor;
  }
  CHECK(worst <= 1e-9);
  CHECK(mismatched_flags == 0);
}

}
