// rehab: learn -> scale -> calibrate -> run -> report, plus a live session server.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rehab/body_frame.hpp"
#include "rehab/cartesian_dmp.hpp"
#include "rehab/io.hpp"
#include "rehab/patient_sim.hpp"
#include "rehab/telemetry.hpp"

namespace {

using namespace rehab;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

io::ScenarioLoadOptions scenario_options(const Common& c, bool load_gmr = true) {
  io::ScenarioLoadOptions opt;
  opt.overrides = c.overrides;
  if (c.seed) opt.overrides.push_back("seed=" + std::to_string(*c.seed));
  opt.load_gmr = load_gmr;
  return opt;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfigError, path + ": cannot write");
  out << text;
}

std::string fmt(double v) { return io::format_double(v); }

// learn ---------------------------------------------------------------------

struct LearnArgs {
  std::string keypoints;
  std::string side = "right";
  int n_basis = dmp::kDefaultBasisCount;
  std::size_t window = body::kDefaultFilterWindow;
  double power = body::kDefaultFilterPower;
  double limb_length = 0.0;
  std::string report;
};

int cmd_learn(const LearnArgs& a, const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::kConfigError, "learn needs --out");
  const auto side = body::side_from_string(a.side);
  const auto frames = body::load_keypoint_stream(a.keypoints);
  const auto smoothed = body::smooth_keypoint_stream(frames, a.window, a.power);
  const auto wrist = body::extract_wrist_trajectory(smoothed, side);
  const auto demo = body::to_body_frame(wrist, smoothed, side);
  const double L = a.limb_length > 0.0 ? a.limb_length : body::estimate_limb_length(frames, side).limb_length;

  dmp::FitOptions fo;
  fo.n_basis = a.n_basis;
  fo.limb_length = L;
  const auto model = dmp::fit_dmp(demo, fo);
  const auto repro = dmp::rollout(model, 0.01);
  const double rmse = sim::metric_rmse(demo, repro);
  io::save_dmp(c.out, model);

  io::Json report = {{"model", c.out},
                     {"samples", demo.samples.size()},
                     {"duration_s", demo.duration()},
                     {"n_basis", model.n_basis},
                     {"limb_length_m", L},
                     {"path_distance_m", body::path_distance(demo)},
                     {"reproduction_rmse_m", rmse}};
  if (!a.report.empty()) {
    write_text(a.report, report.dump(2) + "\n");
  }
  std::cout << "model " << c.out << "\n"
            << "samples " << demo.samples.size() << "\n"
            << "limb_length_m " << fmt(L) << "\n"
            << "reproduction_rmse_m " << fmt(rmse) << "\n";
  return 0;
}

// scale ---------------------------------------------------------------------

struct ScaleArgs {
  std::string model;
  double limb_length = 0.0;
  std::vector<double> goal;
};

int cmd_scale(const ScaleArgs& a, const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::kConfigError, "scale needs --out");
  const auto model = io::load_dmp(a.model);
  std::optional<Pose> goal;
  if (!a.goal.empty()) {
    if (a.goal.size() != 3) throw Error(ErrorCode::kConfigError, "--goal takes x y z");
    goal = Pose(Vec3(a.goal[0], a.goal[1], a.goal[2]), model.goal.orientation());
  }
  const auto scaled = dmp::scale_dmp(model, a.limb_length, std::nullopt, goal);
  io::save_dmp(c.out, scaled);
  std::cout << "scaled " << a.model << " from L=" << fmt(model.limb_length) << " to L=" << fmt(a.limb_length)
            << " -> " << c.out << "\n";
  return 0;
}

// calibrate -----------------------------------------------------------------

struct CalibrateArgs {
  std::string scenario;
  int K = 5;
  int reps = 0;
  std::string samples;
};

int cmd_calibrate(const CalibrateArgs& a, const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::kConfigError, "calibrate needs --out");
  const auto sc = io::load_scenario(a.scenario, scenario_options(c, false));
  const int reps = a.reps > 0 ? a.reps : sc.calibration.reps;
  const auto samples = sim::acquire_baseline(sc, sc.calibration.mode, reps);
  if (!a.samples.empty()) {
    std::ostringstream os;
    io::write_samples(os, samples);
    write_text(a.samples, os.str());
  }
  safety::EmReport rep;
  const auto gmr = safety::fit_gmm(samples, a.K, sc.seed, &rep);
  io::save_gmr(c.out, gmr);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "samples " << samples.size() << "\n"
            << "components " << gmr.size() << "\n"
            << "em_iterations " << rep.iterations << (rep.converged ? " (converged)" : " (iteration cap)") << "\n"
            << "log_likelihood " << fmt(rep.log_likelihood.back()) << "\n";
  return 0;
}

// run -----------------------------------------------------------------------

struct RunArgs {
  std::string scenario;
};

int cmd_run(const RunArgs& a, const Common& c) {
  if (c.out.empty()) throw Error(ErrorCode::kConfigError, "run needs --out");
  const auto sc = io::load_scenario(a.scenario, scenario_options(c));
  const auto trace = sim::run_scenario(sc);
  io::save_trace(c.out, trace);
  std::cout << "scenario " << sc.name << "\n"
            << "ticks " << trace.records.size() << "\n"
            << "termination " << sim::to_string(trace.termination) << "\n";
  if (auto t = sim::metric_completion_time(trace)) std::cout << "completion_time_s " << fmt(*t) << "\n";
  return 0;
}

// report --------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> traces;
  std::vector<std::string> metrics;
  std::vector<double> rom_proximal{0.0, 1.0, 0.0};
  std::vector<double> rom_pivot{0.0, 0.0, 0.0};
};

int cmd_report(const ReportArgs& a, const Common& c) {
  static const std::vector<std::string> kAll = {"completion_time", "max_deviation", "reaction_time", "reach_ratio",
                                                "rom"};
  std::vector<std::string> metrics = a.metrics.empty() ? kAll : a.metrics;
  for (const auto& m : metrics) {
    if (std::find(kAll.begin(), kAll.end(), m) == kAll.end()) {
      throw Error(ErrorCode::kConfigError, "unknown metric '" + m + "'");
    }
  }
  if (a.rom_proximal.size() != 3 || a.rom_pivot.size() != 3) {
    throw Error(ErrorCode::kConfigError, "--rom-proximal/--rom-pivot take x y z");
  }
  const Vec3 proximal(a.rom_proximal[0], a.rom_proximal[1], a.rom_proximal[2]);
  const Vec3 pivot(a.rom_pivot[0], a.rom_pivot[1], a.rom_pivot[2]);

  std::ostringstream os;
  os << "trace,limb_length";
  for (const auto& m : metrics) os << ',' << m;
  os << '\n';
  std::vector<double> ratios;
  for (const auto& path : a.traces) {
    const auto trace = io::load_trace(path);
    os << path << ',' << fmt(trace.limb_length);
    for (const auto& m : metrics) {
      os << ',';
      if (m == "completion_time") {
        auto t = sim::metric_completion_time(trace);
        os << (t ? fmt(*t) : "NA");
      } else if (m == "max_deviation") {
        os << fmt(sim::metric_max_deviation(trace));
      } else if (m == "reaction_time") {
        auto t = sim::metric_reaction_time(trace);
        os << (t ? fmt(*t) : "NA");
      } else if (m == "reach_ratio") {
        const double r = sim::metric_reach_ratio(trace);
        ratios.push_back(r);
        os << fmt(r);
      } else if (m == "rom") {
        os << fmt(sim::metric_rom(trace, proximal, pivot));
      }
    }
    os << '\n';
  }
  if (ratios.size() > 1) {
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= static_cast<double>(ratios.size());
    os << "# reach_ratio_mean=" << fmt(mean) << "\n# reach_ratio_spread=" << fmt((*hi - *lo) / mean) << "\n";
  }
  write_text(c.out, os.str());
  return 0;
}

// serve ---------------------------------------------------------------------

struct ServeArgs {
  std::string scenario;
  int port = 8765;
  int decimation = telemetry::kDefaultDecimation;
  std::uint64_t max_ticks = 0;
};

telemetry::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const ServeArgs& a, const Common& c) {
  auto sc = io::load_scenario(a.scenario, scenario_options(c));
  telemetry::Session session(sc, a.decimation);
  telemetry::Server server(session, a.port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
  server.run(a.max_ticks);
  g_server = nullptr;
  if (!c.out.empty()) {
    sim::SimTrace trace;
    trace.records = session.history();
    trace.dt = sc.dt;
    trace.limb_length = sc.limb_length();
    trace.n_sigma = sc.safety.n_sigma;
    trace.seed = sc.seed;
    trace.scenario = sc.name;
    trace.modality = std::string(tunnel::to_string(session.loop().params().mode));
    trace.termination = sim::Termination::kStopped;
    io::save_trace(c.out, trace);
  }
  return 0;
}

void add_out(CLI::App* app, Common& c, bool required) {
  auto* opt = app->add_option("--out,-o", c.out, "Output file");
  if (required) opt->required();
}

void add_scenario_flags(CLI::App* app, Common& c) {
  app->add_option("--override", c.overrides, "Scenario override key=value (dotted path)")->take_all();
  app->add_option("--seed", c.seed, "Override the scenario seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exercise learning, scaling, calibration and simulation"};
  app.require_subcommand(1);
  Common common;

  LearnArgs learn;
  auto* l = app.add_subcommand("learn", "Fit a DMP to a keypoint recording");
  l->add_option("keypoints", learn.keypoints, "Keypoint stream (JSON lines)")->required()->check(CLI::ExistingFile);
  l->add_option("--side", learn.side, "Tracked arm (left|right)")->check(CLI::IsMember({"left", "right"}));
  l->add_option("--n-basis", learn.n_basis, "Basis functions per dimension");
  l->add_option("--filter-window", learn.window, "Smoothing window (samples)")->check(CLI::PositiveNumber);
  l->add_option("--filter-power", learn.power, "Smoothing recency exponent")->check(CLI::NonNegativeNumber);
  l->add_option("--limb-length", learn.limb_length, "Demonstrator limb length (m); estimated when omitted");
  l->add_option("--report", learn.report, "Write the fitting report (JSON)");
  add_out(l, common, true);

  ScaleArgs scale;
  auto* s = app.add_subcommand("scale", "Rescale a DMP to a patient limb length");
  s->add_option("model", scale.model, "DMP model")->required()->check(CLI::ExistingFile);
  s->add_option("--limb-length,-L", scale.limb_length, "Patient limb length (m)")->required();
  s->add_option("--goal", scale.goal, "Explicit goal position x y z (body frame)")->expected(3);
  add_out(s, common, true);

  CalibrateArgs cal;
  auto* k = app.add_subcommand("calibrate", "Record a force baseline and fit the GMR corridor");
  k->add_option("scenario", cal.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  k->add_option("-K,--components", cal.K, "Mixture components")->check(CLI::PositiveNumber);
  k->add_option("--reps", cal.reps, "Calibration repetitions (default from scenario)");
  k->add_option("--samples", cal.samples, "Also write the (s, f) samples as CSV");
  add_out(k, common, true);
  add_scenario_flags(k, common);

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run a scenario and write its trace");
  r->add_option("scenario", run.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  add_out(r, common, true);
  add_scenario_flags(r, common);

  ReportArgs report;
  auto* p = app.add_subcommand("report", "Compute metrics over one or more traces");
  p->add_option("traces", report.traces, "Trace files")->required()->check(CLI::ExistingFile);
  p->add_option("--metrics", report.metrics, "Subset of metrics")->delimiter(',');
  p->add_option("--rom-proximal", report.rom_proximal, "Proximal landmark for ROM (body frame)")->expected(3);
  p->add_option("--rom-pivot", report.rom_pivot, "Pivot landmark for ROM (body frame)")->expected(3);
  add_out(p, common, false);

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Run a live session over TCP");
  v->add_option("scenario", serve.scenario, "Scenario skeleton")->required()->check(CLI::ExistingFile);
  v->add_option("--port", serve.port, "TCP port on 127.0.0.1 (0 picks one)");
  v->add_option("--decimation", serve.decimation, "Ticks per published snapshot")->check(CLI::PositiveNumber);
  v->add_option("--max-ticks", serve.max_ticks, "Stop after this many ticks (0 = until interrupted)");
  add_out(v, common, false);
  add_scenario_flags(v, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (l->parsed()) return cmd_learn(learn, common);
    if (s->parsed()) return cmd_scale(scale, common);
    if (k->parsed()) return cmd_calibrate(cal, common);
    if (r->parsed()) return cmd_run(run, common);
    if (p->parsed()) return cmd_report(report, common);
    if (v->parsed()) return cmd_serve(serve, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const bool config = e.code() == ErrorCode::kConfigError || e.code() == ErrorCode::kParseError;
    return config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
