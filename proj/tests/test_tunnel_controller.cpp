#include <doctest.h>

#include "rehab/synthetic_subject.hpp"
#include "rehab/tunnel_controller.hpp"
#include "support.hpp"

using namespace rehab;
using namespace rehab::tunnel;

namespace {

// Straight reach along +x: the tangent is fixed, so the tunnel dynamics reduce
// to a scalar recursion.
dmp::DmpModel line_model() {
  TimedTrajectory demo;
  for (int i = 0; i <= 1000; ++i) {
    const double t = 0.01 * i;
    demo.samples.push_back({t, Pose(Vec3(0.4 * synth::min_jerk(t / 10.0), 0.0, 0.0), Quat::Identity())});
  }
  return dmp::fit_dmp(demo, 15);
}

dmp::DmpModel arc_model() {
  synth::Subject subject;
  synth::Motion motion{synth::Exercise::kShoulderAbduction, 0.3, 1.07, 10.0};
  dmp::FitOptions opt;
  opt.limb_length = 0.61;
  return dmp::fit_dmp(synth::wrist_path(subject, motion, 0.02), opt);
}

}  // namespace

TEST_SUITE("tunnel_controller") {

TEST_CASE("decomposition is exact") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 20.0);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 f(n(rng), n(rng), n(rng));
    const Vec3 v(n(rng), n(rng), n(rng));
    const auto split = decompose_force(f, v, Vec3::UnitX());
    CHECK((split.f_t * split.u_t + split.f_o - f).norm() < 1e-9);
    CHECK(std::abs(split.f_o.dot(split.u_t)) < 1e-9);
    CHECK(std::abs(split.u_t.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("slow references hold the previous tangent") {
  const Vec3 last = Vec3(0, 1, 1).normalized();
  const auto split = decompose_force(Vec3(1, 2, 3), Vec3(1e-7, 0, 0), last);
  CHECK(split.u_t == last);
  CHECK(split.f_t == doctest::Approx(5.0 / std::sqrt(2.0)));
}

TEST_CASE("wall velocity") {
  auto p = modality_preset(Modality::kAssisted);
  const Vec3 v = wall_velocity(Vec3(0, 0, 7.4), p, Vec3(0, 0, 0.01));
  CHECK((v - Vec3(0, 0, 0.005 * 7.4 - 0.01)).norm() < 1e-15);
}

TEST_CASE("presets and validation") {
  const auto a = modality_preset(Modality::kAssisted);
  CHECK(a.gamma == 0.08);
  CHECK(a.epsilon == 0.001);
  const auto r = modality_preset(Modality::kResistive);
  CHECK(r.gamma == 0.005);
  const auto p = modality_preset(Modality::kPassive);
  CHECK(p.gamma == 0.0);
  CHECK(p.epsilon == 1.0);
  for (const auto& m : {a, r, p}) {
    CHECK(m.A_stiff == 0.005);
    CHECK(m.k_return == 1.0);
    CHECK(modality_from_string(to_string(m.mode)) == m.mode);
  }
  auto bad = p;
  bad.gamma = 0.01;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = a;
  bad.A_stiff = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(modality_from_string("turbo"), Error);
}

TEST_CASE("orthogonal push follows the first-order recursion") {
  const auto m = line_model();
  const auto params = modality_preset(Modality::kPassive);
  auto st = ControllerState::initial(m, params);
  const double dt = 0.01;
  const Vec3 push(0, 0, 7.4);
  double d = 0.0;
  for (int k = 0; k < 400; ++k) {
    const auto r = control_step(m, st, params, push, dt);
    d = d + (0.005 * 7.4 - d) * dt;
    CHECK(std::abs(r.state.deviation.z() - d) < 1e-12);
    CHECK(std::abs(r.state.deviation.x()) < 1e-12);
    st = r.state;
  }
  CHECK(st.deviation.z() == doctest::Approx(0.037 * (1 - std::pow(0.99, 400))).epsilon(1e-9));
  for (int k = 0; k < 500; ++k) st = control_step(m, st, params, Vec3::Zero(), dt).state;
  CHECK(st.deviation.norm() < 0.001);
}

TEST_CASE("deviation stays orthogonal to the tangent and bounded") {
  const auto m = arc_model();
  const auto params = modality_preset(Modality::kAssisted);
  auto st = ControllerState::initial(m, params);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> n(0.0, 1.0);
  const double F = 12.0;
  for (int k = 0; k < 3000; ++k) {
    Vec3 f(n(rng), n(rng), n(rng));
    f = f.normalized() * F * std::abs(std::tanh(n(rng)));
    const auto r = control_step(m, st, params, f, 0.01);
    CHECK(std::abs(r.state.deviation.dot(r.split.u_t)) < 1e-9);
    CHECK(r.split.f_o.norm() <= F + 1e-9);
    CHECK(r.state.deviation.norm() <= 0.005 * F / 1.0 + 1e-9);
    CHECK((r.split.f_t * r.split.u_t + r.split.f_o - f).norm() < 1e-9);
    st = r.state;
  }
}

TEST_CASE("passive phase ignores the force history") {
  const auto m = arc_model();
  const auto params = modality_preset(Modality::kPassive);
  std::vector<double> reference;
  auto st = ControllerState::initial(m, params);
  for (int k = 0; k < 800; ++k) {
    st = control_step(m, st, params, Vec3::Zero(), 0.01).state;
    reference.push_back(st.canonical.s);
  }
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int trial = 0; trial < 3; ++trial) {
    auto other = ControllerState::initial(m, params);
    for (int k = 0; k < 800; ++k) {
      other = control_step(m, other, params, Vec3(n(rng), n(rng), n(rng)), 0.01).state;
      CHECK(std::memcmp(&other.canonical.s, &reference[k], sizeof(double)) == 0);
    }
  }
}

TEST_CASE("no force, no drift") {
  const auto m = arc_model();
  const auto params = modality_preset(Modality::kPassive);
  auto st = ControllerState::initial(m, params);
  for (int k = 0; k < 1200; ++k) {
    const auto r = control_step(m, st, params, Vec3::Zero(), 0.01);
    CHECK((r.command.pose_cmd.position() - r.reference.pose_ref.position()).norm() <= 1e-9);
    st = r.state;
  }
}

TEST_CASE("pushing harder finishes sooner") {
  const auto m = arc_model();
  const auto params = modality_preset(Modality::kAssisted);
  auto ticks_to_finish = [&](double f_t) {
    auto st = ControllerState::initial(m, params);
    for (int k = 1; k < 200000; ++k) {
      const auto r0 = control_step(m, st, params, Vec3::Zero(), 0.01);
      const Vec3 f = f_t * r0.split.u_t;
      st = control_step(m, st, params, f, 0.01).state;
      if (dmp::progress(st.canonical) >= 1.0) return k;
    }
    return -1;
  };
  const int fast = ticks_to_finish(20.0);
  const int mid = ticks_to_finish(10.0);
  const int slow = ticks_to_finish(5.0);
  CHECK(fast > 0);
  CHECK(fast <= mid);
  CHECK(mid <= slow);
}

TEST_CASE("new gains keep phase and deviation") {
  const auto m = arc_model();
  auto st = ControllerState::initial(m, modality_preset(Modality::kPassive));
  for (int k = 0; k < 100; ++k) st = control_step(m, st, modality_preset(Modality::kPassive), Vec3(0, 0, 5), 0.01).state;
  const auto next = with_params(st, modality_preset(Modality::kResistive));
  CHECK(next.canonical.s == st.canonical.s);
  CHECK(next.deviation == st.deviation);
  CHECK(next.canonical.gamma == 0.005);
  CHECK_THROWS_AS(control_step(m, st, modality_preset(Modality::kPassive), Vec3::Zero(), 0.0), Error);
}

}
