#include <doctest.h>

#include "rehab/cartesian_dmp.hpp"
#include "rehab/patient_sim.hpp"
#include "rehab/synthetic_subject.hpp"
#include "support.hpp"

using namespace rehab;
using namespace rehab::dmp;

namespace {

TimedTrajectory abduction_demo(double duration = 10.0, double dt = 0.02) {
  synth::Subject subject;
  synth::Motion motion{synth::Exercise::kShoulderAbduction, 0.3, 1.07, duration};
  return synth::wrist_path(subject, motion, dt);
}

DmpModel abduction_model() {
  FitOptions opt;
  opt.limb_length = 0.61;
  return fit_dmp(abduction_demo(), opt);
}


}  // namespace

TEST_SUITE("cartesian_dmp") {

TEST_CASE("phase decays exponentially at constant rate") {
  CanonicalState c;
  c.tau = 1.0;
  for (int k = 0; k < 100; ++k) c = step_canonical(c, 0.0, 0.01);
  CHECK(std::abs(c.s - std::exp(-1.0)) < 1e-9);

  CanonicalState d;
  d.tau = 2.0;
  d.gamma = 0.1;
  d.epsilon = 0.5;
  const auto e = step_canonical(d, 3.0, 0.4);  // rate 0.8
  CHECK(e.s == doctest::Approx(std::exp(-0.8 * 0.4 / 2.0)).epsilon(1e-15));
}

TEST_CASE("phase is frozen bitwise when the rate clamps to zero") {
  CanonicalState c;
  c.s = 0.3721;
  c.gamma = 0.08;
  c.epsilon = 0.001;
  for (double f : {-0.001 / 0.08, -1.0, -50.0}) {
    const auto n = step_canonical(c, f, 0.01);
    CHECK(std::memcmp(&n.s, &c.s, sizeof(double)) == 0);
    CHECK(phase_rate(c, f) == 0.0);
  }
  CHECK(phase_rate(c, 10.0) == doctest::Approx(0.801));
}

TEST_CASE("phase never increases") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> f(-100.0, 100.0);
  CanonicalState c;
  c.gamma = 0.05;
  c.epsilon = 0.01;
  for (int k = 0; k < 20000; ++k) {
    const double ft = f(rng);
    const auto n = step_canonical(c, ft, 0.01);
    CHECK(n.s <= c.s);
    CHECK((n.s == c.s) == (phase_rate(c, ft) == 0.0));
    c = n;
    if (c.s < 1e-200) c.s = 1.0;
  }
}

TEST_CASE("canonical parameters are validated") {
  CanonicalState c;
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.gamma = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(step_canonical(CanonicalState{}, 0.0, 0.0), Error);
}

TEST_CASE("progress maps the phase onto [0, 1]") {
  CHECK(progress(1.0, 0.01) == 0.0);
  CHECK(progress(0.1, 0.01) == doctest::Approx(0.5));
  CHECK(progress(0.001, 0.01) == 1.0);
}

TEST_CASE("forcing evaluates the normalized local linear models") {
  auto m = abduction_model();
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int j = 0; j < m.n_basis; ++j) {
    for (int d = 0; d < 3; ++d) {
      m.pos_slopes(d, j) = n(rng);
      m.ori_slopes(d, j) = n(rng);
    }
  }
  for (double s : {1.0, 0.7, 0.31, 0.05, 0.011}) {
    double den = 0.0;
    Vec3 num_p = Vec3::Zero(), num_o = Vec3::Zero();
    for (int j = 0; j < m.n_basis; ++j) {
      const double psi = std::exp(-m.widths[j] * (s - m.centers[j]) * (s - m.centers[j]));
      den += psi;
      num_p += psi * (m.pos_weights.col(j) + m.pos_slopes.col(j) * (s - m.centers[j]));
      num_o += psi * (m.ori_weights.col(j) + m.ori_slopes.col(j) * (s - m.centers[j]));
    }
    const Vec3 fp = s * m.amplitude().norm() * num_p / den;
    const Vec3 fo = s * num_o / den;
    CHECK((m.position_forcing(s) - fp).norm() <= 1e-9 * (1.0 + fp.norm()));
    CHECK((m.orientation_forcing(s) - fo).norm() <= 1e-9 * (1.0 + fo.norm()));
  }
}

TEST_CASE("fit reproduces an exercise arc") {
  const auto demo = abduction_demo();
  const auto m = abduction_model();
  CHECK(m.n_basis == kDefaultBasisCount);
  CHECK(m.damping == doctest::Approx(2.0 * std::sqrt(150.0)));
  const auto repro = rollout(m, 0.01);
  CHECK(sim::metric_rmse(demo, repro) < 0.005);
  CHECK((repro.samples.back().pose.position() - m.goal.position()).norm() < 0.005);
  // centers are geometric in the phase
  CHECK(m.centers[0] == 1.0);
  CHECK(m.centers[m.n_basis - 1] == doctest::Approx(m.s_min));
}

TEST_CASE("rollout converges in the sampling step") {
  const auto m = abduction_model();
  const auto coarse = rollout(m, 0.01);
  const auto fine = rollout(m, 0.001);
  double worst = 0.0;
  for (std::size_t i = 0; i < coarse.samples.size() && 10 * i < fine.samples.size(); ++i) {
    CHECK(fine.samples[10 * i].time == doctest::Approx(coarse.samples[i].time));
    worst = std::max(worst, (fine.samples[10 * i].pose.position() - coarse.samples[i].pose.position()).norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("goal convergence and unit orientations") {
  const auto m = abduction_model();
  const auto r = rollout(m, 0.01, 3.0);
  for (const auto& s : r.samples) CHECK(std::abs(s.pose.orientation().norm() - 1.0) < 1e-9);
  CHECK((r.samples.back().pose.position() - m.goal.position()).norm() < 1e-3);
  CHECK((rollout(m, 0.01).samples.back().pose.position() - m.goal.position()).norm() < 1e-3);
  CHECK(angular_distance(r.samples.back().pose.orientation(), m.goal.orientation()) < 1e-3);
}

TEST_CASE("scaling multiplies displacements from the start") {
  const auto m = abduction_model();
  const auto base = rollout(m, 0.01);
  for (double L : {0.55, 0.50, 0.70}) {
    const double lambda = L / 0.61;
    const auto scaled = scale_dmp(m, L);
    CHECK(scaled.limb_length == L);
    CHECK(scaled.pos_weights == m.pos_weights);
    const auto r = rollout(scaled, 0.01);
    REQUIRE(r.samples.size() == base.samples.size());
    const Vec3 y0 = m.start.position();
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      const Vec3 expect = lambda * (base.samples[i].pose.position() - y0);
      const Vec3 got = r.samples[i].pose.position() - y0;
      CHECK((got - expect).norm() <= 1e-6 * std::max(expect.norm(), 1e-3));
    }
  }
  CHECK_THROWS_AS(scale_dmp(m, 0.0), Error);
  auto unsized = m;
  unsized.limb_length = 0.0;
  CHECK_THROWS_AS(scale_dmp(unsized, 0.5), Error);
}

TEST_CASE("explicit goal takes precedence over the limb ratio") {
  const auto m = abduction_model();
  const Pose goal(m.goal.position() + Vec3(0.02, -0.01, 0.0), m.goal.orientation());
  const auto scaled = scale_dmp(m, 0.5, std::nullopt, goal);
  CHECK(scaled.goal.position() == goal.position());
  const auto r = rollout(scaled, 0.01, 3.0);
  CHECK((r.samples.back().pose.position() - goal.position()).norm() < 1e-3);
}

TEST_CASE("query is a no-op when the phase has not decreased") {
  const auto m = abduction_model();
  auto st = DmpIntegrator::at_start(m);
  const double tau = m.system_tau();
  const auto a = dmp_query(m, st, 0.5, -0.5 / tau);
  const auto saved = st;
  const auto b = dmp_query(m, st, 0.5, -0.5 / tau);
  CHECK(st.y == saved.y);
  CHECK(st.z == saved.z);
  CHECK(a.pose_ref.position() == b.pose_ref.position());
  const auto c = dmp_query(m, st, 0.6, -0.6 / tau);
  CHECK(c.pose_ref.position() == a.pose_ref.position());
  // frozen phase means zero velocity
  const auto d = dmp_query(m, st, 0.5, 0.0);
  CHECK(d.v_ref.norm() == 0.0);
}

TEST_CASE("fit errors") {
  auto demo = abduction_demo();
  CHECK_THROWS_AS(fit_dmp(demo, 4), Error);
  demo.frame_id = FrameId::kCamera;
  CHECK_THROWS_AS(fit_dmp(demo), Error);

  TimedTrajectory shortdemo = abduction_demo(1.0, 0.05);
  try {
    fit_dmp(shortdemo, 25);
    FAIL("expected too-few-samples");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTooFewSamples);
  }

  // all samples bunched at the start leave the middle bases without data
  const auto full = abduction_demo(10.0, 0.001);
  TimedTrajectory gap;
  for (std::size_t i = 0; i < 200; ++i) gap.samples.push_back(full.samples[i]);
  gap.samples.push_back(full.samples.back());
  try {
    fit_dmp(gap, 25);
    FAIL("expected rank-deficient-fit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kRankDeficientFit);
  }
}

TEST_CASE("validate rejects malformed models") {
  auto m = abduction_model();
  CHECK_NOTHROW(m.validate());
  auto bad = m;
  bad.pos_weights(0, 3) = NAN;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = m;
  bad.centers.resize(3);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = m;
  bad.tau_demo = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("flat dimensions stay flat") {
  TimedTrajectory demo;
  for (int i = 0; i <= 500; ++i) {
    const double t = 0.01 * i;
    demo.samples.push_back({t, Pose(Vec3(0.3 * synth::min_jerk(t / 5.0), 0.1, 0.2), Quat::Identity())});
  }
  const auto m = fit_dmp(demo, 10);
  // resampling the demo on the phase grid leaves roundoff in the flat targets
  const double active = m.pos_weights.row(0).cwiseAbs().maxCoeff();
  for (int d : {1, 2}) {
    CHECK(m.pos_weights.row(d).cwiseAbs().maxCoeff() < 1e-9 * active);
    CHECK(m.pos_slopes.row(d).cwiseAbs().maxCoeff() < 1e-9 * m.pos_slopes.row(0).cwiseAbs().maxCoeff());
  }
  const auto r = rollout(m, 0.01);
  for (const auto& s : r.samples) {
    CHECK(std::abs(s.pose.position().y() - 0.1) < 1e-12);
  }
}

TEST_CASE("arc returning to its start height is reproduced and scales") {
  TimedTrajectory demo;
  for (int i = 0; i <= 600; ++i) {
    const double t = 0.01 * i;
    const double u = synth::min_jerk(t / 6.0);
    demo.samples.push_back({t, Pose(Vec3(0.2 * std::sin(M_PI * u), 0.3 * u, 0.05 * std::sin(M_PI * u)), Quat::Identity())});
  }
  auto m = fit_dmp(demo, 30);
  m.limb_length = 0.5;
  CHECK_FALSE(m.pos_weights.row(2).isZero(0.0));
  const auto r = rollout(m, 0.01);
  double peak = 0.0;
  for (const auto& s : r.samples) peak = std::max(peak, s.pose.position().z());
  CHECK(peak == doctest::Approx(0.05).epsilon(0.02));

  const auto big = scale_dmp(m, 1.0);
  const auto rb = rollout(big, 0.01);
  REQUIRE(rb.samples.size() == r.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const Vec3 d0 = r.samples[i].pose.position() - m.start.position();
    const Vec3 d1 = rb.samples[i].pose.position() - big.start.position();
    CHECK((d1 - 2.0 * d0).norm() < 1e-6);
  }
}

}
