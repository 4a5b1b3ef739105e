#include "rehab/cartesian_dmp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rehab::dmp {
namespace {

// Largest nominal-time step of the transformation-system integrator, s.
constexpr double kMaxSubstep = 1e-3;
// A basis needs at least this much summed activation over the demo samples.
constexpr double kMinBasisSupport = 0.5;
// psi_i standard deviation is gap / sqrt(2 * kWidthFactor) between neighbouring centers.
constexpr double kWidthFactor = 4.0;

Eigen::VectorXd normalized_activations(const DmpModel& m, double s) {
  Eigen::VectorXd psi(m.n_basis);
  for (int i = 0; i < m.n_basis; ++i) {
    const double d = s - m.centers[i];
    psi[i] = std::exp(-m.widths[i] * d * d);
  }
  const double total = psi.sum();
  if (!(total > 1e-300)) return Eigen::VectorXd::Zero(m.n_basis);
  return psi / total;
}

Vec3 local_models(const DmpModel& m, const WeightMatrix& w, const WeightMatrix& b, double s) {
  const Eigen::VectorXd a = normalized_activations(m, s);
  const Eigen::VectorXd offset = (s - m.centers.array()).matrix();
  return w * a + b * a.cwiseProduct(offset);
}

struct PositionRate {
  Vec3 dy;
  Vec3 dz;
};

PositionRate position_rate(const DmpModel& m, double tau, double s, const Vec3& y, const Vec3& z) {
  const Vec3 forcing = m.position_forcing(s);
  return {z / tau, (m.stiffness * (m.goal.position() - y) - m.damping * z + forcing) / tau};
}

/// Three-point derivative on a non-uniform grid, one-sided at the ends.
template <typename V>
std::vector<V> differentiate(const std::vector<double>& t, const std::vector<V>& f) {
  const std::size_t n = f.size();
  std::vector<V> out(n);
  out[0] = (f[1] - f[0]) / (t[1] - t[0]);
  out[n - 1] = (f[n - 1] - f[n - 2]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h1 = t[i] - t[i - 1];
    const double h2 = t[i + 1] - t[i];
    out[i] = f[i - 1] * (-h2 / (h1 * (h1 + h2))) + f[i] * ((h2 - h1) / (h1 * h2)) +
             f[i + 1] * (h1 / (h2 * (h1 + h2)));
  }
  return out;
}

}  // namespace

void CanonicalState::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be >= 0");
  if (!(gamma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be >= 0");
  if (!(s_min > 0.0 && s_min < 1.0)) throw Error(ErrorCode::kInvalidArgument, "s_min must lie in (0, 1)");
  if (!(s > 0.0 && s <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "phase must lie in (0, 1]");
}

double phase_rate(const CanonicalState& state, double f_t) {
  return std::max(0.0, state.epsilon + state.gamma * f_t);
}

CanonicalState step_canonical(const CanonicalState& state, double f_t, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  CanonicalState next = state;
  const double rate = phase_rate(state, f_t);
  if (rate > 0.0) next.s = state.s * std::exp(-rate * dt / state.tau);
  return next;
}

double progress(double s, double s_min) {
  return std::clamp(std::log(s) / std::log(s_min), 0.0, 1.0);
}

double DmpModel::system_tau() const { return tau_demo / std::log(1.0 / s_min); }

double DmpModel::forcing_scale() const {
  const double chord = amplitude().norm();
  return chord >= kMinAmplitude ? chord : 1.0;
}

Vec3 DmpModel::position_forcing(double s) const {
  return s * forcing_scale() * local_models(*this, pos_weights, pos_slopes, s);
}

Vec3 DmpModel::orientation_forcing(double s) const {
  return s * local_models(*this, ori_weights, ori_slopes, s);
}

void DmpModel::validate() const {
  if (n_basis < kMinBasisCount) throw Error(ErrorCode::kInvalidArgument, "n_basis must be >= 5");
  if (pos_weights.cols() != n_basis || ori_weights.cols() != n_basis || pos_slopes.cols() != n_basis ||
      ori_slopes.cols() != n_basis || centers.size() != n_basis || widths.size() != n_basis) {
    throw Error(ErrorCode::kInvalidArgument, "weight/basis sizes disagree with n_basis");
  }
  if (!(tau_demo > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau_demo must be positive");
  if (!(s_min > 0.0 && s_min < 1.0)) throw Error(ErrorCode::kInvalidArgument, "s_min must lie in (0, 1)");
  if (!(stiffness > 0.0) || !(damping > 0.0)) throw Error(ErrorCode::kInvalidArgument, "gains must be positive");
  if (!(limb_length >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "limb length must be >= 0");
  if (!pos_weights.allFinite() || !ori_weights.allFinite() || !pos_slopes.allFinite() || !ori_slopes.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "non-finite forcing weights");
  }
}

DmpIntegrator DmpIntegrator::at_start(const DmpModel& model) {
  DmpIntegrator st;
  st.s = 1.0;
  st.y = model.start.position();
  st.z = Vec3::Zero();
  st.q = model.start.orientation();
  st.eta = Vec3::Zero();
  return st;
}

ReferenceSample dmp_query(const DmpModel& m, DmpIntegrator& st, double s, double s_dot) {
  if (!(s > 0.0 && s <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "phase must lie in (0, 1]");
  const double tau = m.system_tau();
  if (s < st.s) {
    const double total = tau * std::log(st.s / s);
    const int steps = std::max(1, static_cast<int>(std::ceil(total / kMaxSubstep)));
    const double h = total / steps;
    const double s_start = st.s;
    for (int k = 0; k < steps; ++k) {
      const double s0 = s_start * std::exp(-(k * h) / tau);
      const double s_half = s0 * std::exp(-0.5 * h / tau);
      const double s1 = (k + 1 == steps) ? s : s0 * std::exp(-h / tau);

      // Position channel: classic RK4 with the phase evaluated exactly inside the step.
      const PositionRate k1 = position_rate(m, tau, s0, st.y, st.z);
      const PositionRate k2 = position_rate(m, tau, s_half, st.y + 0.5 * h * k1.dy, st.z + 0.5 * h * k1.dz);
      const PositionRate k3 = position_rate(m, tau, s_half, st.y + 0.5 * h * k2.dy, st.z + 0.5 * h * k2.dz);
      const PositionRate k4 = position_rate(m, tau, s1, st.y + h * k3.dy, st.z + h * k3.dz);
      st.y += (h / 6.0) * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy);
      st.z += (h / 6.0) * (k1.dz + 2.0 * k2.dz + 2.0 * k3.dz + k4.dz);

      // Orientation channel: semi-implicit Euler on the quaternion manifold.
      const Vec3 deta = (m.stiffness * quat_log(m.goal.orientation(), st.q) - m.damping * st.eta +
                         m.orientation_forcing(s_half)) / tau;
      st.eta += h * deta;
      st.q = quat_exp(st.eta * (h / tau)) * st.q;
      st.q.normalize();
      st.s = s1;
    }
    st.q = canonical(st.q);
  }
  ReferenceSample out;
  out.pose_ref = Pose(st.y, st.q);
  const double speed = -s_dot / s;
  out.v_ref = st.z * speed;
  out.omega_ref = st.eta * speed;
  return out;
}

DmpModel fit_dmp(const TimedTrajectory& demo, const FitOptions& options) {
  demo.validate();
  if (demo.frame_id != FrameId::kBody) {
    throw Error(ErrorCode::kInvalidArgument, "demonstrations must be expressed in the body frame");
  }
  if (options.n_basis < kMinBasisCount) throw Error(ErrorCode::kInvalidArgument, "n_basis must be >= 5");
  const std::size_t n = demo.samples.size();
  if (n < 3 * static_cast<std::size_t>(options.n_basis)) {
    throw Error(ErrorCode::kTooFewSamples, std::to_string(n) + " samples for " +
                                               std::to_string(options.n_basis) + " basis functions");
  }
  if (!(options.stiffness > 0.0)) throw Error(ErrorCode::kInvalidArgument, "stiffness must be positive");
  if (!(options.s_min > 0.0 && options.s_min < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "s_min must lie in (0, 1)");
  }

  DmpModel m;
  m.n_basis = options.n_basis;
  m.stiffness = options.stiffness;
  m.damping = 2.0 * std::sqrt(options.stiffness);
  m.s_min = options.s_min;
  m.limb_length = options.limb_length;
  m.tau_demo = demo.duration();
  m.start = demo.samples.front().pose;
  m.goal = demo.samples.back().pose;
  m.frame_id = FrameId::kBody;

  const int nb = m.n_basis;
  const double log_span = std::log(1.0 / m.s_min);
  m.centers.resize(nb);
  m.widths.resize(nb);
  for (int i = 0; i < nb; ++i) m.centers[i] = std::exp(-log_span * i / (nb - 1));
  for (int i = 0; i + 1 < nb; ++i) {
    const double gap = m.centers[i] - m.centers[i + 1];
    m.widths[i] = kWidthFactor / (gap * gap);
  }
  m.widths[nb - 1] = m.widths[nb - 2];

  const double tau = m.system_tau();
  const double t0 = demo.samples.front().time;
  std::vector<double> t(n), s(n);
  std::vector<Vec3> y(n);
  std::vector<Quat> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = demo.samples[i].time - t0;
    s[i] = std::exp(-t[i] / tau);
    y[i] = demo.samples[i].pose.position();
    q[i] = demo.samples[i].pose.orientation();
  }

  const auto vel = differentiate(t, y);
  const auto acc = differentiate(t, vel);

  std::vector<Vec3> omega(n);
  omega[0] = quat_log(q[1], q[0]) / (t[1] - t[0]);
  omega[n - 1] = quat_log(q[n - 1], q[n - 2]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) omega[i] = quat_log(q[i + 1], q[i - 1]) / (t[i + 1] - t[i - 1]);
  const auto omega_dot = differentiate(t, omega);

  const Vec3 g = m.goal.position();
  const double scale = m.forcing_scale();
  const Quat gq = m.goal.orientation();
  const double K = m.stiffness;
  const double D = m.damping;

  // psi[j][i]: activation of basis j at sample i.
  Eigen::MatrixXd psi(nb, static_cast<Eigen::Index>(n));
  for (int j = 0; j < nb; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = s[i] - m.centers[j];
      psi(j, static_cast<Eigen::Index>(i)) = std::exp(-m.widths[j] * d * d);
    }
    if (psi.row(j).sum() < kMinBasisSupport) {
      throw Error(ErrorCode::kRankDeficientFit,
                  "basis " + std::to_string(j) + " has no data support; reduce n_basis");
    }
  }

  std::vector<Vec3> f_p(n), f_o(n);
  for (std::size_t i = 0; i < n; ++i) {
    f_p[i] = tau * tau * acc[i] - K * (g - y[i]) + D * tau * vel[i];
    f_o[i] = tau * tau * omega_dot[i] - K * quat_log(gq, q[i]) + D * tau * omega[i];
  }

  // Weighted least squares of f on [xi, xi * (s - c_j)] per basis and dimension.
  auto local_fit = [&](int j, auto&& xi_of, auto&& f_of, double& w_out, double& b_out) {
    double a11 = 0.0, a12 = 0.0, a22 = 0.0, r1 = 0.0, r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = psi(j, static_cast<Eigen::Index>(i));
      const double x1 = xi_of(i);
      const double x2 = x1 * (s[i] - m.centers[j]);
      const double f = f_of(i);
      a11 += p * x1 * x1;
      a12 += p * x1 * x2;
      a22 += p * x2 * x2;
      r1 += p * x1 * f;
      r2 += p * x2 * f;
    }
    a22 += 1e-12 * a11;  // keeps the slope defined when the support is a single phase value
    const double det = a11 * a22 - a12 * a12;
    w_out = (a22 * r1 - a12 * r2) / det;
    b_out = (a11 * r2 - a12 * r1) / det;
  };

  m.pos_weights = WeightMatrix::Zero(3, nb);
  m.ori_weights = WeightMatrix::Zero(3, nb);
  m.pos_slopes = WeightMatrix::Zero(3, nb);
  m.ori_slopes = WeightMatrix::Zero(3, nb);
  for (int j = 0; j < nb; ++j) {
    for (int d = 0; d < 3; ++d) {
      local_fit(j, [&](std::size_t i) { return s[i] * scale; }, [&](std::size_t i) { return f_p[i][d]; },
                m.pos_weights(d, j), m.pos_slopes(d, j));
      local_fit(j, [&](std::size_t i) { return s[i]; }, [&](std::size_t i) { return f_o[i][d]; },
                m.ori_weights(d, j), m.ori_slopes(d, j));
    }
  }
  m.validate();
  return m;
}

DmpModel scale_dmp(const DmpModel& model, double limb_length_patient, const std::optional<Pose>& start,
                   const std::optional<Pose>& goal) {
  if (!(limb_length_patient > 0.0)) throw Error(ErrorCode::kInvalidArgument, "non-positive limb length");
  if (!(model.limb_length > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "model carries no demonstrator limb length");
  }
  const double lambda = limb_length_patient / model.limb_length;
  DmpModel out = model;
  out.start = start.value_or(model.start);
  if (goal) {
    out.goal = *goal;
  } else {
    const Quat chord_rotation = model.goal.orientation() * model.start.orientation().conjugate();
    out.goal = Pose(out.start.position() + lambda * model.amplitude(), chord_rotation * out.start.orientation());
  }
  out.limb_length = limb_length_patient;
  out.validate();
  return out;
}

TimedTrajectory rollout(const DmpModel& model, double dt, double settle_time) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  model.validate();
  const double tau = model.system_tau();
  DmpIntegrator st = DmpIntegrator::at_start(model);
  TimedTrajectory out;
  out.frame_id = model.frame_id;
  out.samples.push_back({0.0, model.start});
  const double s_dot_per_s = -1.0 / tau;
  double reached_at = -1.0;
  for (long k = 1;; ++k) {
    const double t = k * dt;
    const double s = std::exp(-t / tau);
    const ReferenceSample ref = dmp_query(model, st, s, s_dot_per_s * s);
    out.samples.push_back({t, ref.pose_ref});
    if (reached_at < 0.0 && s <= model.s_min * (1.0 + 1e-9)) reached_at = t;
    if (reached_at >= 0.0 && t >= reached_at + settle_time - 1e-12) break;
  }
  return out;
}

}  // namespace rehab::dmp
