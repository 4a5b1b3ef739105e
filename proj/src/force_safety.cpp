#include "rehab/force_safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace rehab::safety {
namespace {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

double log_gauss2(const Vec2& x, const Vec2& mean, const Mat2& cov) {
  const double det = cov.determinant();
  const Vec2 d = x - mean;
  const double maha = d.dot(cov.inverse() * d);
  return -0.5 * maha - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det);
}

double log_gauss1(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * d * d / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Raises eigenvalues below kMinEigenvalue; returns true if anything changed.
bool enforce_spd(Mat2& cov) {
  cov = (0.5 * (cov + cov.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
  if (eig.eigenvalues().minCoeff() >= kMinEigenvalue) return false;
  const Vec2 values = eig.eigenvalues().cwiseMax(kMinEigenvalue);
  cov = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  cov = (0.5 * (cov + cov.transpose())).eval();
  return true;
}

Vec2 point(const ForceSample& s) { return {s.s, s.f_mag}; }

}  // namespace

void GmrModel::validate() const {
  if (components.empty()) throw Error(ErrorCode::kInvalidArgument, "GMR model has no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0.0 && c.weight <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "component weight outside (0, 1]");
    if (!c.mean.allFinite() || !c.covariance.allFinite()) {
      throw Error(ErrorCode::kInvalidArgument, "non-finite component parameters");
    }
    if (c.covariance(0, 1) != c.covariance(1, 0)) {
      throw Error(ErrorCode::kInvalidArgument, "covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat2> eig(c.covariance);
    if (eig.eigenvalues().minCoeff() < kMinEigenvalue * (1.0 - 1e-6)) {
      throw Error(ErrorCode::kInvalidArgument, "covariance is not positive definite");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "component weights do not sum to 1");
}

double GmrModel::log_likelihood(const std::vector<ForceSample>& samples) const {
  double ll = 0.0;
  Eigen::VectorXd terms(static_cast<Eigen::Index>(components.size()));
  for (const auto& sample : samples) {
    for (std::size_t k = 0; k < components.size(); ++k) {
      const auto& c = components[k];
      terms[static_cast<Eigen::Index>(k)] = std::log(c.weight) + log_gauss2(point(sample), c.mean, c.covariance);
    }
    ll += log_sum_exp(terms);
  }
  return ll;
}

GmrModel fit_gmm(const std::vector<ForceSample>& samples, int K, std::uint64_t seed, EmReport* report,
                 const EmOptions& options) {
  if (K < 1) throw Error(ErrorCode::kInvalidArgument, "K must be >= 1");
  const std::size_t n = samples.size();
  if (n < 10 * static_cast<std::size_t>(K)) {
    throw Error(ErrorCode::kTooFewSamples,
                std::to_string(n) + " samples for " + std::to_string(K) + " components (need 10 per component)");
  }
  EmReport local_report;
  EmReport& rep = report != nullptr ? *report : local_report;
  rep = EmReport{};

  std::vector<Vec2> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = point(samples[i]);
    if (!x[i].allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite force sample");
  }

  Vec2 mean = Vec2::Zero();
  for (const auto& p : x) mean += p;
  mean /= static_cast<double>(n);
  Mat2 global_cov = Mat2::Zero();
  for (const auto& p : x) global_cov += (p - mean) * (p - mean).transpose();
  global_cov /= static_cast<double>(n);
  Vec2 scale = global_cov.diagonal().cwiseSqrt();
  for (int d = 0; d < 2; ++d) scale[d] = scale[d] > 1e-12 ? scale[d] : 1.0;

  // k-means++ seeding on standardized coordinates.
  std::mt19937_64 rng(seed);
  std::vector<Vec2> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - mean).cwiseQuotient(scale);
  std::vector<std::size_t> centers;
  centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (z[i] - z[centers.back()]).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r <= 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.push_back(pick);
  }

  GmrModel model;
  {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double d = (z[i] - z[centers[k]]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      members[best].push_back(i);
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
      GaussianComponent c;
      const auto& idx = members[k];
      if (idx.size() < 2) {
        c.mean = x[centers[k]];
        c.covariance = global_cov / static_cast<double>(K);
      } else {
        c.mean = Vec2::Zero();
        for (auto i : idx) c.mean += x[i];
        c.mean /= static_cast<double>(idx.size());
        c.covariance = Mat2::Zero();
        for (auto i : idx) c.covariance += (x[i] - c.mean) * (x[i] - c.mean).transpose();
        c.covariance /= static_cast<double>(idx.size());
      }
      enforce_spd(c.covariance);
      c.weight = std::max(static_cast<double>(idx.size()), 1.0) / static_cast<double>(n);
      model.components.push_back(c);
    }
    double total = 0.0;
    for (const auto& c : model.components) total += c.weight;
    for (auto& c : model.components) c.weight /= total;
  }

  Eigen::MatrixXd resp;
  bool baseline_valid = false;  // false right after pruning or eigenvalue clamping
  double previous_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const auto k_count = static_cast<Eigen::Index>(model.components.size());
    resp.resize(static_cast<Eigen::Index>(n), k_count);
    double ll = 0.0;
    Eigen::VectorXd terms(k_count);
    for (std::size_t i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < k_count; ++k) {
        const auto& c = model.components[static_cast<std::size_t>(k)];
        terms[k] = std::log(c.weight) + log_gauss2(x[i], c.mean, c.covariance);
      }
      const double lse = log_sum_exp(terms);
      ll += lse;
      resp.row(static_cast<Eigen::Index>(i)) = (terms.array() - lse).exp().matrix().transpose();
    }
    rep.log_likelihood.push_back(ll);
    rep.iterations = iter;
    if (baseline_valid) {
      const double slack = 1e-9 * std::max(1.0, std::abs(previous_ll));
      if (ll < previous_ll - slack) {
        throw std::logic_error("EM log-likelihood decreased: " + std::to_string(previous_ll) + " -> " +
                               std::to_string(ll));
      }
      if (ll - previous_ll < options.tolerance) {
        rep.converged = true;
        break;
      }
    }
    previous_ll = ll;
    baseline_valid = true;

    // M-step.
    std::vector<GaussianComponent> next;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const double nk = resp.col(k).sum();
      GaussianComponent c;
      c.weight = nk / static_cast<double>(n);
      if (c.weight < kPruneWeight || nk <= 0.0) {
        rep.warnings.push_back("iteration " + std::to_string(iter) + ": pruned component " + std::to_string(k) +
                               " (weight " + std::to_string(c.weight) + ")");
        baseline_valid = false;
        continue;
      }
      c.mean = Vec2::Zero();
      for (std::size_t i = 0; i < n; ++i) c.mean += resp(static_cast<Eigen::Index>(i), k) * x[i];
      c.mean /= nk;
      c.covariance = Mat2::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2 d = x[i] - c.mean;
        c.covariance += resp(static_cast<Eigen::Index>(i), k) * d * d.transpose();
      }
      c.covariance /= nk;
      if (enforce_spd(c.covariance)) baseline_valid = false;
      next.push_back(c);
    }
    if (next.empty()) throw Error(ErrorCode::kInvalidArgument, "all mixture components degenerated");
    double total = 0.0;
    for (const auto& c : next) total += c.weight;
    for (auto& c : next) c.weight /= total;
    model.components = std::move(next);
    rep.iterations = iter + 1;
  }
  model.validate();
  return model;
}

ForcePrediction gmr_predict(const GmrModel& model, double s, double sigma_floor) {
  const auto k_count = static_cast<Eigen::Index>(model.components.size());
  Eigen::VectorXd log_h(k_count), mu_k(k_count), var_k(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& c = model.components[static_cast<std::size_t>(k)];
    const double css = c.covariance(0, 0);
    const double cfs = c.covariance(1, 0);
    log_h[k] = std::log(c.weight) + log_gauss1(s, c.mean[0], css);
    mu_k[k] = c.mean[1] + cfs / css * (s - c.mean[0]);
    var_k[k] = std::max(0.0, c.covariance(1, 1) - cfs * cfs / css);
  }
  const Eigen::VectorXd h = (log_h.array() - log_sum_exp(log_h)).exp().matrix();
  ForcePrediction out;
  out.mu = h.dot(mu_k);
  const double var = h.dot((var_k.array() + (mu_k.array() - out.mu).square()).matrix());
  out.sigma = std::max(std::sqrt(std::max(0.0, var)), sigma_floor);
  return out;
}

bool corridor_check(double f_mag, double mu, double sigma, double n_sigma) {
  return std::abs(f_mag - mu) <= n_sigma * sigma;
}

std::string_view to_string(SafetyMode mode) {
  switch (mode) {
    case SafetyMode::kForward: return "FORWARD";
    case SafetyMode::kReversing: return "REVERSING";
    case SafetyMode::kHoldAtStart: return "HOLD_AT_START";
  }
  return "FORWARD";
}

std::string_view to_string(DirectiveKind kind) {
  switch (kind) {
    case DirectiveKind::kForward: return "FORWARD";
    case DirectiveKind::kReverseTo: return "REVERSE_TO";
    case DirectiveKind::kHold: return "HOLD";
  }
  return "FORWARD";
}

void SafetyState::validate() const {
  if (!(config.n_sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "n_sigma must be positive");
  if (config.dwell_ticks < 1) throw Error(ErrorCode::kInvalidArgument, "dwell must be >= 1 tick");
  if (!(config.reverse_log_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "reversal rate must be positive");
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (path[i].s > path[i - 1].s) throw Error(ErrorCode::kInvalidArgument, "path buffer not ordered by phase");
  }
}

Directive safety_step(SafetyState& st, bool in_corridor, const PhasePose& current, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "dt must be positive");
  auto hold_here = [&]() {
    Directive d;
    d.kind = DirectiveKind::kHold;
    if (!st.path.empty()) {
      d.target = st.path.front().pose;
      d.s = st.path.front().s;
    } else {
      d.target = st.start_pose.value_or(current.pose);
      d.s = current.s;
    }
    return d;
  };

  switch (st.mode) {
    case SafetyMode::kForward: {
      if (in_corridor) {
        st.path.push_back({current.s, current.pose});
        if (!st.start_pose) st.start_pose = current.pose;
        return {};
      }
      st.in_corridor_streak = 0;
      if (st.path.empty()) {
        st.mode = SafetyMode::kHoldAtStart;
        return hold_here();
      }
      st.mode = SafetyMode::kReversing;
      return {DirectiveKind::kReverseTo, st.path.back().pose, st.path.back().s};
    }
    case SafetyMode::kReversing: {
      st.in_corridor_streak = in_corridor ? st.in_corridor_streak + 1 : 0;
      if (st.in_corridor_streak >= st.config.dwell_ticks) {
        st.mode = SafetyMode::kForward;
        st.in_corridor_streak = 0;
        return {};
      }
      if (st.path.size() > 1) {
        const double target_s = st.path.back().s * std::exp(st.config.reverse_log_rate * dt);
        st.path.pop_back();
        while (st.path.size() > 1 && st.path.back().s < target_s * (1.0 - 1e-9)) st.path.pop_back();
      }
      if (st.path.size() <= 1) {
        st.mode = SafetyMode::kHoldAtStart;
        return hold_here();
      }
      return {DirectiveKind::kReverseTo, st.path.back().pose, st.path.back().s};
    }
    case SafetyMode::kHoldAtStart: {
      st.in_corridor_streak = in_corridor ? st.in_corridor_streak + 1 : 0;
      if (st.in_corridor_streak >= st.config.dwell_ticks) {
        st.mode = SafetyMode::kForward;
        st.in_corridor_streak = 0;
        return {};
      }
      return hold_here();
    }
  }
  return {};
}

}  // namespace rehab::safety
