#include "sisr/symplectic.hpp"

#include <cmath>
#include <memory>

namespace sisr {

IntegratorCoefficients IntegratorCoefficients::forest_ruth() noexcept {
  const double cbrt2 = std::cbrt(2.0);
  const double w = 2.0 - cbrt2;
  IntegratorCoefficients k;
  k.c = {1.0 / (2.0 * w), (1.0 - cbrt2) / (2.0 * w), (1.0 - cbrt2) / (2.0 * w), 1.0 / (2.0 * w)};
  k.d = {1.0 / w, -cbrt2 / w, 1.0 / w, 0.0};
  return k;
}

IntegratorCoefficients IntegratorCoefficients::positive_d2() noexcept {
  IntegratorCoefficients k = forest_ruth();
  k.d[1] = -k.d[1];
  return k;
}

GradientField candidate_field(const CompiledCandidate& candidate, std::vector<double> constants) {
  auto ws = std::make_shared<JetWorkspace>();
  auto consts = std::make_shared<const std::vector<double>>(std::move(constants));
  GradientField f;
  f.n_coords = candidate.n_coords();
  f.dT_dp = [&candidate, ws, consts](std::span<const double> p, std::span<double> out) {
    return candidate.dT_dp(p, *consts, out, *ws);
  };
  f.dV_dq = [&candidate, ws, consts](std::span<const double> q, std::span<double> out) {
    return candidate.dV_dq(q, *consts, out, *ws);
  };
  return f;
}

void step4(std::span<double> q, std::span<double> p, double h, const GradientField& field,
           const IntegratorCoefficients& coeffs) {
  const std::size_t n = q.size();
  if (p.size() != n) throw ShapeMismatch("step4: q and p differ in size");
  std::vector<double> g(n);
  for (int j = 0; j < 4; ++j) {
    if (!field.dT_dp(p, g)) throw FieldError(0, "dT/dp undefined during step");
    for (std::size_t k = 0; k < n; ++k) q[k] += coeffs.c[j] * g[k] * h;
    if (coeffs.d[j] == 0.0) continue;
    if (!field.dV_dq(q, g)) throw FieldError(0, "dV/dq undefined during step");
    for (std::size_t k = 0; k < n; ++k) p[k] -= coeffs.d[j] * g[k] * h;
  }
}

Trajectory rollout(const GradientField& field, std::span<const double> q0, std::span<const double> p0, double t0,
                   double t1, int n_points, int substeps) {
  if (n_points < 2) throw ConfigError("rollout: n_points must be at least 2");
  if (substeps < 1) throw ConfigError("rollout: substeps must be at least 1");
  const auto n = static_cast<Eigen::Index>(q0.size());
  Trajectory traj;
  traj.times = Eigen::VectorXd::LinSpaced(n_points, t0, t1);
  traj.q.resize(n_points, n);
  traj.p.resize(n_points, n);
  std::vector<double> q(q0.begin(), q0.end());
  std::vector<double> p(p0.begin(), p0.end());
  for (Eigen::Index k = 0; k < n; ++k) {
    traj.q(0, k) = q[static_cast<std::size_t>(k)];
    traj.p(0, k) = p[static_cast<std::size_t>(k)];
  }
  for (int i = 1; i < n_points; ++i) {
    const double h = (traj.times(i) - traj.times(i - 1)) / substeps;
    try {
      for (int s = 0; s < substeps; ++s) step4(q, p, h, field);
    } catch (const FieldError& e) {
      throw FieldError(static_cast<std::size_t>(i), e.what());
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      traj.q(i, k) = q[static_cast<std::size_t>(k)];
      traj.p(i, k) = p[static_cast<std::size_t>(k)];
    }
  }
  return traj;
}

namespace {

// step4 on (q, p) together with their tangents w.r.t. every constant.
bool step4_jet(const CompiledCandidate& cc, std::span<const double> constants, double h, std::vector<double>& q,
               std::vector<double>& p, std::vector<double>& dq, std::vector<double>& dp, std::vector<double>& g,
               std::vector<double>& dg, JetWorkspace& ws) {
  static const IntegratorCoefficients coeffs = IntegratorCoefficients::forest_ruth();
  const std::size_t n = q.size();
  const std::size_t m = static_cast<std::size_t>(cc.n_constants());
  for (int j = 0; j < 4; ++j) {
    if (!cc.dT_dp_jet(p, dp, constants, g, dg, ws)) return false;
    const double a = coeffs.c[j] * h;
    for (std::size_t k = 0; k < n; ++k) q[k] += a * g[k];
    for (std::size_t k = 0; k < n * m; ++k) dq[k] += a * dg[k];
    if (coeffs.d[j] == 0.0) continue;
    if (!cc.dV_dq_jet(q, dq, constants, g, dg, ws)) return false;
    const double b = coeffs.d[j] * h;
    for (std::size_t k = 0; k < n; ++k) p[k] -= b * g[k];
    for (std::size_t k = 0; k < n * m; ++k) dp[k] -= b * dg[k];
  }
  return true;
}

}  // namespace

RolloutGradient rollout_loss_and_const_grads(const CompiledCandidate& cc, std::span<const double> constants,
                                             const Trajectory& data, int horizon, int substeps,
                                             std::span<const std::size_t> starts) {
  if (data.n_coords() != cc.n_coords()) throw ShapeMismatch("rollout loss: candidate and data dimensions differ");
  if (horizon < 1 || substeps < 1) throw ConfigError("rollout loss: horizon and substeps must be positive");
  const auto n_samples = static_cast<std::size_t>(data.size());
  if (n_samples <= static_cast<std::size_t>(horizon)) throw ConfigError("rollout loss: horizon exceeds the data");
  std::vector<std::size_t> all;
  if (starts.empty()) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(horizon) < n_samples; ++i) all.push_back(i);
    starts = all;
  }

  const std::size_t n = static_cast<std::size_t>(cc.n_coords());
  const std::size_t m = static_cast<std::size_t>(cc.n_constants());
  std::vector<double> q(n), p(n), dq(n * m), dp(n * m), g(n), dg(n * m);
  JetWorkspace ws;
  RolloutGradient out;
  out.grad.assign(m, 0.0);
  double sum = 0.0;
  for (std::size_t start : starts) {
    if (start + static_cast<std::size_t>(horizon) >= n_samples) throw ConfigError("rollout loss: start out of range");
    for (std::size_t k = 0; k < n; ++k) {
      q[k] = data.q(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(k));
      p[k] = data.p(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(k));
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dp.begin(), dp.end(), 0.0);
    for (int s = 1; s <= horizon; ++s) {
      const auto i = static_cast<Eigen::Index>(start + static_cast<std::size_t>(s));
      const double h = (data.times(i) - data.times(i - 1)) / substeps;
      for (int sub = 0; sub < substeps; ++sub) {
        if (!step4_jet(cc, constants, h, q, p, dq, dp, g, dg, ws)) return RolloutGradient{};
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double eq = q[k] - data.q(i, static_cast<Eigen::Index>(k));
        const double ep = p[k] - data.p(i, static_cast<Eigen::Index>(k));
        sum += eq * eq + ep * ep;
        for (std::size_t c = 0; c < m; ++c) out.grad[c] += 2.0 * (eq * dq[k * m + c] + ep * dp[k * m + c]);
      }
    }
  }
  const double count = static_cast<double>(starts.size() * static_cast<std::size_t>(horizon) * 2 * n);
  out.loss = sum / count;
  for (double& v : out.grad) v /= count;
  out.valid = std::isfinite(out.loss);
  for (double v : out.grad) out.valid = out.valid && std::isfinite(v);
  if (!out.valid) return RolloutGradient{};
  return out;
}

bool one_step_predictions(const CompiledCandidate& cc, std::span<const double> constants, const Trajectory& data,
                          int substeps, Trajectory& predicted) {
  const auto n_samples = data.size();
  const auto n = static_cast<Eigen::Index>(cc.n_coords());
  predicted.times = data.times.tail(n_samples - 1);
  predicted.q.resize(n_samples - 1, n);
  predicted.p.resize(n_samples - 1, n);
  GradientField field = candidate_field(cc, std::vector<double>(constants.begin(), constants.end()));
  std::vector<double> q(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
  for (Eigen::Index i = 1; i < n_samples; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      q[static_cast<std::size_t>(k)] = data.q(i - 1, k);
      p[static_cast<std::size_t>(k)] = data.p(i - 1, k);
    }
    const double h = (data.times(i) - data.times(i - 1)) / substeps;
    try {
      for (int s = 0; s < substeps; ++s) step4(q, p, h, field);
    } catch (const FieldError&) {
      return false;
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      predicted.q(i - 1, k) = q[static_cast<std::size_t>(k)];
      predicted.p(i - 1, k) = p[static_cast<std::size_t>(k)];
      if (!std::isfinite(q[static_cast<std::size_t>(k)]) || !std::isfinite(p[static_cast<std::size_t>(k)])) return false;
    }
  }
  return true;
}

}  // namespace sisr
