#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "sisr/symplectic.hpp"

using namespace sisr;

namespace {

GradientField linear_field(double k_t, double k_v) {
  GradientField f;
  f.n_coords = 1;
  f.dT_dp = [k_t](std::span<const double> p, std::span<double> out) {
    out[0] = k_t * p[0];
    return true;
  };
  f.dV_dq = [k_v](std::span<const double> q, std::span<double> out) {
    out[0] = k_v * q[0];
    return true;
  };
  return f;
}

double period_error(double h_steps, const IntegratorCoefficients& k) {
  const int n = static_cast<int>(h_steps);
  const double h = 2 * std::numbers::pi / n;
  std::vector<double> q{1.0}, p{0.0};
  auto f = linear_field(1, 1);
  for (int i = 0; i < n; ++i) step4(q, p, h, f, k);
  return std::hypot(q[0] - 1.0, p[0]);
}

double slope(const IntegratorCoefficients& k) {
  const double e1 = period_error(32, k), e2 = period_error(256, k);
  return std::log(e1 / e2) / std::log(8.0);
}

HamiltonianCandidate oscillator(double m, double w) {
  return parse_infix_hamiltonian("(p1x*p1x)/" + std::to_string(2 * m) + " + " + std::to_string(0.5 * m * w * w) +
                                     "*(q1x*q1x)",
                                 1, 1);
}

}  // namespace

TEST(Coefficients, ConsistencyAndSymmetry) {
  auto k = IntegratorCoefficients::forest_ruth();
  EXPECT_NEAR(k.c[0] + k.c[1] + k.c[2] + k.c[3], 1.0, 1e-15);
  EXPECT_NEAR(k.d[0] + k.d[1] + k.d[2] + k.d[3], 1.0, 1e-15);
  EXPECT_EQ(k.c[0], k.c[3]);
  EXPECT_EQ(k.c[1], k.c[2]);
  EXPECT_EQ(k.d[0], k.d[2]);
  EXPECT_EQ(k.d[3], 0.0);
  EXPECT_NEAR(k.c[0], 0.6756035959798289, 1e-15);
  EXPECT_NEAR(k.d[1], -1.7024143839193153, 1e-15);
}

TEST(Coefficients, PrintedD2IsInconsistent) {
  auto k = IntegratorCoefficients::positive_d2();
  EXPECT_GT(std::abs(k.d[0] + k.d[1] + k.d[2] + k.d[3] - 1.0), 1.0);
  EXPECT_LT(slope(k), 1.0);
  const double s = slope(IntegratorCoefficients::forest_ruth());
  EXPECT_GE(s, 3.7);
  EXPECT_LE(s, 4.3);
}

TEST(Step4, FreeParticleIsExact) {
  std::vector<double> q{0.0}, p{1.0};
  step4(q, p, 0.1, linear_field(1, 0));
  EXPECT_NEAR(q[0], 0.1, 1e-16);
  EXPECT_EQ(p[0], 1.0);
}

TEST(Step4, OscillatorMatchesAnalytic) {
  std::vector<double> q{1.0}, p{0.0};
  step4(q, p, 0.1, linear_field(1, 1));
  EXPECT_NEAR(q[0], std::cos(0.1), 1e-5);
  EXPECT_NEAR(p[0], -std::sin(0.1), 1e-5);
  EXPECT_NEAR(q[0], 0.995004, 1e-5);
  EXPECT_NEAR(p[0], -0.099833, 1e-5);
}

TEST(Step4, HalvingStepReducesErrorSixteenfold) {
  auto k = IntegratorCoefficients::forest_ruth();
  const double ratio = period_error(64, k) / period_error(128, k);
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Step4, UnitJacobianDeterminant) {
  auto f = linear_field(1.0 / 1.3, 2.1);
  const double h = 0.1, eps = 1e-6;
  auto map = [&](double q0, double p0) {
    std::vector<double> q{q0}, p{p0};
    step4(q, p, h, f);
    return std::pair{q[0], p[0]};
  };
  auto [qa, pa] = map(0.3 + eps, 0.2);
  auto [qb, pb] = map(0.3 - eps, 0.2);
  auto [qc, pc] = map(0.3, 0.2 + eps);
  auto [qd, pd] = map(0.3, 0.2 - eps);
  const double j11 = (qa - qb) / (2 * eps), j21 = (pa - pb) / (2 * eps);
  const double j12 = (qc - qd) / (2 * eps), j22 = (pc - pd) / (2 * eps);
  EXPECT_NEAR(j11 * j22 - j12 * j21, 1.0, 1e-10);
}

TEST(Step4, TimeReversible) {
  GradientField f;
  f.n_coords = 1;
  f.dT_dp = [](std::span<const double> p, std::span<double> out) {
    out[0] = p[0];
    return true;
  };
  f.dV_dq = [](std::span<const double> q, std::span<double> out) {
    out[0] = std::sin(q[0]);
    return true;
  };
  std::vector<double> q{1.1}, p{0.4};
  step4(q, p, 0.05, f);
  step4(q, p, -0.05, f);
  EXPECT_NEAR(q[0], 1.1, 1e-10);
  EXPECT_NEAR(p[0], 0.4, 1e-10);
}

TEST(Step4, FieldFailureRaises) {
  GradientField f = linear_field(1, 1);
  f.dV_dq = [](std::span<const double>, std::span<double>) { return false; };
  std::vector<double> q{1.0}, p{0.0};
  EXPECT_THROW(step4(q, p, 0.1, f), FieldError);
}

TEST(Rollout, EnergyDriftOverLongRun) {
  auto f = linear_field(1, 1);
  std::vector<double> q0{1.0}, p0{0.0};
  Trajectory tr = rollout(f, q0, p0, 0.0, 100.0, 101, 100);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < tr.size(); ++i) {
    const double e = 0.5 * (tr.q(i, 0) * tr.q(i, 0) + tr.p(i, 0) * tr.p(i, 0));
    worst = std::max(worst, std::abs(e - 0.5) / 0.5);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Rollout, TwoPointsIsRepeatedStep) {
  auto f = linear_field(1, 1);
  std::vector<double> q0{1.0}, p0{0.0};
  Trajectory tr = rollout(f, q0, p0, 0.0, 0.3, 2, 3);
  std::vector<double> q{1.0}, p{0.0};
  for (int i = 0; i < 3; ++i) step4(q, p, 0.1, f);
  EXPECT_EQ(tr.q(1, 0), q[0]);
  EXPECT_EQ(tr.p(1, 0), p[0]);
  EXPECT_EQ(tr.q(0, 0), 1.0);
}

TEST(Rollout, FailureReportsInterval) {
  GradientField f = linear_field(1, 1);
  f.dV_dq = [](std::span<const double> q, std::span<double> out) {
    out[0] = q[0];
    return q[0] > 0.5;
  };
  std::vector<double> q0{1.0}, p0{0.0};
  try {
    rollout(f, q0, p0, 0.0, 3.0, 31, 1);
    FAIL();
  } catch (const FieldError& e) {
    EXPECT_GT(e.step(), 1u);
    EXPECT_LT(e.step(), 31u);
  }
}

TEST(RolloutLoss, TruthOnCleanDataIsExact) {
  auto h = oscillator(1.23, 1.65);
  CompiledCandidate cc(h);
  std::vector<double> q0{-0.05}, p0{0.42};
  Trajectory data = rollout(candidate_field(cc, h.constants), q0, p0, 0.0, 3.0, 30, 1);
  auto r = rollout_loss_and_const_grads(cc, h.constants, data, 1, 1);
  ASSERT_TRUE(r.valid);
  EXPECT_LT(r.loss, 1e-10);
}

TEST(RolloutLoss, GradientsMatchFiniteDifferences) {
  auto truth = oscillator(1.23, 1.65);
  CompiledCandidate cc(truth);
  std::vector<double> q0{-0.05}, p0{0.42};
  Trajectory data = rollout(candidate_field(cc, truth.constants), q0, p0, 0.0, 3.0, 30, 100);
  for (int horizon : {1, 5}) {
    std::vector<double> c = {truth.constants[0] * 1.1, truth.constants[1] * 0.85};
    auto r = rollout_loss_and_const_grads(cc, c, data, horizon, 2);
    ASSERT_TRUE(r.valid);
    for (std::size_t s = 0; s < c.size(); ++s) {
      const double h = 1e-5;
      auto cp = c, cm = c;
      cp[s] += h;
      cm[s] -= h;
      const double fd = (rollout_loss_and_const_grads(cc, cp, data, horizon, 2).loss -
                         rollout_loss_and_const_grads(cc, cm, data, horizon, 2).loss) /
                        (2 * h);
      EXPECT_LT(std::abs(fd - r.grad[s]) / std::abs(fd), 1e-3);
    }
  }
}

TEST(RolloutLoss, MassGradientPointsBack) {
  auto truth = oscillator(1.23, 1.65);
  CompiledCandidate cc(truth);
  std::vector<double> q0{-0.05}, p0{0.42};
  Trajectory data = rollout(candidate_field(cc, truth.constants), q0, p0, 0.0, 3.0, 30, 100);
  std::vector<double> c = truth.constants;
  c[0] *= 1.1;  // 2m too large
  auto r = rollout_loss_and_const_grads(cc, c, data, 1, 1);
  ASSERT_TRUE(r.valid);
  EXPECT_GT(r.grad[0], 0.0);
  c[0] = truth.constants[0] * 0.9;
  EXPECT_LT(rollout_loss_and_const_grads(cc, c, data, 1, 1).grad[0], 0.0);
}

TEST(RolloutLoss, InvalidCandidateDiscarded) {
  auto h = parse_infix_hamiltonian("p1x*p1x/2 + 1/q1x", 1, 1);
  CompiledCandidate cc(h);
  Trajectory data;
  data.times = Eigen::VectorXd::LinSpaced(3, 0, 1);
  data.q = Eigen::MatrixXd::Zero(3, 1);
  data.p = Eigen::MatrixXd::Zero(3, 1);
  auto r = rollout_loss_and_const_grads(cc, h.constants, data, 1, 1);
  EXPECT_FALSE(r.valid);
  EXPECT_TRUE(r.grad.empty());
}
