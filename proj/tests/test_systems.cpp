#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sisr/systems.hpp"

using namespace sisr;

namespace {

constexpr SystemKind kAll[] = {SystemKind::Oscillator, SystemKind::Pendulum, SystemKind::TwoBody,
                               SystemKind::ThreeBody};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sisr_" + name);
}

}  // namespace

TEST(Systems, BuiltinTables) {
  auto osc = builtin_system(SystemKind::Oscillator, 1);
  EXPECT_EQ(osc.constant("m"), 1.23);
  EXPECT_EQ(osc.constant("omega"), 1.65);
  EXPECT_EQ(osc.n_points, 30);
  EXPECT_EQ(osc.t1, 3.0);
  auto pen = builtin_system(SystemKind::Pendulum, 3);
  EXPECT_EQ(pen.constant("l"), 0.33);
  EXPECT_EQ(pen.constant("g"), 1.59);
  EXPECT_EQ(pen.q0[0], 0.87);
  auto two = builtin_system(SystemKind::TwoBody, 3);
  EXPECT_EQ(two.p0[3], -2.1);
  auto three = builtin_system(SystemKind::ThreeBody, 2);
  EXPECT_EQ(three.q0[2], -3.0);
  EXPECT_EQ(three.n_points, 200);
  EXPECT_THROW(builtin_system(SystemKind::Oscillator, 9), ConfigError);
  EXPECT_EQ(default_noise_sigma(SystemKind::Pendulum), 0.005);
  EXPECT_EQ(default_noise_sigma(SystemKind::TwoBody), 0.001);
}

TEST(GroundTruth, OscillatorEnergyValue) {
  auto s = builtin_system(SystemKind::Oscillator, 1);
  std::vector<double> q{-0.05}, p{0.42};
  EXPECT_NEAR(hamiltonian_value(s, q, p), 0.075893, 1e-6);
  auto gt = ground_truth(s);
  EXPECT_NEAR(eval(gt.candidate.T, Bindings{q, p, {}}, gt.candidate.constants) +
                  eval(gt.candidate.V, Bindings{q, p, {}}, gt.candidate.constants),
              0.075893, 1e-6);
}

TEST(GroundTruth, PendulumRestState) {
  auto s = builtin_system(SystemKind::Pendulum, 1);
  std::vector<double> q{0.0}, p{0.0};
  EXPECT_EQ(hamiltonian_value(s, q, p), 0.0);
}

TEST(GroundTruth, TwoBodyInitialPotential) {
  auto s = builtin_system(SystemKind::TwoBody, 1);
  std::vector<double> zero(4, 0.0);
  EXPECT_NEAR(hamiltonian_value(s, s.q0, zero), -0.707107, 1e-6);
  auto gt = ground_truth(s);
  EXPECT_NEAR(eval(gt.candidate.V, Bindings{s.q0, zero, {}}, gt.candidate.constants), -0.707107, 1e-6);
}

TEST(GroundTruth, SymbolicAndClosedFormFieldsAgree) {
  for (SystemKind k : kAll) {
    for (int i = 1; i <= 3; ++i) {
      auto s = builtin_system(k, i);
      auto gt = ground_truth(s);
      CompiledCandidate cc(gt.candidate);
      JetWorkspace ws;
      const auto n = static_cast<std::size_t>(s.n_coords());
      std::vector<double> a(n), b(n);
      ASSERT_TRUE(cc.dV_dq(s.q0, gt.candidate.constants, a, ws));
      ASSERT_TRUE(gt.field.dV_dq(s.q0, b));
      for (std::size_t c = 0; c < n; ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
      ASSERT_TRUE(cc.dT_dp(s.p0, gt.candidate.constants, a, ws));
      ASSERT_TRUE(gt.field.dT_dp(s.p0, b));
      for (std::size_t c = 0; c < n; ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
    }
  }
}

TEST(Generate, AllTwelveDatasetsConserveInvariants) {
  for (SystemKind k : kAll) {
    for (int i = 1; i <= 3; ++i) {
      auto s = builtin_system(k, i);
      Dataset ds;
      ASSERT_NO_THROW(ds = generate(s));
      const auto& tr = ds.samples;
      ASSERT_EQ(tr.size(), s.n_points);
      EXPECT_EQ(tr.q(0, 0), s.q0[0]);
      EXPECT_EQ(tr.p(0, 0), s.p0[0]);
      std::vector<double> q(static_cast<std::size_t>(s.n_coords())), p(q.size());
      auto load = [&](Eigen::Index r) {
        for (std::size_t c = 0; c < q.size(); ++c) {
          q[c] = tr.q(r, static_cast<Eigen::Index>(c));
          p[c] = tr.p(r, static_cast<Eigen::Index>(c));
        }
      };
      load(0);
      const double h0 = hamiltonian_value(s, q, p);
      for (Eigen::Index r = 1; r < tr.size(); ++r) {
        load(r);
        EXPECT_LT(std::abs(hamiltonian_value(s, q, p) - h0) / std::abs(h0), 1e-6) << system_name(k) << " " << i;
      }
      if (s.n_bodies() > 1) {
        for (int d = 0; d < 2; ++d) {
          double p_start = 0, p_end = 0;
          for (int b = 0; b < s.n_bodies(); ++b) {
            p_start += tr.p(0, 2 * b + d);
            p_end += tr.p(tr.size() - 1, 2 * b + d);
          }
          EXPECT_NEAR(p_end, p_start, 1e-8);
        }
      }
    }
  }
}

TEST(Generate, OscillatorEnergyTight) {
  auto s = builtin_system(SystemKind::Oscillator, 1);
  auto ds = generate(s);
  const double h0 = hamiltonian_value(s, s.q0, s.p0);
  for (Eigen::Index r = 0; r < ds.samples.size(); ++r) {
    std::vector<double> q{ds.samples.q(r, 0)}, p{ds.samples.p(r, 0)};
    EXPECT_NEAR(hamiltonian_value(s, q, p), h0, 1e-8);
  }
}

TEST(Generate, TwoBodyOrbitBounded) {
  auto s = builtin_system(SystemKind::TwoBody, 1);
  auto ds = generate(s);
  // Relative coordinates; the centre of mass drifts uniformly.
  double worst = 0;
  for (Eigen::Index r = 0; r < ds.samples.size(); ++r) {
    worst = std::max(worst, std::hypot(ds.samples.q(r, 0) - ds.samples.q(r, 2), ds.samples.q(r, 1) - ds.samples.q(r, 3)));
  }
  EXPECT_LT(worst, 10 * std::sqrt(2.0));
}

TEST(Noise, ZeroSigmaIsIdentity) {
  auto ds = generate(builtin_system(SystemKind::Oscillator, 2));
  auto noisy = add_noise(ds, 0.0, 4);
  EXPECT_EQ(noisy.samples.q, ds.samples.q);
  EXPECT_EQ(noisy.samples.p, ds.samples.p);
}

TEST(Noise, SampleSigmaAndDeterminism) {
  auto ds = generate(builtin_system(SystemKind::TwoBody, 1));
  auto a = add_noise(ds, 0.001, 42);
  auto b = add_noise(ds, 0.001, 42);
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
  Eigen::MatrixXd dq = a.samples.q - ds.samples.q, dp = a.samples.p - ds.samples.p;
  const double n = static_cast<double>(dq.size() + dp.size());
  const double mean = (dq.sum() + dp.sum()) / n;
  const double var = ((dq.array() - mean).square().sum() + (dp.array() - mean).square().sum()) / (n - 1);
  EXPECT_NEAR(std::sqrt(var), 0.001, 0.15 * 0.001);
  EXPECT_EQ(a.samples.times, ds.samples.times);
}

TEST(Persistence, SaveLoadSaveIsByteIdentical) {
  auto ds = add_noise(generate(builtin_system(SystemKind::ThreeBody, 3)), 0.001, 9);
  auto path = temp_file("three.json");
  save_dataset(ds, path);
  auto back = load_dataset(path);
  EXPECT_EQ(serialize_dataset(back), serialize_dataset(ds));
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.samples.q, ds.samples.q);
  std::filesystem::remove(path);
}

TEST(Persistence, OscillatorHeader) {
  const std::string text = serialize_dataset(generate(builtin_system(SystemKind::Oscillator, 1)));
  EXPECT_NE(text.find("\"n_points\": 30"), std::string::npos);
  EXPECT_NE(text.find("\"t0\": 0,"), std::string::npos);
  EXPECT_NE(text.find("\"t1\": 3,"), std::string::npos);
  auto back = parse_dataset(text);
  EXPECT_EQ(back.spec.constant("m"), 1.23);
}

TEST(Persistence, TruncatedFileIsFormatError) {
  const std::string text = serialize_dataset(generate(builtin_system(SystemKind::Oscillator, 1)));
  EXPECT_THROW(parse_dataset(text.substr(0, text.size() / 2)), FormatError);
  try {
    parse_dataset(text.substr(0, text.size() / 2));
  } catch (const FormatError& e) {
    EXPECT_GT(e.line(), 10u);
  }
}

TEST(Persistence, BadFieldReportsLine) {
  std::string text = serialize_dataset(generate(builtin_system(SystemKind::Oscillator, 1)));
  const auto pos = text.find("\"t1\": 3");
  text.replace(pos, 7, "\"t1\": \"x\"");
  try {
    parse_dataset(text);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.field(), "t1");
    EXPECT_EQ(e.line(), 8u);
  }
}

TEST(Persistence, MissingFileIsIoError) { EXPECT_THROW(load_dataset("/nonexistent/x.json"), IoError); }
