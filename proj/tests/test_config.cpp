#include <gtest/gtest.h>

#include "sisr/config.hpp"

using namespace sisr;

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig def;
  const std::string text = serialize_run_config(def);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(serialize_run_config(back), text);
  EXPECT_EQ(back.training.batch_size, 500);
  EXPECT_EQ(back.training.initial_batch_size, 2000);
  EXPECT_EQ(back.training.inner_epochs, 15);
  EXPECT_DOUBLE_EQ(back.training.inner_lr, 0.5);
  EXPECT_EQ(back.training.substeps, 4);
  EXPECT_DOUBLE_EQ(back.training.learning_rate, 0.0005);
  EXPECT_DOUBLE_EQ(back.search.max_tolerable_decrease, 0.10);
  EXPECT_EQ(back.search.epochs, 3000);
  EXPECT_EQ(back.search.horizon, 10);
}

TEST(RunConfig, PartialSectionsKeepDefaults) {
  const RunConfig c = parse_run_config(R"({"training": {"seed": 7, "max_batches": 3}, "search": {"hidden": 32}})");
  EXPECT_EQ(c.training.seed, 7u);
  EXPECT_EQ(c.training.max_batches, 3);
  EXPECT_EQ(c.training.batch_size, 500);
  EXPECT_EQ(c.search.net.hidden, 32);
  EXPECT_EQ(c.search.net.depth, 8);
  EXPECT_FALSE(c.system.has_value());
}

TEST(RunConfig, UnknownKeysRejected) {
  EXPECT_THROW(parse_run_config(R"({"trainig": {}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"training": {"batchsize": 10}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"sampler": {"max_ops": 5, "extra": 1}})"), ConfigError);
  try {
    parse_run_config(R"({"search": {"epoch": 1}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(RunConfig, TypesAndRangesChecked) {
  EXPECT_THROW(parse_run_config(R"({"training": {"batch_size": "big"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"training": {"batch_size": 2.5}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"training": {"batch_size": 100}})"), ConfigError);  // initial must be 4x
  EXPECT_THROW(parse_run_config(R"({"search": {"max_tolerable_decrease": 2}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"training": {"substeps": 0}})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"sampler": {"operators": ["add", "tan"]}})"), ConfigError);
}

TEST(RunConfig, CustomSystem) {
  const RunConfig c = parse_run_config(R"({"system": {"kind": "oscillator", "constants": {"m": 2, "omega": 1},
      "q0": [0.5], "p0": [0], "t0": 0, "t1": 2, "n_points": 21}})");
  ASSERT_TRUE(c.system.has_value());
  EXPECT_EQ(c.system->kind, SystemKind::Oscillator);
  EXPECT_EQ(c.system->n_points, 21);
  EXPECT_DOUBLE_EQ(c.system->constant("m"), 2.0);
  EXPECT_EQ(parse_run_config(serialize_run_config(c)).system->q0, c.system->q0);
  EXPECT_THROW(parse_run_config(R"({"system": {"kind": "oscillator", "constants": {"m": 2}, "q0": [0.5], "p0": [0]}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(R"({"system": {"kind": "rotor"}})"), ConfigError);
}

TEST(RunConfig, SamplerOverrides) {
  const RunConfig c = parse_run_config(R"({"sampler": {"operators": ["add", "mul"], "min_ops": 2, "max_ops": 6}})");
  const auto s = sampler_constraints(SystemKind::Pendulum, CouplingSpec{}, c.sampler);
  EXPECT_EQ(s.operators, (std::vector<Op>{Op::Add, Op::Mul}));
  EXPECT_EQ(s.min_ops, 2);
  EXPECT_EQ(s.max_ops, 6);
  const auto d = sampler_constraints(SystemKind::ThreeBody, CouplingSpec{}, SamplerOverrides{});
  EXPECT_EQ(d.n_bodies, 3);
  EXPECT_EQ(d.max_ops, 18);
  SamplerOverrides bad;
  bad.min_ops = 9;
  bad.max_ops = 3;
  EXPECT_THROW(sampler_constraints(SystemKind::Oscillator, CouplingSpec{}, bad), ConfigError);
}
