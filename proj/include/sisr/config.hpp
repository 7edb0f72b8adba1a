#pragma once

// Run configuration file: optional custom system, coupling-search settings,
// discovery settings and sampler overrides. Unknown keys are rejected.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sisr/discovery.hpp"
#include "sisr/priors.hpp"
#include "sisr/systems.hpp"

namespace sisr {

struct SamplerOverrides {
  std::optional<std::vector<Op>> operators;
  std::optional<int> min_ops;
  std::optional<int> max_ops;
};

struct RunConfig {
  std::optional<SystemSpec> system;
  SearchConfig search;
  TrainingConfig training;
  SamplerOverrides sampler;
};

/// Throws ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every setting with its current value; parses back to the same config.
std::string serialize_run_config(const RunConfig& cfg);

/// default_constraints for the system with the overrides applied.
SampleConstraints sampler_constraints(SystemKind kind, const CouplingSpec& coupling, const SamplerOverrides& o);

}  // namespace sisr
