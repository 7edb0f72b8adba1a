#pragma once

// Benchmark systems, their ground-truth Hamiltonians, and trajectory datasets.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sisr/expr.hpp"
#include "sisr/symplectic.hpp"

namespace sisr {

enum class SystemKind { Oscillator, Pendulum, TwoBody, ThreeBody };

std::string_view system_name(SystemKind kind) noexcept;
std::optional<SystemKind> system_from_name(std::string_view name) noexcept;

struct SystemSpec {
  SystemKind kind = SystemKind::Oscillator;
  // oscillator: m, omega; pendulum: m, g, l; gravitational: G, m (equal masses)
  std::map<std::string, double> constants;
  std::vector<double> q0;
  std::vector<double> p0;
  double t0 = 0.0;
  double t1 = 3.0;
  int n_points = 30;

  int n_bodies() const noexcept;
  int n_dims() const noexcept;
  int n_coords() const noexcept { return n_bodies() * n_dims(); }
  double constant(const std::string& name) const;
  /// Throws ConfigError.
  void validate() const;
};

/// One of the twelve built-in datasets (index 1..3). Throws ConfigError.
SystemSpec builtin_system(SystemKind kind, int dataset_index);

/// Default measurement noise for a system.
double default_noise_sigma(SystemKind kind) noexcept;

struct GroundTruth {
  HamiltonianCandidate candidate;
  GradientField field;  // closed form
};

GroundTruth ground_truth(const SystemSpec& spec);
double hamiltonian_value(const SystemSpec& spec, std::span<const double> q, std::span<const double> p);

struct Dataset {
  SystemSpec spec;
  Trajectory samples;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Noise-free trajectory of the ground-truth field. FieldError propagates.
Dataset generate(const SystemSpec& spec, int substeps = 100);

/// i.i.d. N(0, sigma) on every q and p entry of every sample.
Dataset add_noise(const Dataset& ds, double sigma, std::uint64_t seed);

/// Sampling region for equivalence checks: the observed range of every
/// coordinate joined with [-1, 1]. Gravitational systems exclude positions
/// closer than half the smallest observed pair separation.
PhaseDomain equivalence_domain(const Dataset& ds);

std::string serialize_dataset(const Dataset& ds);
/// Throws FormatError with the offending line and field.
Dataset parse_dataset(std::string_view text);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace sisr
