#pragma once

// The outer search: sample a batch of candidates from the policy, fit each
// candidate's constants through the integrator, score it, and train the
// policy on the best-scoring fraction of the batch.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sisr/coupling.hpp"
#include "sisr/policy.hpp"
#include "sisr/symplectic.hpp"
#include "sisr/systems.hpp"

namespace sisr {

struct TrainingConfig {
  double learning_rate = 0.0005;
  double entropy_coef = 0.005;
  double mutation_rate = 0.05;
  double risk_fraction = 0.05;
  int batch_size = 500;
  int initial_batch_size = 2000;
  int inner_epochs = 15;
  double inner_lr = 0.5;
  int substeps = 4;  // integrator steps per sample interval when fitting and scoring
  int max_batches = 50;
  std::uint64_t seed = 0;
  double equivalence_tol = 1e-2;
  int threads = 1;
  PolicyConfig policy;

  void validate() const;
  /// Records kept per batch: ceil(risk_fraction * batch_size).
  std::size_t retained() const;
};

/// 1 / (1 + NRMSE), NRMSE the mean over coordinates of RMSE / std of that observed coordinate.
/// Constant coordinates fall back to the std pooled over all coordinates.
/// Returns 0 for a non-finite prediction. Throws ShapeMismatch.
double nrmse_reward(const Trajectory& predicted, const Trajectory& observed);

struct RewardRecord {
  std::vector<std::size_t> tokens;
  HamiltonianCandidate candidate;  // fitted constants
  double reward = 0.0;
  bool valid = false;
  double loss = 0.0;  // single-step MSE at the fitted constants
  double seconds = 0.0;
};

/// Constants start uniform in [0.1, 2.0] from `init_seed`, then each epoch
/// takes one RMSProp step per training start in shuffled order. The full
/// single-step loss is checked four times per epoch and the best constants
/// are kept. The reward is scored on single-step predictions.
RewardRecord optimize_constants(const HamiltonianCandidate& candidate, const Dataset& ds, const TrainingConfig& cfg,
                                std::uint64_t init_seed);

struct RiskSelection {
  std::vector<std::size_t> indices;  // into the batch, best first
  double threshold = 0.0;           // R_eps
};

/// Keeps the `keep` best records plus any tied with the last kept one.
RiskSelection risk_filter(std::span<const double> rewards, std::size_t keep);

/// Fills the policy's parameter gradients with those of
/// -sum_i (R_i - R_eps) log p(tau_i) - lambda_H sum_i H(tau_i); returns that loss.
double policy_gradient(Policy& policy, std::span<const std::vector<std::size_t>> sequences,
                       std::span<const double> rewards, double threshold, double entropy_coef);

/// One Adam step on policy_gradient.
void policy_update(Policy& policy, std::span<const std::vector<std::size_t>> sequences,
                   std::span<const double> rewards, double threshold, double entropy_coef, Adam& optimizer);

/// Operator set and length bounds used for each built-in system.
SampleConstraints default_constraints(SystemKind kind, const CouplingSpec& coupling = {});

struct BatchRow {
  int index = 0;
  int sampled = 0;
  int fitted = 0;  // distinct sequences fitted this batch
  double best_reward = 0.0;
  double threshold = 0.0;
  std::string best_expression;
  double seconds = 0.0;
};

struct RunReport {
  std::string system;
  bool experiment_mode = false;
  bool recovered = false;
  int batches_used = 0;
  double seconds = 0.0;
  std::string best_expression;
  double best_reward = 0.0;
  HamiltonianCandidate best;
  std::string recovered_expression;
  std::vector<BatchRow> batches;
  TrainingConfig config;
  SampleConstraints constraints;
};

struct DiscoveryOptions {
  std::optional<SampleConstraints> constraints;  // default_constraints when empty
  /// Experiment mode: stop once a retained candidate matches this Hamiltonian.
  std::optional<HamiltonianCandidate> ground_truth;
  std::function<void(const BatchRow&)> on_batch;
};

RunReport discover(const Dataset& ds, const CouplingSpec& priors, const TrainingConfig& cfg,
                   const DiscoveryOptions& options = {});

/// JSON report. Wall-clock fields are left out so that reruns compare equal.
std::string serialize_report(const RunReport& report);
/// CSV: batch, sampled, fitted, best_reward, threshold.
std::string reward_curve_csv(const RunReport& report);
/// CSV: t, then observed and predicted q and p, rolled out from the first
/// sample with the report's best candidate.
std::string trajectory_csv(const RunReport& report, const Dataset& ds);
/// CSV: batch, seconds.
std::string timing_csv(const RunReport& report);

}  // namespace sisr
