#pragma once

// Coupling extraction: symplectic networks whose T and V are sums of
// per-group MLPs, trained through the integrator, and the staged search that
// compares their held-out scores across structures.

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sisr/coupling.hpp"
#include "sisr/nn.hpp"
#include "sisr/symplectic.hpp"
#include "sisr/systems.hpp"

namespace sisr {

enum class Side { T, V };

struct NetShape {
  int hidden = 128;
  int depth = 8;  // hidden layers
};

class SympNet {
 public:
  /// Throws ConfigError when the structure does not fit the system.
  SympNet(int n_bodies, int n_dims, const CouplingSpec& structure, const NetShape& shape, std::uint64_t seed);

  int n_coords() const noexcept { return n_bodies_ * n_dims_; }
  const CouplingSpec& structure() const noexcept { return structure_; }
  ParamStore& params() noexcept { return store_; }
  const ParamStore& params() const noexcept { return store_; }

  /// Subfunctions summed into a side, and the distinct networks behind them.
  int subfunctions(Side side) const noexcept { return static_cast<int>(sides_[index(side)].groups.size()); }
  int networks(Side side) const noexcept { return static_cast<int>(sides_[index(side)].nets.size()); }
  int input_dim(Side side, int subfunction) const;

  /// dT/dp or dV/dq on the tape: x and the result are n_coords x B.
  Var gradient(Tape& tape, Side side, Var x) const;

  /// Scalar T(p) or V(q). Tied terms are summed in sorted order, so the value
  /// is exactly invariant under permuting symmetric groups.
  double value(Side side, std::span<const double> x) const;
  std::vector<double> gradient(Side side, std::span<const double> x) const;

 private:
  struct SideNets {
    std::vector<CouplingGroup> groups;
    CompositeKind composite = CompositeKind::None;
    bool tied = false;
    std::vector<std::unique_ptr<Mlp>> nets;
    const Mlp& net(std::size_t g) const { return *nets[tied ? 0 : g]; }
  };
  static std::size_t index(Side s) noexcept { return s == Side::T ? 0 : 1; }
  std::vector<Var> group_inputs(Tape& tape, const SideNets& s, const CouplingGroup& g, Var x) const;

  int n_bodies_;
  int n_dims_;
  CouplingSpec structure_;
  ParamStore store_;
  SideNets sides_[2];
};

struct SearchConfig {
  double max_tolerable_decrease = 0.10;
  double elimination_tolerance = 0.01;
  int epochs = 3000;
  double lr = 0.0005;
  int horizon = 10;
  int seeds = 3;
  NetShape net;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Training windows start at 0..n-2h-1; the test split is the h samples
/// after index n-h-1, predicted from that sample.
struct DataSplit {
  std::vector<std::size_t> train_starts;
  std::size_t test_start = 0;
};
DataSplit data_split(std::size_t n_samples, int horizon);

struct TrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;  // at the parameters that were scored
  double score = 0.0;
  bool diverged = false;
  Trajectory test_observed;
  Trajectory test_predicted;
};

/// Full-batch Adam on the mean squared error of horizon-step rollouts from
/// every training start, then the reward of the rollout over the test split.
/// A non-finite training loss scores 0.
TrainResult train(SympNet& model, const Dataset& ds, const SearchConfig& cfg);
double train_and_score(SympNet& model, const Dataset& ds, const SearchConfig& cfg);

/// Best score over cfg.seeds initializations.
double score_structure(const Dataset& ds, const CouplingSpec& structure, const SearchConfig& cfg);

struct SearchRow {
  std::string stage;
  std::string T;
  std::string V;
  double score = 0.0;
  double change = std::numeric_limits<double>::quiet_NaN();  // relative to the stage baseline
  bool accepted = false;
};

struct SearchResult {
  CouplingSpec spec;
  std::vector<SearchRow> rows;
  bool degenerate = false;
};

SearchResult coupling_search(const Dataset& ds, const SearchConfig& cfg);

/// Relative change of `score` against `baseline`.
double relative_change(double score, double baseline) noexcept;
std::string describe_side(const CouplingSpec& spec, Side side);
/// Plain-text table: stage, T, V, score, change, accepted.
std::string render_search_table(const SearchResult& result);

}  // namespace sisr
