#pragma once

// Autoregressive sampling of separable Hamiltonians from an LSTM policy.
//
// A candidate is emitted as a flat token sequence made of consecutive
// segments, each a complete pre-order tree. T segments come first, then V.
// Without coupling each side is one segment over all of its coordinates; a
// coupling template yields one segment per subfunction, or one shared segment
// for a symmetric side. When a composite reduction is active the segment's
// only variable is the pseudo-variable u0, replaced by the reduction when the
// candidate is assembled.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sisr/coupling.hpp"
#include "sisr/expr.hpp"
#include "sisr/nn.hpp"

namespace sisr {

struct SampleConstraints {
  int n_bodies = 1;
  int n_dims = 1;
  std::vector<Op> operators{Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow};
  /// Operator-count bounds for every sampled segment.
  int min_ops = 1;
  int max_ops = 8;
  CouplingSpec coupling;

  void validate() const;
};

struct Segment {
  VarRole role = VarRole::Momentum;
  std::vector<std::size_t> variables;  // allowed variable token ids
  std::vector<CouplingGroup> groups;   // subfunctions instantiated from this tree
  CompositeKind composite = CompositeKind::None;
};

class SearchSpace {
 public:
  explicit SearchSpace(SampleConstraints constraints);

  const SampleConstraints& constraints() const noexcept { return c_; }
  const TokenLibrary& library() const noexcept { return lib_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t vocabulary() const noexcept { return lib_.size(); }

  /// Builds T and V from a complete token sequence. Constant slots are
  /// numbered in sequence order; tied subfunctions share slots. Constants are
  /// set to 1 as placeholders.
  HamiltonianCandidate assemble(std::span<const std::size_t> tokens) const;
  /// Segment trees in sequence order (pre-substitution).
  std::vector<ExprTree> segment_trees(std::span<const std::size_t> tokens) const;
  std::vector<std::string> token_symbols(std::span<const std::size_t> tokens) const;

 private:
  SampleConstraints c_;
  TokenLibrary lib_;
  std::vector<Segment> segments_;
};

/// Traversal state while a sequence is generated or replayed.
class SequenceState {
 public:
  explicit SequenceState(const SearchSpace& space);

  bool done() const noexcept { return segment_ >= space_->segments().size(); }
  std::size_t segment() const noexcept { return segment_; }
  int operators() const noexcept { return n_ops_; }
  std::size_t open_slots() const noexcept { return stack_.size(); }
  /// Token id of the parent of the next slot, -1 for a segment root.
  int parent() const;
  /// Root token of the left sibling when the next slot is a right child, else -1.
  int sibling() const;
  /// Writes 1 for every token allowed in the next slot.
  void allowed(std::span<std::uint8_t> mask) const;
  /// Throws Error if the token is not allowed.
  void push(std::size_t token);

 private:
  struct Slot {
    int parent = -1;
    int sibling = -1;
    int notify = -1;  // stack index of the right sibling awaiting this root
  };
  void begin_segment();

  const SearchSpace* space_;
  std::size_t segment_ = 0;
  int n_ops_ = 0;
  std::vector<Slot> stack_;
};

struct SampledCandidate {
  std::vector<std::size_t> tokens;
  std::vector<double> token_log_probs;  // masked policy log-probabilities
  std::vector<std::uint8_t> mutated;
  double log_prob = 0.0;
  double entropy = 0.0;
  HamiltonianCandidate candidate;
};

struct PolicyConfig {
  int layers = 2;
  int hidden = 250;
};

class Policy {
 public:
  Policy(const SearchSpace& space, PolicyConfig cfg, std::uint64_t seed);

  const SearchSpace& space() const noexcept { return *space_; }
  ParamStore& params() noexcept { return store_; }
  const ParamStore& params() const noexcept { return store_; }
  const Lstm& lstm() const noexcept { return lstm_; }

  /// Candidate i draws from its own stream seeded by (seed, first_index + i),
  /// so a candidate does not depend on how many others share its batch.
  std::vector<SampledCandidate> sample(std::size_t count, double mutation_rate, std::uint64_t seed,
                                       std::size_t first_index = 0) const;

  struct Replay {
    std::vector<double> log_prob;
    std::vector<double> entropy;
    Var objective{};  // sum_i w_logp[i] log_prob_i + w_entropy[i] entropy_i
  };
  /// Recomputes masked log-probabilities and entropies along the given
  /// sequences on `tape`. Throws Error if a token is invalid under the mask.
  Replay replay(Tape& tape, std::span<const std::vector<std::size_t>> sequences, std::span<const double> w_logp,
                std::span<const double> w_entropy) const;

 private:
  const SearchSpace* space_;
  ParamStore store_;
  Lstm lstm_;
};

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};

LogProbEntropy log_prob_and_entropy(const Policy& policy, std::span<const std::size_t> tokens);

/// Per-candidate RNG stream derived from a seed and an index.
std::mt19937_64 candidate_rng(std::uint64_t seed, std::uint64_t index);

}  // namespace sisr
