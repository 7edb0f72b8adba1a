#include "sisr/policy.hpp"

#include <algorithm>
#include <cmath>

namespace sisr {

namespace {

ExprTree sum_of(const std::vector<ExprTree>& terms) {
  ExprTree acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ExprTree::binary(Op::Add, acc, terms[i]);
  return acc;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 lstm_rng(std::uint64_t seed) { return std::mt19937_64(splitmix64(seed ^ 0x5157a7e1ULL)); }

}  // namespace

std::mt19937_64 candidate_rng(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(seed) + index));
}

void SampleConstraints::validate() const {
  if (n_bodies < 1 || n_dims < 1) throw ConfigError("constraints: system must have bodies and dimensions");
  if (min_ops < 1 || max_ops < min_ops) throw ConfigError("constraints: need 1 <= min_ops <= max_ops");
  if (operators.empty()) throw ConfigError("constraints: empty operator set");
  coupling.validate(n_bodies, n_dims);
}

// ---------------------------------------------------------------------------
// SearchSpace

namespace {

TokenLibrary make_library(const SampleConstraints& c) {
  std::vector<Token> vars = coordinate_tokens(VarRole::Position, c.n_bodies, c.n_dims);
  for (auto& t : coordinate_tokens(VarRole::Momentum, c.n_bodies, c.n_dims)) vars.push_back(std::move(t));
  if (c.coupling.T_composite != CompositeKind::None || c.coupling.V_composite != CompositeKind::None) {
    vars.push_back(Token::variable(coordinate_name(VarRole::Pseudo, 0, c.n_dims), VarRole::Pseudo, 0));
  }
  return TokenLibrary(c.operators, std::move(vars), true);
}

}  // namespace

SearchSpace::SearchSpace(SampleConstraints constraints) : c_(std::move(constraints)), lib_(make_library(c_)) {
  c_.validate();
  auto add_side = [&](VarRole role, const CouplingForm& form, CompositeKind composite, bool symmetric) {
    auto groups = coupling_groups(form, c_.n_bodies, c_.n_dims);
    auto vars_of = [&](const CouplingGroup& g) {
      std::vector<std::size_t> ids;
      if (composite != CompositeKind::None) {
        ids.push_back(*lib_.find_variable(VarRole::Pseudo, 0));
      } else {
        for (int coord : g.coords) ids.push_back(*lib_.find_variable(role, coord));
      }
      return ids;
    };
    if (symmetric && groups.size() > 1) {
      Segment s{role, vars_of(groups.front()), groups, composite};
      segments_.push_back(std::move(s));
    } else {
      for (auto& g : groups) segments_.push_back(Segment{role, vars_of(g), {g}, composite});
    }
  };
  add_side(VarRole::Momentum, c_.coupling.T_form, c_.coupling.T_composite, c_.coupling.T_symmetric);
  add_side(VarRole::Position, c_.coupling.V_form, c_.coupling.V_composite, c_.coupling.V_symmetric);
}

std::vector<ExprTree> SearchSpace::segment_trees(std::span<const std::size_t> tokens) const {
  std::vector<ExprTree> trees;
  SequenceState st(*this);
  std::size_t begin = 0;
  int slot = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t seg = st.segment();
    st.push(tokens[i]);
    if (st.done() || st.segment() != seg) {
      ExprTree t = parse_preorder_ids(tokens.subspan(begin, i + 1 - begin), lib_, slot);
      slot = std::max(slot, t.slot_count());
      trees.push_back(std::move(t));
      begin = i + 1;
      if (st.done() && i + 1 != tokens.size()) {
        throw ParseError(ParseError::Kind::TrailingTokens, i + 1, "tokens after the final segment");
      }
    }
  }
  if (!st.done()) throw ParseError(ParseError::Kind::IncompleteSequence, tokens.size(), "sequence ends early");
  return trees;
}

HamiltonianCandidate SearchSpace::assemble(std::span<const std::size_t> tokens) const {
  const auto trees = segment_trees(tokens);
  std::vector<ExprTree> t_terms, v_terms;
  for (std::size_t s = 0; s < segments_.size(); ++s) {
    const Segment& seg = segments_[s];
    const ExprTree& tree = trees[s];
    const CouplingGroup& first = seg.groups.front();
    for (const CouplingGroup& g : seg.groups) {
      ExprTree inst;
      if (seg.composite != CompositeKind::None) {
        const ExprTree reduced = composite_expr(seg.composite, g, seg.role, c_.n_dims);
        inst = tree.substitute(VarRole::Pseudo, [&](int) { return reduced; });
      } else if (&g == &first) {
        inst = tree;
      } else {
        inst = tree.substitute(seg.role, [&](int coord) {
          const auto pos = std::find(first.coords.begin(), first.coords.end(), coord) - first.coords.begin();
          return ExprTree::variable(seg.role, g.coords[static_cast<std::size_t>(pos)]);
        });
      }
      (seg.role == VarRole::Momentum ? t_terms : v_terms).push_back(std::move(inst));
    }
  }
  HamiltonianCandidate hc;
  hc.T = sum_of(t_terms);
  hc.V = sum_of(v_terms);
  hc.n_bodies = c_.n_bodies;
  hc.n_dims = c_.n_dims;
  hc.constants.assign(static_cast<std::size_t>(std::max(hc.T.slot_count(), hc.V.slot_count())), 1.0);
  return hc;
}

std::vector<std::string> SearchSpace::token_symbols(std::span<const std::size_t> tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (std::size_t t : tokens) out.push_back(lib_.at(t).symbol);
  return out;
}

// ---------------------------------------------------------------------------
// SequenceState

SequenceState::SequenceState(const SearchSpace& space) : space_(&space) { begin_segment(); }

void SequenceState::begin_segment() {
  n_ops_ = 0;
  stack_.clear();
  if (!done()) stack_.push_back(Slot{});
}

int SequenceState::parent() const { return stack_.empty() ? -1 : stack_.back().parent; }
int SequenceState::sibling() const { return stack_.empty() ? -1 : stack_.back().sibling; }

void SequenceState::allowed(std::span<std::uint8_t> mask) const {
  std::fill(mask.begin(), mask.end(), std::uint8_t{0});
  if (done()) return;
  const auto& c = space_->constraints();
  const TokenLibrary& lib = space_->library();
  if (n_ops_ + 1 <= c.max_ops) {
    for (std::size_t i = 0; i < lib.n_operators(); ++i) mask[i] = 1;
  }
  const bool closes = stack_.size() == 1;
  if (closes && n_ops_ < c.min_ops) return;
  for (std::size_t v : space_->segments()[segment_].variables) mask[v] = 1;
  if (auto k = lib.const_index()) mask[*k] = 1;
}

void SequenceState::push(std::size_t token) {
  if (done()) throw Error("token after the sequence is complete");
  std::vector<std::uint8_t> mask(space_->vocabulary());
  allowed(mask);
  if (token >= mask.size() || !mask[token]) throw Error("token invalid under mask");
  const Slot slot = stack_.back();
  stack_.pop_back();
  const int id = static_cast<int>(token);
  if (slot.notify >= 0) stack_[static_cast<std::size_t>(slot.notify)].sibling = id;
  const int a = space_->library().at(token).arity();
  if (a > 0) ++n_ops_;
  if (a == 2) {
    stack_.push_back(Slot{id, -1, -1});
    stack_.push_back(Slot{id, -1, static_cast<int>(stack_.size() - 1)});
  } else if (a == 1) {
    stack_.push_back(Slot{id, -1, -1});
  }
  if (stack_.empty()) {
    ++segment_;
    begin_segment();
  }
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(const SearchSpace& space, PolicyConfig cfg, std::uint64_t seed)
    : space_(&space), lstm_([&] {
        auto rng = lstm_rng(seed);
        const int v = static_cast<int>(space.vocabulary());
        return Lstm(store_, "policy", LstmConfig{cfg.layers, cfg.hidden, 2 * v, v}, rng);
      }()) {}

std::vector<SampledCandidate> Policy::sample(std::size_t count, double mutation_rate, std::uint64_t seed,
                                             std::size_t first_index) const {
  if (!(mutation_rate >= 0.0 && mutation_rate < 1.0)) throw ConfigError("mutation rate must lie in [0, 1)");
  const auto v = static_cast<Eigen::Index>(space_->vocabulary());
  std::vector<SampledCandidate> out(count);
  std::vector<SequenceState> states(count, SequenceState(*space_));
  std::vector<std::mt19937_64> rngs;
  rngs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) rngs.push_back(candidate_rng(seed, first_index + i));

  // Initial state values, broadcast over the batch.
  Tape tape(false);
  std::vector<Matrix> h, c;
  {
    auto st = lstm_.initial_state(tape, static_cast<Eigen::Index>(count));
    for (std::size_t l = 0; l < st.h.size(); ++l) {
      h.push_back(tape.value(st.h[l]));
      c.push_back(tape.value(st.c[l]));
    }
  }
  std::vector<std::size_t> active(count);
  for (std::size_t i = 0; i < count; ++i) active[i] = i;

  std::vector<int> hot_a, hot_b;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(v));
  std::vector<double> probs(static_cast<std::size_t>(v));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (!active.empty()) {
    const auto n = static_cast<Eigen::Index>(active.size());
    hot_a.resize(active.size());
    hot_b.resize(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const SequenceState& s = states[active[k]];
      hot_a[k] = s.parent();
      hot_b[k] = s.sibling() < 0 ? -1 : s.sibling() + static_cast<int>(v);
    }
    tape.clear();
    Lstm::State st;
    for (std::size_t l = 0; l < h.size(); ++l) {
      st.h.push_back(tape.input(h[l]));
      st.c.push_back(tape.input(c[l]));
    }
    const Matrix logits = tape.value(lstm_.step(tape, hot_a, hot_b, st));

    std::vector<std::size_t> keep;
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t i = active[static_cast<std::size_t>(k)];
      SequenceState& s = states[i];
      s.allowed(mask);
      std::span<const double> col(logits.data() + k * v, static_cast<std::size_t>(v));
      const SoftmaxColumn sc = masked_softmax(col, mask, probs);
      auto& rng = rngs[i];
      const bool mutate = unit(rng) < mutation_rate;
      const double u = unit(rng);
      std::size_t chosen = 0;
      if (mutate) {
        std::size_t n_allowed = 0;
        for (auto m : mask) n_allowed += m;
        auto target = static_cast<std::size_t>(u * static_cast<double>(n_allowed));
        target = std::min(target, n_allowed - 1);
        for (std::size_t j = 0; j < mask.size(); ++j) {
          if (!mask[j]) continue;
          if (target-- == 0) {
            chosen = j;
            break;
          }
        }
      } else {
        double acc = 0.0;
        std::size_t last = 0;
        bool picked = false;
        for (std::size_t j = 0; j < probs.size(); ++j) {
          if (!mask[j]) continue;
          last = j;
          acc += probs[j];
          if (u < acc) {
            chosen = j;
            picked = true;
            break;
          }
        }
        if (!picked) chosen = last;
      }
      const double lp = col[chosen] - sc.max_logit - sc.log_sum;
      SampledCandidate& sc_out = out[i];
      sc_out.tokens.push_back(chosen);
      sc_out.token_log_probs.push_back(lp);
      sc_out.mutated.push_back(mutate ? 1 : 0);
      sc_out.log_prob += lp;
      sc_out.entropy += sc.entropy;
      s.push(chosen);
      if (!s.done()) keep.push_back(static_cast<std::size_t>(k));
    }

    // Carry the new state forward for unfinished candidates only.
    for (std::size_t l = 0; l < h.size(); ++l) {
      const Matrix& hn = tape.value(st.h[l]);
      const Matrix& cn = tape.value(st.c[l]);
      h[l].resize(hn.rows(), static_cast<Eigen::Index>(keep.size()));
      c[l].resize(cn.rows(), static_cast<Eigen::Index>(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) {
        h[l].col(static_cast<Eigen::Index>(k)) = hn.col(static_cast<Eigen::Index>(keep[k]));
        c[l].col(static_cast<Eigen::Index>(k)) = cn.col(static_cast<Eigen::Index>(keep[k]));
      }
    }
    std::vector<std::size_t> next;
    next.reserve(keep.size());
    for (std::size_t k : keep) next.push_back(active[k]);
    active = std::move(next);
  }
  for (auto& s : out) s.candidate = space_->assemble(s.tokens);
  return out;
}

Policy::Replay Policy::replay(Tape& tape, std::span<const std::vector<std::size_t>> sequences,
                              std::span<const double> w_logp, std::span<const double> w_entropy) const {
  const std::size_t b = sequences.size();
  if (w_logp.size() != b || w_entropy.size() != b) throw ShapeMismatch("replay: weight count differs");
  Replay r;
  r.log_prob.assign(b, 0.0);
  r.entropy.assign(b, 0.0);
  if (b == 0) return r;
  const auto v = static_cast<Eigen::Index>(space_->vocabulary());
  std::size_t steps = 0;
  for (const auto& s : sequences) steps = std::max(steps, s.size());
  std::vector<SequenceState> states(b, SequenceState(*space_));
  auto st = lstm_.initial_state(tape, static_cast<Eigen::Index>(b));
  std::vector<int> hot_a(b), hot_b(b), chosen(b);
  Mask mask(v, static_cast<Eigen::Index>(b));
  Matrix w(2, static_cast<Eigen::Index>(b));
  bool have = false;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < b; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      std::span<std::uint8_t> m(mask.data() + col * v, static_cast<std::size_t>(v));
      if (t < sequences[i].size()) {
        if (states[i].done()) throw Error("token after the sequence is complete");
        hot_a[i] = states[i].parent();
        hot_b[i] = states[i].sibling() < 0 ? -1 : states[i].sibling() + static_cast<int>(v);
        states[i].allowed(m);
        chosen[i] = static_cast<int>(sequences[i][t]);
        w(0, col) = w_logp[i];
        w(1, col) = w_entropy[i];
      } else {
        hot_a[i] = hot_b[i] = chosen[i] = -1;
        std::fill(m.begin(), m.end(), std::uint8_t{1});
        w(0, col) = w(1, col) = 0.0;
      }
    }
    Var logits = lstm_.step(tape, hot_a, hot_b, st);
    Var terms = tape.masked_logprob_entropy(logits, mask, chosen);
    const Matrix& val = tape.value(terms);
    for (std::size_t i = 0; i < b; ++i) {
      if (chosen[i] < 0) continue;
      r.log_prob[i] += val(0, static_cast<Eigen::Index>(i));
      r.entropy[i] += val(1, static_cast<Eigen::Index>(i));
      states[i].push(sequences[i][t]);
    }
    if (tape.recording()) {
      Var term = tape.dot_const(terms, w);
      r.objective = have ? tape.add(r.objective, term) : term;
      have = true;
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (!states[i].done()) throw Error("replayed sequence is incomplete");
  }
  return r;
}

LogProbEntropy log_prob_and_entropy(const Policy& policy, std::span<const std::size_t> tokens) {
  Tape tape(false);
  std::vector<std::vector<std::size_t>> seqs{std::vector<std::size_t>(tokens.begin(), tokens.end())};
  const double zero = 0.0;
  auto r = policy.replay(tape, seqs, std::span<const double>(&zero, 1), std::span<const double>(&zero, 1));
  return {r.log_prob[0], r.entropy[0]};
}

}  // namespace sisr
