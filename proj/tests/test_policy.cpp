#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>

#include "sisr/policy.hpp"

using namespace sisr;

namespace {

SampleConstraints oscillator_constraints() { return SampleConstraints{}; }

SampleConstraints pendulum_constraints() {
  SampleConstraints c;
  c.operators = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow, Op::Cos, Op::Sin};
  return c;
}

CouplingSpec gravity_priors() {
  CouplingSpec s;
  s.T_form.kind = CouplingForm::Kind::CompleteDecoupling;
  s.T_symmetric = true;
  s.V_form.kind = CouplingForm::Kind::Pairwise;
  s.V_composite = CompositeKind::Euclidean;
  s.V_symmetric = true;
  return s;
}

SampleConstraints gravity_constraints(int bodies, bool priors) {
  SampleConstraints c;
  c.n_bodies = bodies;
  c.n_dims = 2;
  c.max_ops = bodies == 2 ? 12 : 18;
  if (priors) c.coupling = gravity_priors();
  return c;
}

PolicyConfig small() { return PolicyConfig{2, 16}; }

std::size_t mask_count(const SequenceState& s, std::size_t v) {
  std::vector<std::uint8_t> m(v);
  s.allowed(m);
  std::size_t n = 0;
  for (auto x : m) n += x;
  return n;
}

// Checks segment structure, bounds and separability of one sample.
void expect_valid(const SearchSpace& space, const SampledCandidate& s) {
  const auto& c = space.constraints();
  ASSERT_NO_THROW(s.candidate.validate());
  const auto trees = space.segment_trees(s.tokens);
  ASSERT_EQ(trees.size(), space.segments().size());
  for (std::size_t k = 0; k < trees.size(); ++k) {
    const Segment& seg = space.segments()[k];
    const int ops = trees[k].operator_count();
    EXPECT_GE(ops, c.min_ops);
    EXPECT_LE(ops, c.max_ops);
    for (const Node& n : trees[k].nodes()) {
      if (n.kind != Node::Kind::Variable) continue;
      const auto id = *space.library().find_variable(n.role, n.index);
      EXPECT_NE(std::find(seg.variables.begin(), seg.variables.end(), id), seg.variables.end());
    }
  }
  EXPECT_FALSE(s.candidate.T.uses(VarRole::Position));
  EXPECT_FALSE(s.candidate.V.uses(VarRole::Momentum));
  EXPECT_FALSE(s.candidate.T.uses(VarRole::Pseudo));
  EXPECT_FALSE(s.candidate.V.uses(VarRole::Pseudo));
  // Round trip through the token strings.
  std::vector<std::string> syms = space.token_symbols(s.tokens);
  EXPECT_EQ(syms.size(), s.tokens.size());
}

}  // namespace

TEST(SearchSpace, SegmentsFollowTemplate) {
  SearchSpace plain(gravity_constraints(2, false));
  ASSERT_EQ(plain.segments().size(), 2u);
  EXPECT_EQ(plain.segments()[0].variables.size(), 4u);
  SearchSpace priors(gravity_constraints(3, true));
  ASSERT_EQ(priors.segments().size(), 2u);
  EXPECT_EQ(priors.segments()[0].groups.size(), 6u);
  EXPECT_EQ(priors.segments()[1].groups.size(), 3u);
  ASSERT_EQ(priors.segments()[1].variables.size(), 1u);
  EXPECT_EQ(priors.library().at(priors.segments()[1].variables[0]).symbol, "u0");
  auto c = gravity_constraints(2, true);
  c.coupling.T_symmetric = false;
  SearchSpace asym(c);
  EXPECT_EQ(asym.segments().size(), 5u);
}

TEST(SearchSpace, AssembleInstantiatesTiedSubfunctions) {
  SearchSpace space(gravity_constraints(2, true));
  const auto& lib = space.library();
  auto id = [&](const char* s) { return *lib.find(s); };
  // T: div(mul(p1x, p1x), const); V: div(const, u0)
  std::vector<std::size_t> toks{id("div"), id("mul"), id("p1x"), id("p1x"), id("const"),
                                id("div"), id("const"), id("u0")};
  auto hc = space.assemble(toks);
  ASSERT_EQ(hc.constants.size(), 2u);
  hc.constants = {2.0, -1.0};
  std::vector<double> q{0.0, 0.0, 3.0, 4.0}, p{1.0, 2.0, 3.0, 4.0};
  Bindings at{q, p, {}};
  EXPECT_DOUBLE_EQ(eval(hc.T, at, hc.constants), (1 + 4 + 9 + 16) / 2.0);
  EXPECT_DOUBLE_EQ(eval(hc.V, at, hc.constants), -1.0 / 5.0);
  EXPECT_EQ(hc.T.slot_count(), 1);
}

TEST(Mask, SingleValidTokenHasProbabilityOne) {
  SampleConstraints c;
  c.operators = {Op::Cos};
  c.min_ops = c.max_ops = 1;
  SearchSpace space(c);
  SequenceState s(space);
  EXPECT_EQ(mask_count(s, space.vocabulary()), 1u);
  Policy policy(space, small(), 1);
  auto samples = policy.sample(20, 0.0, 3);
  for (const auto& smp : samples) {
    EXPECT_EQ(smp.tokens[0], *space.library().find("cos"));
    EXPECT_EQ(smp.token_log_probs[0], 0.0);
  }
  std::vector<double> logits{0.3, -1.0, 2.0}, probs(3);
  std::vector<std::uint8_t> m{0, 1, 0};
  auto col = masked_softmax(logits, m, probs);
  EXPECT_EQ(probs[1], 1.0);
  EXPECT_EQ(col.entropy, 0.0);
}

TEST(Mask, BudgetBoundaries) {
  SampleConstraints c;
  c.min_ops = 2;
  c.max_ops = 3;
  SearchSpace space(c);
  const auto& lib = space.library();
  std::vector<std::uint8_t> m(space.vocabulary());
  SequenceState s(space);
  s.allowed(m);
  for (std::size_t i = lib.n_operators(); i < m.size(); ++i) EXPECT_EQ(m[i], 0);  // must open
  s.push(*lib.find("add"));
  s.push(*lib.find("mul"));
  s.push(*lib.find("sub"));
  s.allowed(m);
  for (std::size_t i = 0; i < lib.n_operators(); ++i) EXPECT_EQ(m[i], 0) << "budget exhausted";
  EXPECT_EQ(m[*lib.find("p1x")], 1);
  EXPECT_EQ(m[*lib.find("q1x")], 0);
  EXPECT_THROW(s.push(*lib.find("q1x")), Error);
  // Closing one operator short of min_ops is refused.
  SequenceState t(space);
  t.push(*lib.find("mul"));
  t.push(*lib.find("p1x"));
  t.allowed(m);
  EXPECT_EQ(m[*lib.find("const")], 0);
  EXPECT_EQ(m[*lib.find("add")], 1);
}

TEST(Mask, ParentAndSiblingInputs) {
  SearchSpace space(oscillator_constraints());
  const auto& lib = space.library();
  const int add = static_cast<int>(*lib.find("add")), mul = static_cast<int>(*lib.find("mul"));
  const int p = static_cast<int>(*lib.find("p1x"));
  SequenceState s(space);
  EXPECT_EQ(s.parent(), -1);
  s.push(static_cast<std::size_t>(add));
  EXPECT_EQ(s.parent(), add);
  EXPECT_EQ(s.sibling(), -1);
  s.push(static_cast<std::size_t>(mul));  // left child of add
  s.push(static_cast<std::size_t>(p));
  EXPECT_EQ(s.sibling(), p);  // right child of mul
  EXPECT_EQ(s.parent(), mul);
  s.push(static_cast<std::size_t>(p));
  EXPECT_EQ(s.parent(), add);
  EXPECT_EQ(s.sibling(), mul);  // root of the left subtree
}

TEST(Sampler, ValidityOnManySamples) {
  const std::vector<SampleConstraints> configs{oscillator_constraints(), pendulum_constraints(),
                                               gravity_constraints(2, true), gravity_constraints(3, true),
                                               gravity_constraints(2, false)};
  for (const auto& c : configs) {
    SearchSpace space(c);
    Policy policy(space, small(), 11);
    auto samples = policy.sample(2000, 0.05, 12);
    for (const auto& s : samples) expect_valid(space, s);
  }
}

TEST(Sampler, PendulumKineticNeverUsesPositions) {
  SearchSpace space(pendulum_constraints());
  Policy policy(space, small(), 2);
  auto samples = policy.sample(10000, 0.05, 5);
  for (const auto& s : samples) {
    ASSERT_FALSE(s.candidate.T.uses(VarRole::Position));
    ASSERT_FALSE(s.candidate.V.uses(VarRole::Momentum));
  }
}

TEST(Sampler, MutationRate) {
  SearchSpace space(oscillator_constraints());
  Policy policy(space, small(), 3);
  std::size_t tokens = 0, mutated = 0;
  std::uint64_t seed = 0;
  while (tokens < 100000) {
    for (const auto& s : policy.sample(500, 0.05, seed++)) {
      tokens += s.tokens.size();
      for (auto m : s.mutated) mutated += m;
    }
  }
  const double rate = static_cast<double>(mutated) / static_cast<double>(tokens);
  EXPECT_GE(rate, 0.03);
  EXPECT_LE(rate, 0.07);
  for (const auto& s : policy.sample(50, 0.999999, 4)) {
    for (auto m : s.mutated) EXPECT_EQ(m, 1);
  }
  EXPECT_THROW(policy.sample(1, 1.0, 0), ConfigError);
}

TEST(Sampler, DeterministicAndBatchIndependent) {
  SearchSpace space(pendulum_constraints());
  Policy policy(space, small(), 4);
  auto a = policy.sample(40, 0.05, 77);
  auto b = policy.sample(40, 0.05, 77);
  auto tail = policy.sample(10, 0.05, 77, 30);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].log_prob, b[i].log_prob);
  }
  for (std::size_t i = 0; i < tail.size(); ++i) {
    EXPECT_EQ(tail[i].tokens, a[30 + i].tokens);
    EXPECT_EQ(tail[i].log_prob, a[30 + i].log_prob);
  }
}

TEST(Sampler, NearOneHotPolicyRepeatsCandidate) {
  SearchSpace space(oscillator_constraints());
  Policy policy(space, small(), 5);
  for (auto& p : policy.params().params()) p.value.setZero();
  Param* bo = policy.params().find("policy.bo");
  ASSERT_NE(bo, nullptr);
  for (Eigen::Index j = 0; j < bo->value.rows(); ++j) bo->value(j, 0) = 40.0 * static_cast<double>(j);
  auto a = policy.sample(5, 0.0, 1);
  auto b = policy.sample(5, 0.0, 999);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[0].tokens);
}

TEST(Replay, BitIdenticalToSampling) {
  for (const auto& c : {pendulum_constraints(), gravity_constraints(3, true)}) {
    SearchSpace space(c);
    Policy policy(space, PolicyConfig{2, 24}, 6);
    auto samples = policy.sample(60, 0.3, 8);
    std::vector<std::vector<std::size_t>> seqs;
    for (const auto& s : samples) seqs.push_back(s.tokens);
    Tape tape(false);
    std::vector<double> zeros(seqs.size(), 0.0);
    auto r = policy.replay(tape, seqs, zeros, zeros);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      EXPECT_EQ(r.log_prob[i], samples[i].log_prob);
      EXPECT_EQ(r.entropy[i], samples[i].entropy);
      auto single = log_prob_and_entropy(policy, samples[i].tokens);
      EXPECT_EQ(single.log_prob, samples[i].log_prob);
    }
  }
}

TEST(Replay, UniformPolicyClosedForm) {
  SearchSpace space(gravity_constraints(2, false));
  Policy policy(space, small(), 7);
  for (auto& p : policy.params().params()) p.value.setZero();
  for (const auto& s : policy.sample(30, 0.05, 9)) {
    SequenceState st(space);
    double expected = 0.0;
    for (std::size_t t : s.tokens) {
      expected += std::log(static_cast<double>(mask_count(st, space.vocabulary())));
      st.push(t);
    }
    auto r = log_prob_and_entropy(policy, s.tokens);
    EXPECT_NEAR(r.log_prob, -expected, 1e-12);
    EXPECT_NEAR(r.entropy, expected, 1e-12);
  }
}

TEST(Replay, TokenInvalidUnderMaskIsReported) {
  SearchSpace space(oscillator_constraints());
  Policy policy(space, small(), 8);
  // A bare variable closes the tree below min_ops.
  std::vector<std::size_t> bogus{*space.library().find("q1x")};
  EXPECT_THROW(log_prob_and_entropy(policy, bogus), Error);
  // A kinetic segment that references a position.
  std::vector<std::size_t> crossed{*space.library().find("mul"), *space.library().find("q1x")};
  EXPECT_THROW(log_prob_and_entropy(policy, crossed), Error);
}

TEST(Replay, ProbabilitiesSumToOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  std::vector<double> logits(17), probs(17);
  std::vector<std::uint8_t> m(17);
  for (int trial = 0; trial < 200; ++trial) {
    for (std::size_t j = 0; j < 17; ++j) {
      logits[j] = n(rng);
      m[j] = (rng() % 3) != 0;
    }
    m[trial % 17] = 1;
    masked_softmax(logits, m, probs);
    double sum = 0.0;
    for (double p : probs) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Replay, LogProbGradientMatchesFiniteDifferences) {
  SearchSpace space(pendulum_constraints());
  Policy policy(space, PolicyConfig{2, 6}, 10);
  for (auto& p : policy.params().params()) {
    if (p.value.cols() == 1) {
      std::mt19937_64 r(3);
      std::normal_distribution<double> n(0.0, 0.3);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(r);
    }
  }
  auto samples = policy.sample(4, 0.1, 2);
  std::vector<std::vector<std::size_t>> seqs;
  for (const auto& s : samples) seqs.push_back(s.tokens);
  const std::vector<double> wl{0.7, -0.2, 1.1, 0.4}, we{0.05, 0.05, -0.3, 0.2};
  auto loss = [&] {
    Tape t(false);
    auto r = policy.replay(t, seqs, wl, we);
    double s = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) s += wl[i] * r.log_prob[i] + we[i] * r.entropy[i];
    return s;
  };
  ParamStore& store = policy.params();
  store.zero_grad();
  {
    Tape t;
    auto r = policy.replay(t, seqs, wl, we);
    t.backward(r.objective);
  }
  std::mt19937_64 rng(5);
  int checked = 0;
  while (checked < 25) {
    Param& p = store.params()[rng() % store.size()];
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p.value.size()));
    const double x = p.value.data()[i], h = 1e-5;
    p.value.data()[i] = x + h;
    const double fp = loss();
    p.value.data()[i] = x - h;
    const double fm = loss();
    p.value.data()[i] = x;
    const double fd = (fp - fm) / (2 * h), an = p.grad.data()[i];
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    EXPECT_LT(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-4) << p.name;
    ++checked;
  }
}
