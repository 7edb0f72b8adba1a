// Acceptance suite: one PASS/FAIL line per criterion. Criteria 6 to 9 are slow
// and run only with --slow or SISR_SLOW_TESTS=1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sisr/discovery.hpp"
#include "sisr/priors.hpp"

using namespace sisr;

namespace {

// Pinned tolerances.
constexpr double kSlopeLo = 3.7, kSlopeHi = 4.3;
constexpr double kFreeDrift = 1e-15;
constexpr double kFdRelErr = 1e-3;
constexpr int kFdInstances = 10;
constexpr double kEnergyRel = 1e-6;
constexpr double kMomentumAbs = 1e-8;
constexpr int kSamplerDraws = 10000;
constexpr double kMutationLo = 0.03, kMutationHi = 0.07;
constexpr double kEquivTol = 1e-2;
constexpr double kSearchTolerance = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// ---------------------------------------------------------------- 1
Outcome integrator_order() {
  GradientField f;
  f.n_coords = 1;
  f.dT_dp = [](std::span<const double> p, std::span<double> out) {
    out[0] = p[0];
    return true;
  };
  f.dV_dq = [](std::span<const double> q, std::span<double> out) {
    out[0] = q[0];
    return true;
  };
  auto period_error = [&](int n) {
    const double h = 2 * std::numbers::pi / n;
    std::vector<double> q{1.0}, p{0.0};
    for (int i = 0; i < n; ++i) step4(q, p, h, f);
    return std::hypot(q[0] - 1.0, p[0]);
  };
  const double slope = std::log(period_error(32) / period_error(256)) / std::log(8.0);

  GradientField free = f;
  free.dV_dq = [](std::span<const double>, std::span<double> out) {
    out[0] = 0.0;
    return true;
  };
  std::vector<double> q{0.3}, p{1.7};
  const double h = 0.01;
  step4(q, p, h, free);
  const double drift = std::max(std::abs(q[0] - (0.3 + h * 1.7)), std::abs(p[0] - 1.7));
  return {slope >= kSlopeLo && slope <= kSlopeHi && drift <= kFreeDrift,
          fmt("slope %.3f in [%.1f, %.1f]; free-particle drift %.1e", slope, kSlopeLo, kSlopeHi, drift)};
}

// ---------------------------------------------------------------- 2
ExprTree random_tree(std::mt19937_64& rng, int n_ops, VarRole role, int& slot) {
  static const std::vector<Op> ops{Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow, Op::Cos, Op::Sin};
  if (n_ops == 0) {
    if (std::bernoulli_distribution(0.35)(rng)) return ExprTree::constant(slot++);
    return ExprTree::variable(role, 0);
  }
  const Op op = ops[std::uniform_int_distribution<std::size_t>(0, ops.size() - 1)(rng)];
  if (arity(op) == 1) return ExprTree::unary(op, random_tree(rng, n_ops - 1, role, slot));
  const int left = std::uniform_int_distribution<int>(0, n_ops - 1)(rng);
  ExprTree a = random_tree(rng, left, role, slot);
  return ExprTree::binary(op, a, random_tree(rng, n_ops - 1 - left, role, slot));
}

// Worst relative error over `count` instances of central differences
// against the analytic const tangents (value and d/dp).
double const_tangent_error(int count) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pu(0.2, 1.7), cu(0.3, 1.7);
  double worst = 0.0;
  int done = 0;
  while (done < count) {
    int slots = 0;
    const ExprTree t = random_tree(rng, 6, VarRole::Momentum, slots);
    if (slots == 0) continue;
    std::vector<double> c(static_cast<std::size_t>(slots));
    for (double& v : c) v = cu(rng);
    const std::vector<double> p{pu(rng)};
    const Bindings at{{}, p, {}};
    const std::vector<int> wrt{0};
    try {
      const ConstTangents r = const_tangents(t, at, c, VarRole::Momentum, wrt);
      double local = 0.0;
      bool usable = std::abs(r.value) < 1e3 && std::abs(r.grad[0]) < 1e3;
      for (std::size_t s = 0; s < c.size() && usable; ++s) {
        const double h = 1e-6;
        auto cp = c, cm = c;
        cp[s] += h;
        cm[s] -= h;
        const auto a = const_tangents(t, at, cp, VarRole::Momentum, wrt);
        const auto b = const_tangents(t, at, cm, VarRole::Momentum, wrt);
        const double fv = (a.value - b.value) / (2 * h), fg = (a.grad[0] - b.grad[0]) / (2 * h);
        // Skip points where differencing is ill-conditioned.
        if (std::abs(fv) > 1e4 || std::abs(fg) > 1e4) usable = false;
        local = std::max({local, rel_err(r.value_dc[s], fv), rel_err(r.grad_dc[0][s], fg)});
      }
      if (!usable) continue;
      worst = std::max(worst, local);
      ++done;
    } catch (const DomainError&) {
    }
  }
  return worst;
}

// Worst relative error of `count` randomly chosen parameter gradients.
double param_fd_error(ParamStore& store, const std::function<double()>& loss, const std::function<void()>& grads,
                      int count, std::uint64_t seed) {
  store.zero_grad();
  grads();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  int done = 0;
  while (done < count) {
    Param& p = store.params()[std::uniform_int_distribution<std::size_t>(0, store.size() - 1)(rng)];
    const Eigen::Index i = std::uniform_int_distribution<Eigen::Index>(0, p.value.size() - 1)(rng);
    const double x = p.value.data()[i], h = 1e-5;
    p.value.data()[i] = x + h;
    const double fp = loss();
    p.value.data()[i] = x - h;
    const double fm = loss();
    p.value.data()[i] = x;
    const double fd = (fp - fm) / (2 * h), an = p.grad.data()[i];
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    worst = std::max(worst, rel_err(an, fd));
    ++done;
  }
  return worst;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double mlp_error(int count) {
  ParamStore store;
  std::mt19937_64 rng(31);
  Mlp mlp(store, "m", MlpConfig{3, 12, 3, 1}, rng);
  for (auto& p : store.params()) {
    if (p.value.cols() == 1) p.value = random_matrix(p.value.rows(), 1, rng) * 0.1;
  }
  const Matrix x = random_matrix(3, 5, rng);
  // Loss on both the output and its input gradient, as in SympNet training.
  auto build = [&](Tape& t) {
    auto o = mlp.forward_with_input_grad(t, t.input(x));
    return t.add(t.sum_all(t.cmul(o.y, o.y)), t.sum_all(t.cmul(o.dy_dx, o.dy_dx)));
  };
  return param_fd_error(
      store,
      [&] {
        Tape t(false);
        return t.value(build(t))(0, 0);
      },
      [&] {
        Tape t;
        t.backward(build(t));
      },
      count, 32);
}

double lstm_error(int count) {
  ParamStore store;
  std::mt19937_64 rng(41);
  Lstm lstm(store, "p", LstmConfig{2, 6, 8, 4}, rng);
  for (auto& p : store.params()) {
    if (p.value.cols() == 1) p.value = random_matrix(p.value.rows(), 1, rng) * 0.3;
  }
  const std::vector<std::vector<int>> as{{0, 2}, {1, 3}, {3, 0}, {2, 2}, {0, 1}};
  const std::vector<std::vector<int>> bs{{-1, 5}, {4, -1}, {6, 7}, {5, 4}, {7, -1}};
  const Matrix w = random_matrix(4, 2, rng);
  auto build = [&](Tape& t) {
    auto st = lstm.initial_state(t, 2);
    Var total{};
    for (std::size_t s = 0; s < as.size(); ++s) {
      Var term = t.dot_const(lstm.step(t, as[s], bs[s], st), w);
      total = s == 0 ? term : t.add(total, term);
    }
    return total;
  };
  return param_fd_error(
      store,
      [&] {
        Tape t(false);
        return t.value(build(t))(0, 0);
      },
      [&] {
        Tape t;
        t.backward(build(t));
      },
      count, 42);
}

// Constant gradients of the loss of a rollout over the whole trajectory.
double rollout_error(int count) {
  const SystemSpec spec = builtin_system(SystemKind::Pendulum, 1);
  const Dataset ds = generate(spec);
  const HamiltonianCandidate h = parse_infix_hamiltonian("(p1x * p1x) / 2.5 - 3.1 * cos(q1x) + 0.4 * q1x", 1, 1);
  const CompiledCandidate cc(h);
  const int horizon = static_cast<int>(ds.samples.size()) - 1;
  const std::vector<std::size_t> starts{0};
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  double worst = 0.0;
  for (int k = 0; k < count; ++k) {
    std::vector<double> c = h.constants;
    for (double& v : c) v *= jitter(rng);
    const auto r = rollout_loss_and_const_grads(cc, c, ds.samples, horizon, 1, starts);
    if (!r.valid) return INFINITY;
    for (std::size_t s = 0; s < c.size(); ++s) {
      const double step = 1e-6 * std::max(1.0, std::abs(c[s]));
      auto cp = c, cm = c;
      cp[s] += step;
      cm[s] -= step;
      const double fd = (rollout_loss_and_const_grads(cc, cp, ds.samples, horizon, 1, starts).loss -
                         rollout_loss_and_const_grads(cc, cm, ds.samples, horizon, 1, starts).loss) /
                        (2 * step);
      worst = std::max(worst, rel_err(r.grad[s], fd));
    }
  }
  return worst;
}

Outcome gradient_fidelity() {
  const double e_const = const_tangent_error(kFdInstances);
  const double e_mlp = mlp_error(kFdInstances);
  const double e_lstm = lstm_error(kFdInstances);
  const double e_roll = rollout_error(kFdInstances);
  const double worst = std::max({e_const, e_mlp, e_lstm, e_roll});
  return {worst < kFdRelErr, fmt("max rel err: const tangents %.1e, MLP %.1e, LSTM %.1e, rollout %.1e (< %.0e)",
                                 e_const, e_mlp, e_lstm, e_roll, kFdRelErr)};
}

// ---------------------------------------------------------------- 3
struct Conservation {
  double energy = 0.0;
  double momentum = 0.0;
};

Conservation conservation(const Dataset& ds) {
  const SystemSpec& s = ds.spec;
  const auto& tr = ds.samples;
  const std::size_t n = static_cast<std::size_t>(s.n_coords());
  std::vector<double> q(n), p(n);
  auto load = [&](Eigen::Index r) {
    for (std::size_t c = 0; c < n; ++c) {
      q[c] = tr.q(r, static_cast<Eigen::Index>(c));
      p[c] = tr.p(r, static_cast<Eigen::Index>(c));
    }
  };
  load(0);
  const double h0 = hamiltonian_value(s, q, p);
  Conservation out;
  for (Eigen::Index r = 1; r < tr.size(); ++r) {
    load(r);
    out.energy = std::max(out.energy, std::abs(hamiltonian_value(s, q, p) - h0) / std::abs(h0));
    if (s.n_bodies() > 1) {
      for (int d = 0; d < s.n_dims(); ++d) {
        double p0 = 0, p1 = 0;
        for (int b = 0; b < s.n_bodies(); ++b) {
          p0 += tr.p(0, b * s.n_dims() + d);
          p1 += tr.p(r, b * s.n_dims() + d);
        }
        out.momentum = std::max(out.momentum, std::abs(p1 - p0));
      }
    }
  }
  return out;
}

Outcome data_generation() {
  int generated = 0;
  Conservation worst;
  for (SystemKind k : {SystemKind::Oscillator, SystemKind::Pendulum, SystemKind::TwoBody, SystemKind::ThreeBody}) {
    for (int i = 1; i <= 3; ++i) {
      const Conservation c = conservation(generate(builtin_system(k, i)));
      worst.energy = std::max(worst.energy, c.energy);
      worst.momentum = std::max(worst.momentum, c.momentum);
      ++generated;
    }
  }
  return {generated == 12 && worst.energy < kEnergyRel && worst.momentum < kMomentumAbs,
          fmt("%d/12 datasets; max energy rel drift %.1e (< %.0e); max momentum drift %.1e (< %.0e)", generated,
              worst.energy, kEnergyRel, worst.momentum, kMomentumAbs)};
}

// ---------------------------------------------------------------- 4
CouplingSpec gravity_priors() {
  CouplingSpec s;
  s.T_form.kind = CouplingForm::Kind::CompleteDecoupling;
  s.T_symmetric = true;
  s.V_form.kind = CouplingForm::Kind::Pairwise;
  s.V_composite = CompositeKind::Euclidean;
  s.V_symmetric = true;
  return s;
}

// Number of samples that fail parsing, separability, length or template checks.
std::size_t invalid_samples(const SearchSpace& space, const std::vector<SampledCandidate>& samples) {
  const auto& c = space.constraints();
  std::size_t bad = 0;
  for (const auto& s : samples) {
    bool ok = true;
    try {
      s.candidate.validate();
      const auto trees = space.segment_trees(s.tokens);
      ok = trees.size() == space.segments().size();
      for (std::size_t k = 0; ok && k < trees.size(); ++k) {
        const Segment& seg = space.segments()[k];
        const int ops = trees[k].operator_count();
        ok = ops >= c.min_ops && ops <= c.max_ops;
        for (const Node& n : trees[k].nodes()) {
          if (n.kind != Node::Kind::Variable) continue;
          const auto id = space.library().find_variable(n.role, n.index);
          ok = ok && id && std::find(seg.variables.begin(), seg.variables.end(), *id) != seg.variables.end();
        }
        // The sequence re-parses to the same tree.
        const auto syms = to_preorder(trees[k], space.library());
        ok = ok && to_preorder(parse_preorder(syms, space.library()), space.library()) == syms;
      }
      ok = ok && !s.candidate.T.uses(VarRole::Position) && !s.candidate.V.uses(VarRole::Momentum) &&
           !s.candidate.T.uses(VarRole::Pseudo) && !s.candidate.V.uses(VarRole::Pseudo);
    } catch (const std::exception&) {
      ok = false;
    }
    bad += !ok;
  }
  return bad;
}

struct SamplerStats {
  std::size_t samples = 0;
  std::size_t invalid = 0;
  std::size_t tokens = 0;
  std::size_t mutated = 0;
};

SamplerStats sample_config(const SampleConstraints& c, std::uint64_t seed) {
  SearchSpace space(c);
  Policy policy(space, PolicyConfig{}, seed);
  SamplerStats st;
  for (int chunk = 0; chunk < kSamplerDraws / 500; ++chunk) {
    const auto samples = policy.sample(500, 0.05, seed * 1000 + static_cast<std::uint64_t>(chunk));
    st.samples += samples.size();
    st.invalid += invalid_samples(space, samples);
    for (const auto& s : samples) {
      st.tokens += s.tokens.size();
      for (auto m : s.mutated) st.mutated += m;
    }
  }
  return st;
}

Outcome sampler_validity() {
  struct Named {
    const char* name;
    SampleConstraints c;
  };
  const std::vector<Named> configs{
      {"oscillator", default_constraints(SystemKind::Oscillator)},
      {"pendulum", default_constraints(SystemKind::Pendulum)},
      {"two-body", default_constraints(SystemKind::TwoBody, gravity_priors())},
      {"three-body", default_constraints(SystemKind::ThreeBody, gravity_priors())},
  };
  std::string detail;
  bool pass = true;
  std::size_t tokens = 0, mutated = 0;
  std::uint64_t seed = 1;
  for (const auto& [name, c] : configs) {
    const SamplerStats st = sample_config(c, seed++);
    pass = pass && st.samples == kSamplerDraws && st.invalid == 0;
    detail += fmt("%s %zu/%zu valid; ", name, st.samples - st.invalid, st.samples);
    tokens += st.tokens;
    mutated += st.mutated;
  }
  const double rate = static_cast<double>(mutated) / static_cast<double>(tokens);
  pass = pass && rate >= kMutationLo && rate <= kMutationHi;
  return {pass, detail + fmt("mutation rate %.4f in [%.2f, %.2f]", rate, kMutationLo, kMutationHi)};
}

// ---------------------------------------------------------------- 5
Outcome constant_fitting() {
  const SystemSpec spec = builtin_system(SystemKind::Oscillator, 1);
  const Dataset ds = generate(spec);
  const HamiltonianCandidate truth = ground_truth(spec).candidate;
  const HamiltonianCandidate structure = parse_infix_hamiltonian("(p1x * p1x) / 1 + 1 * (q1x * q1x)", 1, 1);
  const PhaseDomain dom = equivalence_domain(ds);
  const TrainingConfig cfg;
  int ok = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RewardRecord rec = optimize_constants(structure, ds, cfg, 5000 + s);
    const double gap = rec.valid ? max_gradient_gap(rec.candidate, truth, dom) : INFINITY;
    worst = std::max(worst, gap);
    ok += gap < kEquivTol;
  }
  return {ok >= 8, fmt("%d/10 initializations within %.0e (need 8); worst gradient gap %.2e", ok, kEquivTol, worst)};
}

// ---------------------------------------------------------------- 6, 7, 9
struct Trials {
  int recovered = 0;
  std::vector<int> batches;
  double seconds = 0.0;
};

Trials run_trials(SystemKind kind, int dataset, double noise, const CouplingSpec& priors, int max_batches,
                  int runs, int threads) {
  const SystemSpec spec = builtin_system(kind, dataset);
  Dataset ds = generate(spec);
  Trials t;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(r);
    const Dataset run_ds = noise > 0 ? add_noise(ds, noise, seed) : ds;
    TrainingConfig cfg;
    cfg.seed = seed;
    cfg.max_batches = max_batches;
    cfg.threads = threads;
    DiscoveryOptions o;
    o.ground_truth = ground_truth(spec).candidate;
    const RunReport rep = discover(run_ds, priors, cfg, o);
    t.recovered += rep.recovered;
    t.batches.push_back(rep.recovered ? rep.batches_used : -1);
    t.seconds += rep.seconds;
    std::fprintf(stderr, "  %s run %d: %s after %d batches (%.0f s)\n", std::string(system_name(kind)).c_str(), r,
                 rep.recovered ? "recovered" : "not recovered", rep.batches_used, rep.seconds);
  }
  return t;
}

std::string batches_text(const Trials& t) {
  std::string s = "batches [";
  for (std::size_t i = 0; i < t.batches.size(); ++i) {
    s += (i ? " " : "") + (t.batches[i] < 0 ? std::string("-") : std::to_string(t.batches[i]));
  }
  return s + "]";
}

Outcome oscillator_end_to_end(int threads) {
  const Trials clean = run_trials(SystemKind::Oscillator, 1, 0.0, {}, 30, 5, threads);
  const Trials noisy = run_trials(SystemKind::Oscillator, 1, 0.001, {}, 40, 5, threads);
  return {clean.recovered >= 4 && noisy.recovered >= 3,
          fmt("clean %d/5 within 30 (need 4), %s; sigma 0.001 %d/5 within 40 (need 3), %s; %.0f s per run",
              clean.recovered, batches_text(clean).c_str(), noisy.recovered, batches_text(noisy).c_str(),
              (clean.seconds + noisy.seconds) / 10)};
}

Outcome pendulum_end_to_end(int threads) {
  const Trials t = run_trials(SystemKind::Pendulum, 2, 0.0, {}, 80, 5, threads);
  return {t.recovered >= 3, fmt("%d/5 within 80 (need 3), %s; %.0f s per run", t.recovered,
                                batches_text(t).c_str(), t.seconds / 5)};
}

Outcome two_body_end_to_end(int threads) {
  const Trials t = run_trials(SystemKind::TwoBody, 1, 0.0, gravity_priors(), 10, 5, threads);
  return {t.recovered >= 3, fmt("%d/5 within 10 (need 3), %s; %.0f s per run", t.recovered,
                                batches_text(t).c_str(), t.seconds / 5)};
}

// ---------------------------------------------------------------- 8
// Network size and epochs are reduced from the reference 128x8 / 3000 so the
// suite fits a single-core budget.
SearchConfig acceptance_search_config(std::uint64_t seed, int threads) {
  SearchConfig c;
  c.max_tolerable_decrease = kSearchTolerance;
  c.net = NetShape{16, 2};
  c.epochs = 3000;
  c.lr = 0.0005;
  c.seeds = 1;
  c.seed = seed;
  c.threads = threads;
  return c;
}

double probe_change(const SearchResult& r, const char* stage, Side side) {
  for (const auto& row : r.rows) {
    const std::string& form = side == Side::T ? row.T : row.V;
    if (row.stage == stage && form.rfind(form_name(CouplingForm::Kind::CompleteDecoupling), 0) == 0) return row.change;
  }
  return NAN;
}

Outcome coupling_extraction(int threads) {
  const Dataset ds = generate(builtin_system(SystemKind::TwoBody, 1));
  int matched = 0;
  std::vector<double> t_probe, v_probe;
  std::string found;
  for (std::uint64_t m = 0; m < 3; ++m) {
    const SearchResult r = coupling_search(ds, acceptance_search_config(7 + m, threads));
    std::fprintf(stderr, "%s", render_search_table(r).c_str());
    const CouplingSpec& s = r.spec;
    const bool ok = s.V_form.kind == CouplingForm::Kind::Pairwise && s.V_composite == CompositeKind::Euclidean &&
                    s.T_form.kind == CouplingForm::Kind::CompleteDecoupling && s.T_symmetric &&
                    s.T_composite == CompositeKind::None;
    matched += ok;
    found += (m ? "; " : "") + describe_side(s, Side::T) + " | " + describe_side(s, Side::V);
    t_probe.push_back(probe_change(r, "form T", Side::T));
    v_probe.push_back(probe_change(r, "form V", Side::V));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double t_mean = mean(t_probe), v_mean = mean(v_probe);
  const bool probe_ok = t_mean < -kSearchTolerance;
  return {matched >= 2 && probe_ok,
          fmt("%d/3 master seeds match (need 2) [%s]; complete-decoupling T probe %+.1f%% (need < -%.0f%%); "
              "complete-decoupling V probe %+.1f%%",
              matched, found.c_str(), 100 * t_mean, 100 * kSearchTolerance, 100 * v_mean)};
}

// ---------------------------------------------------------------- 10
Outcome three_body(const std::filesystem::path& fixture) {
  // Sampler validity under the three-pair template.
  const SampleConstraints c = default_constraints(SystemKind::ThreeBody, gravity_priors());
  SearchSpace space(c);
  std::size_t pair_groups = 0;
  for (const Segment& seg : space.segments()) {
    if (seg.role == VarRole::Position) pair_groups += seg.groups.size();
  }
  Policy policy(space, PolicyConfig{}, 77);
  const auto samples = policy.sample(2000, 0.05, 78);
  const std::size_t invalid = invalid_samples(space, samples);

  Conservation worst;
  for (int i = 1; i <= 3; ++i) {
    const Conservation k = conservation(generate(builtin_system(SystemKind::ThreeBody, i)));
    worst.energy = std::max(worst.energy, k.energy);
    worst.momentum = std::max(worst.momentum, k.momentum);
  }

  // Retained recovery run: re-check the recorded expression against the truth.
  std::string fixture_note = "fixture missing";
  bool fixture_ok = false;
  if (std::ifstream in{fixture}) {
    try {
      const auto doc = nlohmann::json::parse(in);
      const SystemSpec spec = builtin_system(SystemKind::ThreeBody, 1);
      const Dataset ds = generate(spec);
      const HamiltonianCandidate found =
          parse_infix_hamiltonian(doc.at("recovered_expression").get<std::string>(), 3, 2);
      const double gap = max_gradient_gap(found, ground_truth(spec).candidate, equivalence_domain(ds));
      fixture_ok = doc.at("system") == "three_body" && doc.at("recovered").get<bool>() && gap < kEquivTol;
      fixture_note = fmt("fixture recovered after %d batches, gradient gap %.1e", doc.at("batches_used").get<int>(),
                         gap);
    } catch (const std::exception& e) {
      fixture_note = std::string("fixture unreadable: ") + e.what();
    }
  }
  return {pair_groups == 3 && invalid == 0 && worst.energy < kEnergyRel && worst.momentum < kMomentumAbs && fixture_ok,
          fmt("%zu pair groups; %zu/%zu samples valid; energy drift %.1e, momentum drift %.1e; ", pair_groups,
              samples.size() - invalid, samples.size(), worst.energy, worst.momentum) +
              fixture_note};
}

// ---------------------------------------------------------------- 11
Outcome rl_mechanics() {
  const TrainingConfig cfg;
  std::vector<double> r(500);
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& x : r) x = u(rng);
  const std::size_t kept = risk_filter(r, cfg.retained()).indices.size();

  SearchSpace pend(default_constraints(SystemKind::Pendulum));
  Policy p1(pend, PolicyConfig{}, 62);
  std::vector<std::vector<std::size_t>> seqs;
  for (const auto& s : p1.sample(25, 0.05, 63)) seqs.push_back(s.tokens);
  const std::vector<double> same(seqs.size(), 0.7);
  policy_gradient(p1, seqs, same, 0.7, 0.0);
  double max_grad = 0.0;
  for (const auto& p : p1.params().params()) max_grad = std::max(max_grad, p.grad.cwiseAbs().maxCoeff());

  SearchSpace osc(default_constraints(SystemKind::Oscillator));
  Policy p2(osc, PolicyConfig{}, 64);
  Adam adam;
  const auto& lib = osc.library();
  auto id = [&](const char* s) { return *lib.find(s); };
  const std::vector<std::size_t> target{id("mul"), id("p1x"), id("p1x"), id("mul"), id("q1x"), id("q1x")};
  std::vector<std::vector<std::size_t>> batch{target};
  std::vector<double> rewards{1.0};
  for (const auto& s : p2.sample(24, 0.05, 65)) {
    batch.push_back(s.tokens);
    rewards.push_back(0.2);
  }
  const double first = log_prob_and_entropy(p2, target).log_prob;
  double prev = first;
  int increases = 0;
  for (int k = 0; k < 20; ++k) {
    policy_update(p2, batch, rewards, 0.2, cfg.entropy_coef, adam);
    const double now = log_prob_and_entropy(p2, target).log_prob;
    increases += now > prev;
    prev = now;
  }
  return {kept == 25 && max_grad == 0.0 && increases == 20,
          fmt("risk filter kept %zu/500 (need 25); constant-reward gradient max |g| %.1e; target log-prob rose in "
              "%d/20 updates (%.2f -> %.2f)",
              kept, max_grad, increases, first, prev)};
}

bool slow_enabled() {
  const char* env = std::getenv("SISR_SLOW_TESTS");
  return env && *env && std::string(env) != "0";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SISR acceptance suite"};
  bool slow = slow_enabled();
  std::vector<int> only;
  int threads = 1;
  std::string fixture = SISR_FIXTURE_DIR "/three_body_report.json";
  app.add_flag("--slow", slow, "Also run the slow criteria (6-9); default from SISR_SLOW_TESTS");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 11));
  app.add_option("--threads", threads, "Worker threads for the slow criteria")->check(CLI::PositiveNumber);
  app.add_option("--fixture", fixture, "Three-body recovery report");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    bool is_slow;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "integrator order", false, integrator_order},
      {2, "gradient fidelity", false, gradient_fidelity},
      {3, "data generation", false, data_generation},
      {4, "sampler validity", false, sampler_validity},
      {5, "constant fitting", false, constant_fitting},
      {6, "oscillator end-to-end", true, [&] { return oscillator_end_to_end(threads); }},
      {7, "pendulum end-to-end", true, [&] { return pendulum_end_to_end(threads); }},
      {8, "coupling extraction", true, [&] { return coupling_extraction(threads); }},
      {9, "two-body with priors", true, [&] { return two_body_end_to_end(threads); }},
      {10, "three-body substitution", false, [&] { return three_body(fixture); }},
      {11, "RL mechanics", false, rl_mechanics},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    if (c.is_slow && !slow) {
      std::printf("SKIP %2d %-24s slow criterion; set SISR_SLOW_TESTS=1 or pass --slow\n", c.id, c.name);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %-24s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
