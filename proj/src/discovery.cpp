#include "sisr/discovery.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

namespace sisr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sequence_hash(std::span<const std::size_t> tokens) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t t : tokens) {
    h ^= static_cast<std::uint64_t>(t) + 1;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string sequence_key(std::span<const std::size_t> tokens) {
  std::string key;
  key.reserve(tokens.size() * 3);
  for (std::size_t t : tokens) {
    key += std::to_string(t);
    key += ',';
  }
  return key;
}

Trajectory drop_first(const Trajectory& tr) {
  Trajectory out;
  const auto n = tr.size() - 1;
  out.times = tr.times.tail(n);
  out.q = tr.q.bottomRows(n);
  out.p = tr.p.bottomRows(n);
  return out;
}

RewardRecord invalid_record(const HamiltonianCandidate& candidate, Clock::time_point t0) {
  RewardRecord r;
  r.candidate = candidate;
  r.valid = false;
  r.reward = 0.0;
  r.loss = std::numeric_limits<double>::infinity();
  r.seconds = seconds_since(t0);
  return r;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(learning_rate > 0) || !(entropy_coef >= 0) || !(inner_lr > 0) || !(equivalence_tol > 0)) {
    throw ConfigError("training: rates and tolerances must be positive");
  }
  if (!(mutation_rate >= 0 && mutation_rate < 1)) throw ConfigError("training: mutation rate must lie in [0, 1)");
  if (!(risk_fraction > 0 && risk_fraction <= 1)) throw ConfigError("training: risk fraction must lie in (0, 1]");
  if (batch_size < 1 || inner_epochs < 0 || max_batches < 0 || threads < 1 || substeps < 1) {
    throw ConfigError("training: counts must be positive");
  }
  if (initial_batch_size != 4 * batch_size) throw ConfigError("training: initial batch must be 4x the batch size");
  if (policy.layers < 1 || policy.hidden < 1) throw ConfigError("training: policy dimensions must be positive");
}

std::size_t TrainingConfig::retained() const {
  return static_cast<std::size_t>(std::ceil(risk_fraction * static_cast<double>(batch_size) - 1e-9));
}

double nrmse_reward(const Trajectory& predicted, const Trajectory& observed) {
  if (predicted.q.rows() != observed.q.rows() || predicted.q.cols() != observed.q.cols() ||
      predicted.p.rows() != observed.p.rows() || predicted.p.cols() != observed.p.cols()) {
    throw ShapeMismatch("nrmse_reward: trajectory shapes differ");
  }
  const double count = static_cast<double>(observed.q.size() + observed.p.size());
  if (count == 0) throw ShapeMismatch("nrmse_reward: empty trajectory");
  if (!predicted.q.allFinite() || !predicted.p.allFinite()) return 0.0;
  const double pooled_mean = (observed.q.sum() + observed.p.sum()) / count;
  const double pooled_var =
      ((observed.q.array() - pooled_mean).square().sum() + (observed.p.array() - pooled_mean).square().sum()) / count;
  double ratio_sum = 0.0;
  int columns = 0;
  for (const auto* side : {&observed.q, &observed.p}) {
    const Eigen::MatrixXd& obs = *side;
    const Eigen::MatrixXd& pred = side == &observed.q ? predicted.q : predicted.p;
    for (Eigen::Index c = 0; c < obs.cols(); ++c) {
      const double n = static_cast<double>(obs.rows());
      const double mean = obs.col(c).mean();
      double var = (obs.col(c).array() - mean).square().sum() / n;
      if (var == 0.0) var = pooled_var;
      const double mse = (pred.col(c) - obs.col(c)).squaredNorm() / n;
      if (var == 0.0) {
        if (mse != 0.0) return 0.0;
      } else {
        ratio_sum += std::sqrt(mse / var);
      }
      ++columns;
    }
  }
  const double r = 1.0 / (1.0 + ratio_sum / columns);
  return std::isfinite(r) ? r : 0.0;
}

RewardRecord optimize_constants(const HamiltonianCandidate& candidate, const Dataset& ds, const TrainingConfig& cfg,
                                std::uint64_t init_seed) {
  const auto t0 = Clock::now();
  const Trajectory& data = ds.samples;
  if (candidate.n_coords() != data.n_coords()) throw ShapeMismatch("optimize_constants: coordinate count differs");
  if (data.size() < 2) throw ShapeMismatch("optimize_constants: need at least two samples");
  const CompiledCandidate cc(candidate);
  std::vector<double> c(candidate.constants.size());
  std::mt19937_64 rng(init_seed);
  std::uniform_real_distribution<double> init(0.1, 2.0);
  for (double& x : c) x = init(rng);

  std::vector<double> best = c;
  double best_loss = 0.0;
  if (!c.empty()) {
    const RolloutGradient first = rollout_loss_and_const_grads(cc, c, data, 1, cfg.substeps);
    if (!first.valid || !std::isfinite(first.loss)) return invalid_record(candidate, t0);
    best_loss = first.loss;
    std::vector<std::size_t> starts(static_cast<std::size_t>(data.size() - 1));
    std::iota(starts.begin(), starts.end(), std::size_t{0});
    const std::size_t period = std::max<std::size_t>(1, (starts.size() + 3) / 4);
    RmsProp opt(RmsPropConfig{cfg.inner_lr, 0.9, 1e-8});
    bool stop = false;
    for (int e = 0; e < cfg.inner_epochs && !stop; ++e) {
      std::shuffle(starts.begin(), starts.end(), rng);
      for (std::size_t i = 0; i < starts.size(); ++i) {
        const RolloutGradient g = rollout_loss_and_const_grads(cc, c, data, 1, cfg.substeps, std::span(&starts[i], 1));
        if (!g.valid || !all_finite(g.grad)) {
          stop = true;
          break;
        }
        opt.step(c, g.grad);
        if (!all_finite(c)) {
          stop = true;
          break;
        }
        if ((i + 1) % period == 0 || i + 1 == starts.size()) {
          const RolloutGradient f = rollout_loss_and_const_grads(cc, c, data, 1, cfg.substeps);
          if (f.valid && f.loss < best_loss) {
            best_loss = f.loss;
            best = c;
          }
        }
      }
    }
  }

  RewardRecord rec;
  rec.candidate = candidate;
  rec.candidate.constants = best;
  Trajectory predicted;
  if (!one_step_predictions(cc, best, data, cfg.substeps, predicted)) return invalid_record(rec.candidate, t0);
  const Trajectory observed = drop_first(data);
  rec.reward = nrmse_reward(predicted, observed);
  rec.valid = true;
  if (c.empty()) {
    const double n = static_cast<double>(predicted.q.size() + predicted.p.size());
    best_loss = ((predicted.q - observed.q).squaredNorm() + (predicted.p - observed.p).squaredNorm()) / n;
  }
  rec.loss = best_loss;
  rec.seconds = seconds_since(t0);
  return rec;
}

RiskSelection risk_filter(std::span<const double> rewards, std::size_t keep) {
  RiskSelection sel;
  if (rewards.empty()) return sel;
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
  keep = std::clamp<std::size_t>(keep, 1, rewards.size());
  sel.threshold = rewards[order[keep - 1]];
  for (std::size_t i : order) {
    if (rewards[i] >= sel.threshold) sel.indices.push_back(i);
  }
  return sel;
}

double policy_gradient(Policy& policy, std::span<const std::vector<std::size_t>> sequences,
                       std::span<const double> rewards, double threshold, double entropy_coef) {
  if (rewards.size() != sequences.size()) throw ShapeMismatch("policy_gradient: reward count differs");
  std::vector<double> wl(sequences.size()), we(sequences.size(), -entropy_coef);
  for (std::size_t i = 0; i < sequences.size(); ++i) wl[i] = -(rewards[i] - threshold);
  policy.params().zero_grad();
  if (sequences.empty()) return 0.0;
  Tape tape;
  auto r = policy.replay(tape, sequences, wl, we);
  tape.backward(r.objective);
  return tape.value(r.objective)(0, 0);
}

void policy_update(Policy& policy, std::span<const std::vector<std::size_t>> sequences,
                   std::span<const double> rewards, double threshold, double entropy_coef, Adam& optimizer) {
  policy_gradient(policy, sequences, rewards, threshold, entropy_coef);
  optimizer.step(policy.params());
}

SampleConstraints default_constraints(SystemKind kind, const CouplingSpec& coupling) {
  SampleConstraints c;
  c.coupling = coupling;
  c.operators = {Op::Add, Op::Sub, Op::Div, Op::Mul, Op::Pow};
  switch (kind) {
    case SystemKind::Oscillator:
      c.max_ops = 8;
      break;
    case SystemKind::Pendulum:
      c.operators.push_back(Op::Cos);
      c.operators.push_back(Op::Sin);
      c.max_ops = 8;
      break;
    case SystemKind::TwoBody:
      c.n_bodies = 2;
      c.n_dims = 2;
      c.max_ops = 12;
      break;
    case SystemKind::ThreeBody:
      c.n_bodies = 3;
      c.n_dims = 2;
      c.max_ops = 18;
      break;
  }
  return c;
}

RunReport discover(const Dataset& ds, const CouplingSpec& priors, const TrainingConfig& cfg,
                   const DiscoveryOptions& options) {
  const auto t_start = Clock::now();
  cfg.validate();
  RunReport report;
  report.system = std::string(system_name(ds.spec.kind));
  report.config = cfg;
  report.experiment_mode = options.ground_truth.has_value();
  report.constraints = options.constraints.value_or(default_constraints(ds.spec.kind, priors));
  if (report.constraints.n_bodies != ds.spec.n_bodies() || report.constraints.n_dims != ds.spec.n_dims()) {
    throw ConfigError("discover: constraints do not match the dataset's system");
  }
  const SearchSpace space(report.constraints);
  Policy policy(space, cfg.policy, cfg.seed);
  Adam adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  const PhaseDomain domain = equivalence_domain(ds);
  std::unordered_map<std::string, RewardRecord> cache;
  report.best_reward = -1.0;

  for (int b = 0; b < cfg.max_batches; ++b) {
    const auto t_batch = Clock::now();
    const auto n = static_cast<std::size_t>(b == 0 ? cfg.initial_batch_size : cfg.batch_size);
    const auto samples = policy.sample(n, cfg.mutation_rate, mix(cfg.seed ^ mix(static_cast<std::uint64_t>(b) + 1)));

    // Fit each distinct unseen sequence once.
    std::vector<std::string> keys(n);
    std::vector<std::size_t> todo;
    std::unordered_map<std::string, std::size_t> first_seen;
    for (std::size_t i = 0; i < n; ++i) {
      keys[i] = sequence_key(samples[i].tokens);
      if (cache.count(keys[i]) || first_seen.count(keys[i])) continue;
      first_seen.emplace(keys[i], i);
      todo.push_back(i);
    }
    std::vector<RewardRecord> fitted(todo.size());
    auto fit_one = [&](std::size_t k) {
      const auto& s = samples[todo[k]];
      fitted[k] = optimize_constants(s.candidate, ds, cfg, mix(cfg.seed ^ sequence_hash(s.tokens)));
      fitted[k].tokens = s.tokens;
    };
    if (cfg.threads <= 1 || todo.size() < 2) {
      for (std::size_t k = 0; k < todo.size(); ++k) fit_one(k);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), todo.size());
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < todo.size(); k = next++) fit_one(k);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t k = 0; k < todo.size(); ++k) cache.emplace(keys[todo[k]], std::move(fitted[k]));

    std::vector<double> rewards(n);
    std::vector<const RewardRecord*> recs(n);
    for (std::size_t i = 0; i < n; ++i) {
      recs[i] = &cache.at(keys[i]);
      rewards[i] = recs[i]->reward;
    }
    const RiskSelection sel = risk_filter(rewards, cfg.retained());
    const RewardRecord& best = *recs[sel.indices.front()];

    BatchRow row;
    row.index = b;
    row.sampled = static_cast<int>(n);
    row.fitted = static_cast<int>(todo.size());
    row.best_reward = best.reward;
    row.threshold = sel.threshold;
    row.best_expression = to_infix(best.candidate);
    if (best.reward > report.best_reward) {
      report.best_reward = best.reward;
      report.best = best.candidate;
      report.best_expression = row.best_expression;
    }

    if (options.ground_truth) {
      for (std::size_t i : sel.indices) {
        if (!recs[i]->valid) continue;
        bool eq = false;
        try {
          eq = numeric_equivalence(recs[i]->candidate, *options.ground_truth, domain, cfg.equivalence_tol);
        } catch (const DomainError&) {
          eq = false;
        }
        if (eq) {
          report.recovered = true;
          report.recovered_expression = to_infix(recs[i]->candidate);
          break;
        }
      }
    }

    if (!report.recovered) {
      std::vector<std::vector<std::size_t>> seqs;
      std::vector<double> kept;
      for (std::size_t i : sel.indices) {
        seqs.push_back(samples[i].tokens);
        kept.push_back(rewards[i]);
      }
      policy_update(policy, seqs, kept, sel.threshold, cfg.entropy_coef, adam);
    }
    row.seconds = seconds_since(t_batch);
    report.batches.push_back(row);
    report.batches_used = b + 1;
    if (options.on_batch) options.on_batch(row);
    if (report.recovered) break;
  }
  if (report.best_reward < 0) report.best_reward = 0.0;
  report.seconds = seconds_since(t_start);
  return report;
}

// ---------------------------------------------------------------------------
// Report files

std::string serialize_report(const RunReport& r) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["format_version"] = 1;
  doc["system"] = r.system;
  doc["mode"] = r.experiment_mode ? "experiment" : "open";
  doc["recovered"] = r.recovered;
  doc["batches_used"] = r.batches_used;
  doc["best_reward"] = r.best_reward;
  doc["best_expression"] = r.best_expression;
  doc["best_constants"] = r.best.constants;
  doc["recovered_expression"] = r.recovered_expression;
  const TrainingConfig& c = r.config;
  doc["config"] = {{"learning_rate", c.learning_rate},
                   {"entropy_coef", c.entropy_coef},
                   {"mutation_rate", c.mutation_rate},
                   {"risk_fraction", c.risk_fraction},
                   {"batch_size", c.batch_size},
                   {"initial_batch_size", c.initial_batch_size},
                   {"inner_epochs", c.inner_epochs},
                   {"inner_lr", c.inner_lr},
                   {"substeps", c.substeps},
                   {"max_batches", c.max_batches},
                   {"seed", c.seed},
                   {"equivalence_tol", c.equivalence_tol},
                   {"policy_layers", c.policy.layers},
                   {"policy_hidden", c.policy.hidden}};
  ordered_json ops = ordered_json::array();
  for (Op op : r.constraints.operators) ops.push_back(op_symbol(op));
  doc["constraints"] = {{"operators", ops},
                        {"min_ops", r.constraints.min_ops},
                        {"max_ops", r.constraints.max_ops},
                        {"coupling", ordered_json::parse(serialize_coupling(r.constraints.coupling))}};
  ordered_json rows = ordered_json::array();
  for (const auto& b : r.batches) {
    rows.push_back({{"batch", b.index},
                    {"sampled", b.sampled},
                    {"fitted", b.fitted},
                    {"best_reward", b.best_reward},
                    {"threshold", b.threshold},
                    {"best_expression", b.best_expression}});
  }
  doc["batches"] = rows;
  return doc.dump(2) + "\n";
}

std::string reward_curve_csv(const RunReport& r) {
  std::ostringstream out;
  out << "batch,sampled,fitted,best_reward,threshold\n";
  char buf[128];
  for (const auto& b : r.batches) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g\n", b.index, b.sampled, b.fitted, b.best_reward, b.threshold);
    out << buf;
  }
  return out.str();
}

std::string trajectory_csv(const RunReport& r, const Dataset& ds) {
  const Trajectory& obs = ds.samples;
  const int n = obs.n_coords();
  std::ostringstream out;
  out << "t";
  auto name = [&](VarRole role, int k) { return coordinate_name(role, k, ds.spec.n_dims()); };
  for (int k = 0; k < n; ++k) out << "," << name(VarRole::Position, k);
  for (int k = 0; k < n; ++k) out << "," << name(VarRole::Momentum, k);
  for (int k = 0; k < n; ++k) out << ",pred_" << name(VarRole::Position, k);
  for (int k = 0; k < n; ++k) out << ",pred_" << name(VarRole::Momentum, k);
  out << "\n";
  Trajectory pred;
  bool ok = false;
  if (!r.best.T.empty() && r.best.n_coords() == n) {
    const CompiledCandidate cc(r.best);
    std::vector<double> q0(static_cast<std::size_t>(n)), p0(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      q0[static_cast<std::size_t>(k)] = obs.q(0, k);
      p0[static_cast<std::size_t>(k)] = obs.p(0, k);
    }
    try {
      pred = rollout(candidate_field(cc, r.best.constants), q0, p0, obs.times(0), obs.times(obs.size() - 1),
                     static_cast<int>(obs.size()), r.config.substeps);
      ok = true;
    } catch (const FieldError&) {
      ok = false;
    }
  }
  char buf[64];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof buf, ",%.17g", x);
    out << buf;
  };
  for (Eigen::Index i = 0; i < obs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", obs.times(i));
    out << buf;
    for (int k = 0; k < n; ++k) put(obs.q(i, k));
    for (int k = 0; k < n; ++k) put(obs.p(i, k));
    for (int k = 0; k < n; ++k) ok ? put(pred.q(i, k)) : void(out << ",nan");
    for (int k = 0; k < n; ++k) ok ? put(pred.p(i, k)) : void(out << ",nan");
    out << "\n";
  }
  return out.str();
}

std::string timing_csv(const RunReport& r) {
  std::ostringstream out;
  out << "batch,seconds\n";
  char buf[64];
  for (const auto& b : r.batches) {
    std::snprintf(buf, sizeof buf, "%d,%.3f\n", b.index, b.seconds);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "total,%.3f\n", r.seconds);
  out << buf;
  return out.str();
}

}  // namespace sisr
