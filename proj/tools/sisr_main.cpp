// Command-line front end: data generation, coupling extraction, discovery
// and evaluation. Exit codes: 0 success or recovered, 1 not recovered,
// 2 usage or input error, 3 runtime failure.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sisr/config.hpp"
#include "sisr/coupling.hpp"
#include "sisr/discovery.hpp"
#include "sisr/priors.hpp"
#include "sisr/systems.hpp"

namespace {

using namespace sisr;

constexpr int kOk = 0;
constexpr int kNotRecovered = 1;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_threads() {
  if (const char* env = std::getenv("SISR_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw UsageError("dataset not found: " + path);
  return load_dataset(path);
}

RunConfig read_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  if (!std::filesystem::exists(path)) throw UsageError("config not found: " + path);
  try {
    return load_run_config(path);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix) {
  std::filesystem::path p = out;
  p.replace_extension();
  return p.string() + suffix;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string system;
  int dataset = 1;
  bool noise = false;
  std::optional<double> sigma;
  std::uint64_t noise_seed = 0;
  std::string config;
  std::string out;
  int substeps = 100;
};

int cmd_gen_data(const GenArgs& a) {
  const RunConfig cfg = read_config(a.config);
  SystemSpec spec;
  if (cfg.system) {
    spec = *cfg.system;
  } else {
    if (a.system.empty()) throw UsageError("--system is required without a config system");
    const auto kind = system_from_name(a.system);
    if (!kind) throw UsageError("unknown system '" + a.system + "'");
    spec = builtin_system(*kind, a.dataset);
  }
  Dataset ds = generate(spec, a.substeps);
  const Trajectory& tr = ds.samples;
  const int n = tr.n_coords();
  double e0 = 0.0, drift = 0.0, mom = 0.0;
  std::vector<double> q(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
  std::vector<double> p_total0;
  const int nd = spec.n_dims();
  for (Eigen::Index i = 0; i < tr.size(); ++i) {
    for (int c = 0; c < n; ++c) {
      q[static_cast<std::size_t>(c)] = tr.q(i, c);
      p[static_cast<std::size_t>(c)] = tr.p(i, c);
    }
    const double e = hamiltonian_value(spec, q, p);
    if (i == 0) e0 = e;
    drift = std::max(drift, std::abs(e - e0) / std::max(std::abs(e0), 1e-300));
    std::vector<double> tot(static_cast<std::size_t>(nd), 0.0);
    for (int c = 0; c < n; ++c) tot[static_cast<std::size_t>(c % nd)] += p[static_cast<std::size_t>(c)];
    if (i == 0) p_total0 = tot;
    for (int d = 0; d < nd; ++d) {
      mom = std::max(mom, std::abs(tot[static_cast<std::size_t>(d)] - p_total0[static_cast<std::size_t>(d)]));
    }
  }
  if (a.noise || a.sigma) {
    const double sigma = a.sigma.value_or(default_noise_sigma(spec.kind));
    ds = add_noise(ds, sigma, a.noise_seed);
  }
  save_dataset(ds, a.out);
  std::printf("system %s, %d samples over [%g, %g]\n", std::string(system_name(spec.kind)).c_str(),
              spec.n_points, spec.t0, spec.t1);
  for (const auto& [k, v] : spec.constants) std::printf("  %s = %g\n", k.c_str(), v);
  std::printf("noise sigma %g\n", ds.noise_sigma);
  std::printf("max relative energy drift %.3e\n", drift);
  if (spec.kind == SystemKind::TwoBody || spec.kind == SystemKind::ThreeBody) {
    std::printf("max total momentum drift %.3e\n", mom);
  }
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct PriorArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string table;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> seeds;
  std::optional<int> hidden;
  std::optional<int> depth;
  std::optional<double> tolerance;
  int threads = 1;
};

int cmd_extract_priors(const PriorArgs& a) {
  const Dataset ds = read_dataset(a.data);
  RunConfig cfg = read_config(a.config);
  SearchConfig& sc = cfg.search;
  if (a.seed) sc.seed = *a.seed;
  if (a.epochs) sc.epochs = *a.epochs;
  if (a.seeds) sc.seeds = *a.seeds;
  if (a.hidden) sc.net.hidden = *a.hidden;
  if (a.depth) sc.net.depth = *a.depth;
  if (a.tolerance) sc.max_tolerable_decrease = *a.tolerance;
  sc.threads = a.threads;
  try {
    sc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const SearchResult res = coupling_search(ds, sc);
  const std::string table = render_search_table(res);
  std::fputs(table.c_str(), stdout);
  save_coupling(res.spec, a.out);
  if (!a.table.empty()) write_text(a.table, table);
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct DiscoverArgs {
  std::string data;
  std::string priors;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_batches;
  bool open = false;
  bool quiet = false;
  int threads = 1;
};

int cmd_discover(const DiscoverArgs& a) {
  const Dataset ds = read_dataset(a.data);
  RunConfig cfg = read_config(a.config);
  TrainingConfig& tc = cfg.training;
  if (a.seed) tc.seed = *a.seed;
  if (a.max_batches) tc.max_batches = *a.max_batches;
  tc.threads = a.threads;
  try {
    tc.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  CouplingSpec priors;
  if (!a.priors.empty()) {
    if (!std::filesystem::exists(a.priors)) throw UsageError("priors not found: " + a.priors);
    priors = load_coupling(a.priors);
  }
  DiscoveryOptions opts;
  opts.constraints = sampler_constraints(ds.spec.kind, priors, cfg.sampler);
  opts.constraints->n_bodies = ds.spec.n_bodies();
  opts.constraints->n_dims = ds.spec.n_dims();
  if (!a.open) opts.ground_truth = ground_truth(ds.spec).candidate;
  if (!a.quiet) {
    opts.on_batch = [](const BatchRow& r) {
      std::fprintf(stderr, "batch %3d  best %.6f  threshold %.6f  %s\n", r.index, r.best_reward, r.threshold,
                   r.best_expression.c_str());
    };
  }
  const RunReport rep = discover(ds, priors, tc, opts);
  write_text(a.out, serialize_report(rep));
  write_text(sibling(a.out, ".rewards.csv"), reward_curve_csv(rep));
  write_text(sibling(a.out, ".trajectory.csv"), trajectory_csv(rep, ds));
  write_text(sibling(a.out, ".timing.csv"), timing_csv(rep));
  std::printf("batches %d\n", rep.batches_used);
  std::printf("best reward %.6f\n", rep.best_reward);
  std::printf("best expression %s\n", rep.best_expression.c_str());
  if (rep.experiment_mode) {
    std::printf("recovered %s\n", rep.recovered ? "true" : "false");
    if (rep.recovered) std::printf("recovered expression %s\n", rep.recovered_expression.c_str());
    return rep.recovered ? kOk : kNotRecovered;
  }
  return rep.batches_used > 0 ? kOk : kNotRecovered;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string expr;
  std::string data;
  double tol = 1e-2;
  int substeps = TrainingConfig{}.substeps;
};

int cmd_eval(const EvalArgs& a) {
  const Dataset ds = read_dataset(a.data);
  HamiltonianCandidate cand;
  try {
    cand = parse_infix_hamiltonian(a.expr, ds.spec.n_bodies(), ds.spec.n_dims());
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error at position %zu: %s\n  %s\n  %s^\n", e.position(), e.what(), a.expr.c_str(),
                 std::string(std::min(e.position(), a.expr.size()), ' ').c_str());
    return kUsage;
  }
  const Trajectory& obs = ds.samples;
  const CompiledCandidate cc(cand);
  double reward = 0.0;
  Trajectory pred;
  if (one_step_predictions(cc, cand.constants, obs, a.substeps, pred)) {
    Trajectory tail;
    const auto n = obs.size() - 1;
    tail.times = obs.times.tail(n);
    tail.q = obs.q.bottomRows(n);
    tail.p = obs.p.bottomRows(n);
    reward = nrmse_reward(pred, tail);
  }
  double rollout_rmse = std::numeric_limits<double>::quiet_NaN();
  try {
    const GradientField field = candidate_field(cc, cand.constants);
    std::vector<double> q0(static_cast<std::size_t>(obs.n_coords())), p0(q0.size());
    for (int c = 0; c < obs.n_coords(); ++c) {
      q0[static_cast<std::size_t>(c)] = obs.q(0, c);
      p0[static_cast<std::size_t>(c)] = obs.p(0, c);
    }
    const Trajectory roll = rollout(field, q0, p0, obs.times(0), obs.times(obs.size() - 1),
                                    static_cast<int>(obs.size()), a.substeps);
    const double se = (roll.q - obs.q).squaredNorm() + (roll.p - obs.p).squaredNorm();
    rollout_rmse = std::sqrt(se / static_cast<double>(obs.q.size() + obs.p.size()));
  } catch (const FieldError&) {
  }
  const auto truth = ground_truth(ds.spec).candidate;
  double gap = std::numeric_limits<double>::infinity();
  try {
    gap = max_gradient_gap(cand, truth, equivalence_domain(ds));
  } catch (const DomainError&) {
  }
  std::printf("expression %s\n", to_infix(cand).c_str());
  std::printf("reward %.6f\n", reward);
  std::printf("rollout_rmse %.6g\n", rollout_rmse);
  std::printf("max_gradient_gap %.6g\n", gap);
  std::printf("equivalent %s\n", gap < a.tol ? "true" : "false");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic regression of separable Hamiltonians"};
  app.require_subcommand(1);
  const int threads_default = default_threads();

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a built-in or configured dataset");
  g->add_option("--system", gen.system, "oscillator, pendulum, two_body or three_body");
  g->add_option("--dataset", gen.dataset, "Built-in initial condition (1-3)")->check(CLI::Range(1, 3));
  g->add_flag("--noise", gen.noise, "Add the system's default Gaussian noise");
  g->add_option("--sigma", gen.sigma, "Noise standard deviation (implies --noise)");
  g->add_option("--noise-seed", gen.noise_seed, "Noise RNG seed");
  g->add_option("--config", gen.config, "Run config with a custom system");
  g->add_option("--substeps", gen.substeps, "Integrator steps per sample interval")->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output dataset path")->required();

  PriorArgs pri;
  pri.threads = threads_default;
  auto* p = app.add_subcommand("extract-priors", "Search coupling structure with symplectic networks");
  p->add_option("--data", pri.data, "Dataset path")->required();
  p->add_option("--config", pri.config, "Run config");
  p->add_option("--out", pri.out, "Output coupling file")->required();
  p->add_option("--table", pri.table, "Also write the search table here");
  p->add_option("--seed", pri.seed, "Master seed");
  p->add_option("--epochs", pri.epochs, "Training epochs per structure");
  p->add_option("--seeds", pri.seeds, "Initializations per structure");
  p->add_option("--hidden", pri.hidden, "Hidden width");
  p->add_option("--depth", pri.depth, "Hidden layers");
  p->add_option("--tolerance", pri.tolerance, "Maximum tolerable decrease");
  p->add_option("--threads", pri.threads, "Worker threads (default $SISR_THREADS or 1)")->check(CLI::PositiveNumber);

  DiscoverArgs dis;
  dis.threads = threads_default;
  auto* d = app.add_subcommand("discover", "Run the symbolic search");
  d->add_option("--data", dis.data, "Dataset path")->required();
  d->add_option("--priors", dis.priors, "Coupling file from extract-priors");
  d->add_option("--config", dis.config, "Run config");
  d->add_option("--seed", dis.seed, "Master seed");
  d->add_option("--max-batches", dis.max_batches, "Batch limit")->check(CLI::NonNegativeNumber);
  d->add_option("--out", dis.out, "Report path (.json); CSVs are written beside it")->required();
  d->add_flag("--open", dis.open, "Do not stop on recovery of the dataset's Hamiltonian");
  d->add_flag("--quiet", dis.quiet, "No per-batch progress");
  d->add_option("--threads", dis.threads, "Worker threads (default $SISR_THREADS or 1)")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score an expression against a dataset");
  e->add_option("--expr", ev.expr, "Expression in the report's infix form")->required();
  e->add_option("--data", ev.data, "Dataset path")->required();
  e->add_option("--tol", ev.tol, "Equivalence tolerance");
  e->add_option("--substeps", ev.substeps, "Integrator steps per sample interval")->check(CLI::PositiveNumber);

  auto* c = app.add_subcommand("show-config", "Print the default run config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (p->parsed()) return cmd_extract_priors(pri);
    if (d->parsed()) return cmd_discover(dis);
    if (e->parsed()) return cmd_eval(ev);
    if (c->parsed()) {
      std::fputs(serialize_run_config(RunConfig{}).c_str(), stdout);
      return kOk;
    }
  } catch (const UsageError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kUsage;
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kUsage;
  } catch (const FormatError& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kUsage;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kRuntime;
  }
  return kUsage;
}
