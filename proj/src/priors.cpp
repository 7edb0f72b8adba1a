#include "sisr/priors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <thread>

#include "sisr/discovery.hpp"

namespace sisr {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

Var sum_vars(Tape& t, std::span<const Var> xs) {
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = t.add(acc, xs[i]);
  return acc;
}

struct Reduced {
  Var u;
  std::vector<Var> du;  // d u / d x_i for each coordinate of the group
};

Reduced reduce(Tape& t, CompositeKind kind, const CouplingGroup& g, std::span<const Var> xs, int n_dims) {
  const Eigen::Index batch = t.value(xs[0]).cols();
  Reduced r;
  switch (kind) {
    case CompositeKind::Sum: {
      r.u = sum_vars(t, xs);
      Var one = t.input(Matrix::Ones(1, batch));
      r.du.assign(xs.size(), one);
      return r;
    }
    case CompositeKind::Product: {
      const std::size_t n = xs.size();
      std::vector<Var> prefix(n + 1), suffix(n + 1);
      Var one = t.input(Matrix::Ones(1, batch));
      prefix[0] = one;
      suffix[n] = one;
      for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = i == 0 ? xs[0] : t.cmul(prefix[i], xs[i]);
      for (std::size_t i = n; i-- > 0;) suffix[i] = i == n - 1 ? xs[i] : t.cmul(xs[i], suffix[i + 1]);
      r.u = prefix[n];
      for (std::size_t i = 0; i < n; ++i) {
        if (i == 0) r.du.push_back(suffix[1]);
        else if (i == n - 1) r.du.push_back(prefix[n - 1]);
        else r.du.push_back(t.cmul(prefix[i], suffix[i + 1]));
      }
      return r;
    }
    case CompositeKind::Manhattan:
    case CompositeKind::Euclidean: {
      const bool pair = g.body_a >= 0;
      const std::size_t k = pair ? static_cast<std::size_t>(n_dims) : xs.size();
      std::vector<Var> d(k);
      for (std::size_t i = 0; i < k; ++i) d[i] = pair ? t.sub(xs[i], xs[i + k]) : xs[i];
      std::vector<Var> dd(k);
      if (kind == CompositeKind::Manhattan) {
        std::vector<Var> mags(k);
        for (std::size_t i = 0; i < k; ++i) {
          mags[i] = t.abs(d[i]);
          dd[i] = t.input(t.value(d[i]).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
        }
        r.u = sum_vars(t, mags);
      } else {
        std::vector<Var> sq(k);
        for (std::size_t i = 0; i < k; ++i) sq[i] = t.cmul(d[i], d[i]);
        r.u = t.sqrt(sum_vars(t, sq));
        for (std::size_t i = 0; i < k; ++i) dd[i] = t.cdiv(d[i], r.u);
      }
      r.du = dd;
      if (pair) {
        for (std::size_t i = 0; i < k; ++i) r.du.push_back(t.scale(dd[i], -1.0));
      }
      return r;
    }
    case CompositeKind::None:
      break;
  }
  throw ConfigError("reduce: no composite");
}

std::string pairs_text(const CouplingForm& f) {
  if (f.pairs.empty()) return "";
  std::string s = "{";
  for (std::size_t i = 0; i < f.pairs.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(f.pairs[i].first + 1) + "-" + std::to_string(f.pairs[i].second + 1);
  }
  return s + "}";
}

/// Key identifying the trained function class, so equivalent structures
/// (pairwise over all of two bodies and no coupling) share one result.
std::string structure_key(const CouplingSpec& s, int n_bodies, int n_dims) {
  std::string key;
  auto side = [&](const CouplingForm& f, CompositeKind c, bool sym) {
    const auto groups = coupling_groups(f, n_bodies, n_dims);
    key += "[";
    for (const auto& g : groups) {
      key += "(";
      for (int c2 : g.coords) key += std::to_string(c2) + ",";
      key += g.body_a >= 0 ? "p)" : ")";
    }
    key += std::string(composite_name(c)) + (sym && groups.size() > 1 ? ",tied" : "") + "]";
  };
  side(s.T_form, s.T_composite, s.T_symmetric);
  side(s.V_form, s.V_composite, s.V_symmetric);
  return key;
}

struct Windows {
  Matrix q0, p0;
  std::vector<Matrix> q, p;  // per step, n_coords x B
};

Windows make_windows(const Trajectory& data, std::span<const std::size_t> starts, int horizon) {
  const Eigen::Index n = data.q.cols();
  const auto b = static_cast<Eigen::Index>(starts.size());
  Windows w;
  w.q0.resize(n, b);
  w.p0.resize(n, b);
  w.q.assign(static_cast<std::size_t>(horizon), Matrix(n, b));
  w.p.assign(static_cast<std::size_t>(horizon), Matrix(n, b));
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto s = static_cast<Eigen::Index>(starts[static_cast<std::size_t>(j)]);
    w.q0.col(j) = data.q.row(s).transpose();
    w.p0.col(j) = data.p.row(s).transpose();
    for (int k = 0; k < horizon; ++k) {
      w.q[static_cast<std::size_t>(k)].col(j) = data.q.row(s + k + 1).transpose();
      w.p[static_cast<std::size_t>(k)].col(j) = data.p.row(s + k + 1).transpose();
    }
  }
  return w;
}

struct Rolled {
  std::vector<Var> q, p;
};

Rolled roll(Tape& t, const SympNet& m, const Matrix& q0, const Matrix& p0, int steps, double h) {
  const auto co = IntegratorCoefficients::forest_ruth();
  Var q = t.input(q0), p = t.input(p0);
  Rolled out;
  for (int k = 0; k < steps; ++k) {
    for (int j = 0; j < 4; ++j) {
      if (co.c[static_cast<std::size_t>(j)] != 0.0) {
        q = t.add(q, t.scale(m.gradient(t, Side::T, p), co.c[static_cast<std::size_t>(j)] * h));
      }
      if (co.d[static_cast<std::size_t>(j)] != 0.0) {
        p = t.sub(p, t.scale(m.gradient(t, Side::V, q), co.d[static_cast<std::size_t>(j)] * h));
      }
    }
    out.q.push_back(q);
    out.p.push_back(p);
  }
  return out;
}

double time_step(const Trajectory& data) { return data.times(1) - data.times(0); }

}  // namespace

// ---------------------------------------------------------------------------
// Model

SympNet::SympNet(int n_bodies, int n_dims, const CouplingSpec& structure, const NetShape& shape, std::uint64_t seed)
    : n_bodies_(n_bodies), n_dims_(n_dims), structure_(structure) {
  structure.validate(n_bodies, n_dims);
  if (shape.hidden < 1 || shape.depth < 1) throw ConfigError("sympnet: network shape must be positive");
  std::mt19937_64 rng(seed);
  for (Side side : {Side::T, Side::V}) {
    SideNets& s = sides_[index(side)];
    const bool t = side == Side::T;
    s.groups = coupling_groups(t ? structure.T_form : structure.V_form, n_bodies, n_dims);
    s.composite = t ? structure.T_composite : structure.V_composite;
    s.tied = (t ? structure.T_symmetric : structure.V_symmetric) && s.groups.size() > 1;
    const std::size_t count = s.tied ? 1 : s.groups.size();
    for (std::size_t g = 0; g < count; ++g) {
      MlpConfig mc;
      mc.input_dim = s.composite == CompositeKind::None ? static_cast<int>(s.groups[g].coords.size()) : 1;
      mc.hidden_dim = shape.hidden;
      mc.depth = shape.depth;
      mc.output_dim = 1;
      s.nets.push_back(
          std::make_unique<Mlp>(store_, std::string(t ? "T" : "V") + std::to_string(g), mc, rng));
    }
  }
}

int SympNet::input_dim(Side side, int subfunction) const {
  const SideNets& s = sides_[index(side)];
  if (subfunction < 0 || subfunction >= static_cast<int>(s.groups.size())) throw ConfigError("sympnet: no such subfunction");
  return s.net(static_cast<std::size_t>(subfunction)).config().input_dim;
}

std::vector<Var> SympNet::group_inputs(Tape& tape, const SideNets&, const CouplingGroup& g, Var x) const {
  std::vector<Var> xs;
  for (int c : g.coords) xs.push_back(tape.rows(x, c, 1));
  return xs;
}

Var SympNet::gradient(Tape& tape, Side side, Var x) const {
  const SideNets& s = sides_[index(side)];
  if (tape.value(x).rows() != n_coords()) throw ShapeMismatch("sympnet: state dimension");
  const Eigen::Index batch = tape.value(x).cols();
  std::vector<std::vector<Var>> parts(static_cast<std::size_t>(n_coords()));
  for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
    const CouplingGroup& g = s.groups[gi];
    const auto xs = group_inputs(tape, s, g, x);
    if (s.composite == CompositeKind::None) {
      const auto r = s.net(gi).forward_with_input_grad(tape, xs.size() == 1 ? xs[0] : tape.concat_rows(xs));
      for (std::size_t i = 0; i < xs.size(); ++i) {
        parts[static_cast<std::size_t>(g.coords[i])].push_back(
            xs.size() == 1 ? r.dy_dx : tape.rows(r.dy_dx, static_cast<Eigen::Index>(i), 1));
      }
    } else {
      const Reduced red = reduce(tape, s.composite, g, xs, n_dims_);
      const auto r = s.net(gi).forward_with_input_grad(tape, red.u);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        parts[static_cast<std::size_t>(g.coords[i])].push_back(tape.cmul(r.dy_dx, red.du[i]));
      }
    }
  }
  std::vector<Var> rows;
  for (auto& p : parts) rows.push_back(p.empty() ? tape.input(Matrix::Zero(1, batch)) : sum_vars(tape, p));
  return tape.concat_rows(rows);
}

double SympNet::value(Side side, std::span<const double> x) const {
  const SideNets& s = sides_[index(side)];
  if (static_cast<int>(x.size()) != n_coords()) throw ShapeMismatch("sympnet: state dimension");
  Tape tape(false);
  Var xv = tape.input(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
  std::vector<double> terms;
  for (std::size_t gi = 0; gi < s.groups.size(); ++gi) {
    const auto xs = group_inputs(tape, s, s.groups[gi], xv);
    Var in = s.composite == CompositeKind::None ? (xs.size() == 1 ? xs[0] : tape.concat_rows(xs))
                                                : reduce(tape, s.composite, s.groups[gi], xs, n_dims_).u;
    terms.push_back(tape.value(s.net(gi).forward(tape, in))(0, 0));
  }
  if (s.tied) std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double v : terms) total += v;
  return total;
}

std::vector<double> SympNet::gradient(Side side, std::span<const double> x) const {
  if (static_cast<int>(x.size()) != n_coords()) throw ShapeMismatch("sympnet: state dimension");
  Tape tape(false);
  Var xv = tape.input(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
  const Matrix& g = tape.value(gradient(tape, side, xv));
  return std::vector<double>(g.data(), g.data() + g.size());
}

// ---------------------------------------------------------------------------
// Training

void SearchConfig::validate() const {
  auto frac = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string(name) + " must lie in (0, 1)");
  };
  frac(max_tolerable_decrease, "max_tolerable_decrease");
  frac(elimination_tolerance, "elimination_tolerance");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (horizon < 1) throw ConfigError("horizon must be positive");
  if (seeds < 1) throw ConfigError("seeds must be positive");
  if (net.hidden < 1 || net.depth < 1) throw ConfigError("network shape must be positive");
  if (threads < 1) throw ConfigError("threads must be positive");
}

DataSplit data_split(std::size_t n_samples, int horizon) {
  const auto h = static_cast<std::size_t>(horizon);
  if (horizon < 1 || n_samples < 2 * h + 2) throw ConfigError("dataset too short for the training horizon");
  DataSplit s;
  s.test_start = n_samples - h - 1;
  for (std::size_t i = 0; i + h <= s.test_start; ++i) s.train_starts.push_back(i);
  return s;
}

TrainResult train(SympNet& model, const Dataset& ds, const SearchConfig& cfg) {
  const Trajectory& data = ds.samples;
  if (data.n_coords() != model.n_coords()) throw ShapeMismatch("train_and_score: dataset does not match model");
  const DataSplit split = data_split(static_cast<std::size_t>(data.size()), cfg.horizon);
  const Windows w = make_windows(data, split.train_starts, cfg.horizon);
  const double h = time_step(data);
  ParamStore& store = model.params();
  Adam adam(AdamConfig{cfg.lr});
  Tape tape;
  TrainResult res;
  auto loss_on = [&](Tape& t) {
    const Rolled r = roll(t, model, w.q0, w.p0, cfg.horizon, h);
    std::vector<Var> terms;
    for (int k = 0; k < cfg.horizon; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      terms.push_back(t.mean_square(t.sub(r.q[ks], t.input(w.q[ks]))));
      terms.push_back(t.mean_square(t.sub(r.p[ks], t.input(w.p[ks]))));
    }
    return t.scale(sum_vars(t, terms), 1.0 / static_cast<double>(terms.size()));
  };
  for (int e = 0; e < cfg.epochs; ++e) {
    tape.clear();
    store.zero_grad();
    Var loss = loss_on(tape);
    const double lv = tape.value(loss)(0, 0);
    if (e == 0) res.first_loss = lv;
    if (!std::isfinite(lv)) {
      res.final_loss = lv;
      res.diverged = true;
      return res;
    }
    tape.backward(loss);
    adam.step(store);
  }
  {
    Tape t(false);
    res.final_loss = t.value(loss_on(t))(0, 0);
    if (cfg.epochs == 0) res.first_loss = res.final_loss;
    if (!std::isfinite(res.final_loss)) {
      res.diverged = true;
      return res;
    }
  }

  Tape eval(false);
  const auto s0 = static_cast<Eigen::Index>(split.test_start);
  const Rolled r = roll(eval, model, data.q.row(s0).transpose(), data.p.row(s0).transpose(), cfg.horizon, h);
  Trajectory pred, obs;
  obs.times = data.times.segment(s0 + 1, cfg.horizon);
  obs.q = data.q.middleRows(s0 + 1, cfg.horizon);
  obs.p = data.p.middleRows(s0 + 1, cfg.horizon);
  pred = obs;
  for (int k = 0; k < cfg.horizon; ++k) {
    pred.q.row(k) = eval.value(r.q[static_cast<std::size_t>(k)]).transpose();
    pred.p.row(k) = eval.value(r.p[static_cast<std::size_t>(k)]).transpose();
  }
  res.score = nrmse_reward(pred, obs);
  res.test_observed = std::move(obs);
  res.test_predicted = std::move(pred);
  return res;
}

double train_and_score(SympNet& model, const Dataset& ds, const SearchConfig& cfg) {
  return train(model, ds, cfg).score;
}

double score_structure(const Dataset& ds, const CouplingSpec& structure, const SearchConfig& cfg) {
  std::vector<double> scores(static_cast<std::size_t>(cfg.seeds));
  parallel_for(scores.size(), cfg.threads, [&](std::size_t k) {
    SympNet m(ds.spec.n_bodies(), ds.spec.n_dims(), structure, cfg.net, mix(cfg.seed ^ mix(k + 1)));
    scores[k] = train_and_score(m, ds, cfg);
  });
  return *std::max_element(scores.begin(), scores.end());
}

// ---------------------------------------------------------------------------
// Search

double relative_change(double score, double baseline) noexcept {
  if (baseline > 0.0) return (score - baseline) / baseline;
  return score > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

std::string describe_side(const CouplingSpec& spec, Side side) {
  const bool t = side == Side::T;
  const CouplingForm& f = t ? spec.T_form : spec.V_form;
  const CompositeKind c = t ? spec.T_composite : spec.V_composite;
  std::string s(form_name(f.kind));
  s += pairs_text(f);
  if (c != CompositeKind::None) s += "/" + std::string(composite_name(c));
  if (t ? spec.T_symmetric : spec.V_symmetric) s += "/symmetric";
  return s;
}

namespace {

class Searcher {
 public:
  Searcher(const Dataset& ds, const SearchConfig& cfg) : ds_(ds), cfg_(cfg) {}

  /// Scores every structure, training the uncached ones concurrently.
  std::vector<double> score(const std::vector<CouplingSpec>& specs) {
    const int nb = ds_.spec.n_bodies(), nd = ds_.spec.n_dims();
    std::vector<std::string> keys;
    std::vector<std::pair<std::size_t, std::size_t>> jobs;  // (new key index, seed)
    std::vector<std::string> fresh;
    for (const auto& s : specs) {
      keys.push_back(structure_key(s, nb, nd));
      if (!cache_.count(keys.back()) && std::find(fresh.begin(), fresh.end(), keys.back()) == fresh.end()) {
        fresh.push_back(keys.back());
        const std::size_t idx = fresh.size() - 1;
        for (int k = 0; k < cfg_.seeds; ++k) jobs.emplace_back(idx, static_cast<std::size_t>(k));
      }
    }
    std::vector<const CouplingSpec*> fresh_spec(fresh.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto it = std::find(fresh.begin(), fresh.end(), keys[i]);
      if (it != fresh.end()) fresh_spec[static_cast<std::size_t>(it - fresh.begin())] = &specs[i];
    }
    std::vector<double> out(jobs.size(), 0.0);
    parallel_for(jobs.size(), cfg_.threads, [&](std::size_t j) {
      const auto [idx, k] = jobs[j];
      SympNet m(nb, nd, *fresh_spec[idx], cfg_.net, mix(cfg_.seed ^ mix(k + 1)));
      out[j] = train_and_score(m, ds_, cfg_);
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      auto& best = cache_[fresh[jobs[j].first]];
      best = std::max(best, out[j]);
    }
    std::vector<double> scores;
    for (const auto& k : keys) scores.push_back(cache_.at(k));
    return scores;
  }

  double score(const CouplingSpec& s) { return score(std::vector<CouplingSpec>{s})[0]; }

 private:
  const Dataset& ds_;
  const SearchConfig& cfg_;
  std::map<std::string, double> cache_;
};

CouplingForm& form_of(CouplingSpec& s, Side side) { return side == Side::T ? s.T_form : s.V_form; }
CompositeKind& composite_of(CouplingSpec& s, Side side) { return side == Side::T ? s.T_composite : s.V_composite; }
bool& symmetric_of(CouplingSpec& s, Side side) { return side == Side::T ? s.T_symmetric : s.V_symmetric; }
const char* side_name(Side side) { return side == Side::T ? "T" : "V"; }

}  // namespace

SearchResult coupling_search(const Dataset& ds, const SearchConfig& cfg) {
  cfg.validate();
  const int nb = ds.spec.n_bodies(), nd = ds.spec.n_dims();
  SearchResult res;
  if (nb * nd == 1) {
    res.degenerate = true;
    res.spec.T_form.kind = CouplingForm::Kind::CompleteDecoupling;
    res.spec.V_form.kind = CouplingForm::Kind::CompleteDecoupling;
    return res;
  }
  data_split(static_cast<std::size_t>(ds.samples.size()), cfg.horizon);
  Searcher search(ds, cfg);
  CouplingSpec cur;
  double cur_score = search.score(cur);
  auto row = [&](const std::string& stage, const CouplingSpec& s, double score, double base, bool accepted) {
    res.rows.push_back({stage, describe_side(s, Side::T), describe_side(s, Side::V), score,
                        std::isnan(base) ? base : relative_change(score, base), accepted});
  };
  row("baseline", cur, cur_score, std::numeric_limits<double>::quiet_NaN(), true);

  // Coupling form per side, most constrained first.
  for (Side side : {Side::V, Side::T}) {
    std::vector<CouplingSpec> tries;
    for (auto kind : {CouplingForm::Kind::CompleteDecoupling, CouplingForm::Kind::Dimensional,
                      CouplingForm::Kind::Pairwise}) {
      if (kind == CouplingForm::Kind::Pairwise && nb < 2) continue;
      CouplingSpec s = cur;
      form_of(s, side) = CouplingForm{kind, {}};
      tries.push_back(s);
    }
    const auto scores = search.score(tries);
    const double base = cur_score;
    bool done = false;
    for (std::size_t i = 0; i < tries.size(); ++i) {
      const bool ok = !done && relative_change(scores[i], base) >= -cfg.max_tolerable_decrease;
      row(std::string("form ") + side_name(side), tries[i], scores[i], base, ok);
      if (ok) {
        cur = tries[i];
        cur_score = scores[i];
        done = true;
      }
    }
  }

  // Backward elimination over pairs.
  for (Side side : {Side::V, Side::T}) {
    if (form_of(cur, side).kind != CouplingForm::Kind::Pairwise) continue;
    std::vector<std::pair<int, int>> pairs;
    for (const auto& g : coupling_groups(form_of(cur, side), nb, nd)) pairs.emplace_back(g.body_a, g.body_b);
    while (pairs.size() > 1) {
      std::vector<CouplingSpec> tries;
      for (std::size_t drop = 0; drop < pairs.size(); ++drop) {
        CouplingSpec s = cur;
        auto kept = pairs;
        kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(drop));
        form_of(s, side).pairs = kept;
        tries.push_back(s);
      }
      const auto scores = search.score(tries);
      const std::size_t best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
      const bool ok = relative_change(scores[best], cur_score) >= -cfg.elimination_tolerance;
      const double base = cur_score;
      for (std::size_t i = 0; i < tries.size(); ++i) {
        row(std::string("pairs ") + side_name(side), tries[i], scores[i], base, ok && i == best);
      }
      if (!ok) break;
      cur = tries[best];
      cur_score = scores[best];
      pairs = form_of(cur, side).pairs;
    }
  }

  // Composite reduction for sides whose subfunctions take several variables.
  for (Side side : {Side::V, Side::T}) {
    const auto groups = coupling_groups(form_of(cur, side), nb, nd);
    if (form_of(cur, side).kind == CouplingForm::Kind::None || groups.front().coords.size() < 2) continue;
    std::vector<CouplingSpec> tries;
    for (auto c : {CompositeKind::Sum, CompositeKind::Product, CompositeKind::Manhattan, CompositeKind::Euclidean}) {
      CouplingSpec s = cur;
      composite_of(s, side) = c;
      tries.push_back(s);
    }
    const auto scores = search.score(tries);
    const double base = cur_score;
    std::size_t pick = tries.size();
    for (std::size_t i = 0; i < tries.size(); ++i) {
      if (relative_change(scores[i], base) >= -cfg.max_tolerable_decrease && (pick == tries.size() || scores[i] > scores[pick])) {
        pick = i;
      }
    }
    for (std::size_t i = 0; i < tries.size(); ++i) {
      row(std::string("composite ") + side_name(side), tries[i], scores[i], base, i == pick);
    }
    if (pick < tries.size()) {
      cur = tries[pick];
      cur_score = scores[pick];
    }
  }

  // Symmetry by parameter tying.
  for (Side side : {Side::T, Side::V}) {
    if (coupling_groups(form_of(cur, side), nb, nd).size() < 2) continue;
    CouplingSpec s = cur;
    symmetric_of(s, side) = true;
    const double score = search.score(s);
    const bool ok = relative_change(score, cur_score) >= -cfg.max_tolerable_decrease;
    row(std::string("symmetry ") + side_name(side), s, score, cur_score, ok);
    if (ok) {
      cur = s;
      cur_score = score;
    }
  }
  res.spec = cur;
  return res;
}

std::string render_search_table(const SearchResult& r) {
  std::string out;
  if (r.degenerate) {
    out += "single coordinate: search is degenerate, both sides completely decoupled\n";
    return out;
  }
  std::size_t wt = 1, wv = 1, ws = 5;
  for (const auto& row : r.rows) {
    wt = std::max(wt, row.T.size());
    wv = std::max(wv, row.V.size());
    ws = std::max(ws, row.stage.size());
  }
  char buf[64];
  auto pad = [](std::string s, std::size_t w) { return s + std::string(w - std::min(w, s.size()), ' '); };
  out += pad("stage", ws) + "  " + pad("T", wt) + "  " + pad("V", wv) + "  score     change     accepted\n";
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.4f", row.score);
    std::string line = pad(row.stage, ws) + "  " + pad(row.T, wt) + "  " + pad(row.V, wv) + "  " + pad(buf, 8) + "  ";
    if (std::isnan(row.change)) {
      line += pad("baseline", 9);
    } else {
      std::snprintf(buf, sizeof buf, "%+.2f%%", 100.0 * row.change);
      line += pad(buf, 9);
    }
    line += row.accepted ? "  yes\n" : "  no\n";
    out += line;
  }
  out += "result: T " + describe_side(r.spec, Side::T) + ", V " + describe_side(r.spec, Side::V) + "\n";
  return out;
}

}  // namespace sisr
