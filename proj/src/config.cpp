#include "sisr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sisr {

namespace {

using Json = nlohmann::ordered_json;

class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

SystemSpec parse_system(const Json& j) {
  Section s(j, "system");
  SystemSpec spec;
  std::string kind;
  s.read("kind", kind);
  if (kind.empty()) throw ConfigError("system.kind is required");
  const auto k = system_from_name(kind);
  if (!k) throw ConfigError("system.kind: unknown system '" + kind + "'");
  spec.kind = *k;
  if (const Json* c = s.child("constants")) {
    if (!c->is_object()) throw ConfigError("system.constants: expected an object");
    for (const auto& [name, v] : c->items()) {
      if (!v.is_number()) throw ConfigError("system.constants." + name + ": wrong type");
      spec.constants[name] = v.get<double>();
    }
  }
  auto vec = [&](const char* key, std::vector<double>& out) {
    if (const Json* v = s.child(key)) {
      if (!v->is_array()) throw ConfigError(std::string("system.") + key + ": expected an array");
      for (const auto& x : *v) {
        if (!x.is_number()) throw ConfigError(std::string("system.") + key + ": expected numbers");
        out.push_back(x.get<double>());
      }
    }
  };
  vec("q0", spec.q0);
  vec("p0", spec.p0);
  s.read("t0", spec.t0);
  s.read("t1", spec.t1);
  s.read("n_points", spec.n_points);
  s.finish();
  spec.validate();
  return spec;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section top(root, "config");
  RunConfig cfg;
  if (const Json* sys = top.child("system")) cfg.system = parse_system(*sys);
  if (const Json* j = top.child("search")) {
    Section s(*j, "search");
    SearchConfig& c = cfg.search;
    s.read("max_tolerable_decrease", c.max_tolerable_decrease);
    s.read("elimination_tolerance", c.elimination_tolerance);
    s.read("epochs", c.epochs);
    s.read("lr", c.lr);
    s.read("horizon", c.horizon);
    s.read("seeds", c.seeds);
    s.read("hidden", c.net.hidden);
    s.read("depth", c.net.depth);
    s.read("seed", c.seed);
    s.read("threads", c.threads);
    s.finish();
    c.validate();
  }
  if (const Json* j = top.child("training")) {
    Section s(*j, "training");
    TrainingConfig& c = cfg.training;
    s.read("learning_rate", c.learning_rate);
    s.read("entropy_coef", c.entropy_coef);
    s.read("mutation_rate", c.mutation_rate);
    s.read("risk_fraction", c.risk_fraction);
    s.read("batch_size", c.batch_size);
    s.read("initial_batch_size", c.initial_batch_size);
    s.read("inner_epochs", c.inner_epochs);
    s.read("inner_lr", c.inner_lr);
    s.read("substeps", c.substeps);
    s.read("max_batches", c.max_batches);
    s.read("seed", c.seed);
    s.read("equivalence_tol", c.equivalence_tol);
    s.read("threads", c.threads);
    s.read("policy_layers", c.policy.layers);
    s.read("policy_hidden", c.policy.hidden);
    s.finish();
    c.validate();
  }
  if (const Json* j = top.child("sampler")) {
    Section s(*j, "sampler");
    if (const Json* ops = s.child("operators")) {
      if (!ops->is_array()) throw ConfigError("sampler.operators: expected an array");
      std::vector<Op> list;
      for (const auto& o : *ops) {
        const auto op = o.is_string() ? op_from_symbol(o.get<std::string>()) : std::nullopt;
        if (!op) throw ConfigError("sampler.operators: unknown operator " + o.dump());
        list.push_back(*op);
      }
      cfg.sampler.operators = list;
    }
    int v = 0;
    if (s.child("min_ops")) {
      s.read("min_ops", v);
      cfg.sampler.min_ops = v;
    }
    if (s.child("max_ops")) {
      s.read("max_ops", v);
      cfg.sampler.max_ops = v;
    }
    s.finish();
  }
  top.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  Json root;
  if (cfg.system) {
    const SystemSpec& s = *cfg.system;
    Json sys;
    sys["kind"] = std::string(system_name(s.kind));
    sys["constants"] = Json::object();
    for (const auto& [k, v] : s.constants) sys["constants"][k] = v;
    sys["q0"] = s.q0;
    sys["p0"] = s.p0;
    sys["t0"] = s.t0;
    sys["t1"] = s.t1;
    sys["n_points"] = s.n_points;
    root["system"] = sys;
  }
  const SearchConfig& sc = cfg.search;
  root["search"] = {{"max_tolerable_decrease", sc.max_tolerable_decrease},
                    {"elimination_tolerance", sc.elimination_tolerance},
                    {"epochs", sc.epochs},
                    {"lr", sc.lr},
                    {"horizon", sc.horizon},
                    {"seeds", sc.seeds},
                    {"hidden", sc.net.hidden},
                    {"depth", sc.net.depth},
                    {"seed", sc.seed},
                    {"threads", sc.threads}};
  const TrainingConfig& t = cfg.training;
  root["training"] = {{"learning_rate", t.learning_rate},
                      {"entropy_coef", t.entropy_coef},
                      {"mutation_rate", t.mutation_rate},
                      {"risk_fraction", t.risk_fraction},
                      {"batch_size", t.batch_size},
                      {"initial_batch_size", t.initial_batch_size},
                      {"inner_epochs", t.inner_epochs},
                      {"inner_lr", t.inner_lr},
                      {"substeps", t.substeps},
                      {"max_batches", t.max_batches},
                      {"seed", t.seed},
                      {"equivalence_tol", t.equivalence_tol},
                      {"threads", t.threads},
                      {"policy_layers", t.policy.layers},
                      {"policy_hidden", t.policy.hidden}};
  Json sampler = Json::object();
  if (cfg.sampler.operators) {
    Json ops = Json::array();
    for (Op o : *cfg.sampler.operators) ops.push_back(std::string(op_symbol(o)));
    sampler["operators"] = ops;
  }
  if (cfg.sampler.min_ops) sampler["min_ops"] = *cfg.sampler.min_ops;
  if (cfg.sampler.max_ops) sampler["max_ops"] = *cfg.sampler.max_ops;
  root["sampler"] = sampler;
  return root.dump(2) + "\n";
}

SampleConstraints sampler_constraints(SystemKind kind, const CouplingSpec& coupling, const SamplerOverrides& o) {
  SampleConstraints c = default_constraints(kind, coupling);
  if (o.operators) c.operators = *o.operators;
  if (o.min_ops) c.min_ops = *o.min_ops;
  if (o.max_ops) c.max_ops = *o.max_ops;
  c.validate();
  return c;
}

}  // namespace sisr
