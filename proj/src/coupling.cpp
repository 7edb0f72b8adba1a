#include "sisr/coupling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sisr {

namespace {

constexpr std::array<std::string_view, 4> kForms = {"none", "complete_decoupling", "dimensional", "pairwise"};
constexpr std::array<std::string_view, 5> kComposites = {"none", "sum", "product", "manhattan", "euclidean"};

ExprTree sum_of(std::vector<ExprTree> terms) {
  ExprTree acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ExprTree::binary(Op::Add, acc, terms[i]);
  return acc;
}

void validate_side(const CouplingForm& form, CompositeKind composite, int n_bodies, int n_dims, const char* side) {
  const std::string s(side);
  if (form.kind != CouplingForm::Kind::Pairwise && !form.pairs.empty()) {
    throw ConfigError(s + ": pairs given for a non-pairwise form");
  }
  if (form.kind == CouplingForm::Kind::Pairwise) {
    if (n_bodies < 2) throw ConfigError(s + ": pairwise coupling needs at least two bodies");
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : form.pairs) {
      if (a < 0 || b >= n_bodies || a >= b) throw ConfigError(s + ": pair out of range or not ordered");
      if (!seen.insert({a, b}).second) throw ConfigError(s + ": duplicate pair");
    }
  }
  if (composite == CompositeKind::None) return;
  if (form.kind == CouplingForm::Kind::None) throw ConfigError(s + ": composite requires a coupling form");
  for (const auto& g : coupling_groups(form, n_bodies, n_dims)) {
    if (g.coords.size() < 2) throw ConfigError(s + ": composite on a single-variable subfunction");
  }
}

}  // namespace

std::string_view form_name(CouplingForm::Kind kind) noexcept { return kForms[static_cast<std::size_t>(kind)]; }

CouplingForm::Kind form_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kForms.size(); ++i) {
    if (kForms[i] == name) return static_cast<CouplingForm::Kind>(i);
  }
  throw ConfigError("unknown coupling form '" + std::string(name) + "'");
}

std::string_view composite_name(CompositeKind kind) noexcept { return kComposites[static_cast<std::size_t>(kind)]; }

CompositeKind composite_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kComposites.size(); ++i) {
    if (kComposites[i] == name) return static_cast<CompositeKind>(i);
  }
  throw ConfigError("unknown composite '" + std::string(name) + "'");
}

void CouplingSpec::validate(int n_bodies, int n_dims) const {
  if (n_bodies < 1 || n_dims < 1) throw ConfigError("coupling: system must have bodies and dimensions");
  validate_side(T_form, T_composite, n_bodies, n_dims, "T");
  validate_side(V_form, V_composite, n_bodies, n_dims, "V");
}

std::vector<CouplingGroup> coupling_groups(const CouplingForm& form, int n_bodies, int n_dims) {
  std::vector<CouplingGroup> groups;
  switch (form.kind) {
    case CouplingForm::Kind::None: {
      CouplingGroup g;
      for (int c = 0; c < n_bodies * n_dims; ++c) g.coords.push_back(c);
      groups.push_back(std::move(g));
      break;
    }
    case CouplingForm::Kind::CompleteDecoupling:
      for (int c = 0; c < n_bodies * n_dims; ++c) groups.push_back({{c}, -1, -1});
      break;
    case CouplingForm::Kind::Dimensional:
      for (int b = 0; b < n_bodies; ++b) {
        CouplingGroup g;
        for (int d = 0; d < n_dims; ++d) g.coords.push_back(b * n_dims + d);
        groups.push_back(std::move(g));
      }
      break;
    case CouplingForm::Kind::Pairwise: {
      auto pairs = form.pairs;
      if (pairs.empty()) {
        for (int a = 0; a < n_bodies; ++a) {
          for (int b = a + 1; b < n_bodies; ++b) pairs.emplace_back(a, b);
        }
      }
      for (auto [a, b] : pairs) {
        CouplingGroup g;
        g.body_a = a;
        g.body_b = b;
        for (int d = 0; d < n_dims; ++d) g.coords.push_back(a * n_dims + d);
        for (int d = 0; d < n_dims; ++d) g.coords.push_back(b * n_dims + d);
        groups.push_back(std::move(g));
      }
      break;
    }
  }
  return groups;
}

ExprTree composite_expr(CompositeKind kind, const CouplingGroup& group, VarRole role, int n_dims) {
  std::vector<ExprTree> terms;
  auto var = [&](int c) { return ExprTree::variable(role, c); };
  // Components the distances act on.
  std::vector<ExprTree> comps;
  if (group.body_a >= 0) {
    for (int d = 0; d < n_dims; ++d) {
      comps.push_back(ExprTree::binary(Op::Sub, var(group.body_a * n_dims + d), var(group.body_b * n_dims + d)));
    }
  } else {
    for (int c : group.coords) comps.push_back(var(c));
  }
  switch (kind) {
    case CompositeKind::None:
      throw ConfigError("composite_expr: no composite");
    case CompositeKind::Sum:
      for (int c : group.coords) terms.push_back(var(c));
      return sum_of(std::move(terms));
    case CompositeKind::Product: {
      ExprTree acc = var(group.coords.front());
      for (std::size_t i = 1; i < group.coords.size(); ++i) acc = ExprTree::binary(Op::Mul, acc, var(group.coords[i]));
      return acc;
    }
    case CompositeKind::Manhattan:
      for (auto& c : comps) terms.push_back(ExprTree::unary(Op::Abs, c));
      return sum_of(std::move(terms));
    case CompositeKind::Euclidean:
      for (auto& c : comps) terms.push_back(ExprTree::binary(Op::Mul, c, c));
      return ExprTree::unary(Op::Sqrt, sum_of(std::move(terms)));
  }
  return {};
}

double composite_value(CompositeKind kind, const CouplingGroup& group, std::span<const double> x, int n_dims) {
  std::vector<double> comps;
  if (group.body_a >= 0) {
    for (int d = 0; d < n_dims; ++d) {
      comps.push_back(x[static_cast<std::size_t>(group.body_a * n_dims + d)] -
                      x[static_cast<std::size_t>(group.body_b * n_dims + d)]);
    }
  } else {
    for (int c : group.coords) comps.push_back(x[static_cast<std::size_t>(c)]);
  }
  double acc = 0.0;
  switch (kind) {
    case CompositeKind::None:
      throw ConfigError("composite_value: no composite");
    case CompositeKind::Sum:
      for (int c : group.coords) acc += x[static_cast<std::size_t>(c)];
      return acc;
    case CompositeKind::Product:
      acc = 1.0;
      for (int c : group.coords) acc *= x[static_cast<std::size_t>(c)];
      return acc;
    case CompositeKind::Manhattan:
      for (double c : comps) acc += std::abs(c);
      return acc;
    case CompositeKind::Euclidean:
      for (double c : comps) acc += c * c;
      return std::sqrt(acc);
  }
  return acc;
}

std::string serialize_coupling(const CouplingSpec& spec) {
  using nlohmann::ordered_json;
  auto side = [](const CouplingForm& f, CompositeKind c, bool sym) {
    ordered_json j;
    j["form"] = form_name(f.kind);
    ordered_json pairs = ordered_json::array();
    for (auto [a, b] : f.pairs) pairs.push_back({a, b});
    j["pairs"] = pairs;
    j["composite"] = composite_name(c);
    j["symmetric"] = sym;
    return j;
  };
  ordered_json doc;
  doc["format_version"] = 1;
  doc["T"] = side(spec.T_form, spec.T_composite, spec.T_symmetric);
  doc["V"] = side(spec.V_form, spec.V_composite, spec.V_symmetric);
  return doc.dump(2) + "\n";
}

CouplingSpec parse_coupling(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(0, "", std::string("malformed coupling file: ") + e.what());
  }
  CouplingSpec spec;
  auto side = [&](const char* key, CouplingForm& form, CompositeKind& comp, bool& sym) {
    if (!doc.is_object() || !doc.contains(key) || !doc[key].is_object()) {
      throw FormatError(0, key, std::string("missing section ") + key);
    }
    const json& s = doc[key];
    for (const auto& [k, v] : s.items()) {
      if (k != "form" && k != "pairs" && k != "composite" && k != "symmetric") {
        throw FormatError(0, k, "unknown key '" + k + "' in section " + key);
      }
    }
    try {
      form.kind = form_from_name(s.value("form", "none"));
      for (const auto& p : s.value("pairs", json::array())) form.pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      comp = composite_from_name(s.value("composite", "none"));
      sym = s.value("symmetric", false);
    } catch (const json::exception& e) {
      throw FormatError(0, key, e.what());
    } catch (const ConfigError& e) {
      throw FormatError(0, key, e.what());
    }
  };
  side("T", spec.T_form, spec.T_composite, spec.T_symmetric);
  side("V", spec.V_form, spec.V_composite, spec.V_symmetric);
  return spec;
}

void save_coupling(const CouplingSpec& spec, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << serialize_coupling(spec);
  if (!f) throw IoError("failed writing " + path.string());
}

CouplingSpec load_coupling(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_coupling(ss.str());
}

}  // namespace sisr
