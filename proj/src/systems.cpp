#include "sisr/systems.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

namespace sisr {

namespace {

constexpr std::array<std::string_view, 4> kNames = {"oscillator", "pendulum", "two_body", "three_body"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool gravitational(SystemKind k) { return k == SystemKind::TwoBody || k == SystemKind::ThreeBody; }

}  // namespace

std::string_view system_name(SystemKind kind) noexcept { return kNames[static_cast<std::size_t>(kind)]; }

std::optional<SystemKind> system_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<SystemKind>(i);
  }
  return std::nullopt;
}

int SystemSpec::n_bodies() const noexcept {
  switch (kind) {
    case SystemKind::TwoBody: return 2;
    case SystemKind::ThreeBody: return 3;
    default: return 1;
  }
}

int SystemSpec::n_dims() const noexcept { return gravitational(kind) ? 2 : 1; }

double SystemSpec::constant(const std::string& name) const {
  auto it = constants.find(name);
  if (it == constants.end()) throw ConfigError("system " + std::string(system_name(kind)) + " lacks constant " + name);
  return it->second;
}

void SystemSpec::validate() const {
  std::vector<std::string> needed;
  switch (kind) {
    case SystemKind::Oscillator: needed = {"m", "omega"}; break;
    case SystemKind::Pendulum: needed = {"m", "g", "l"}; break;
    default: needed = {"G", "m"}; break;
  }
  for (const auto& name : needed) {
    const double v = constant(name);
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("constant " + name + " must be positive");
  }
  if (constants.size() != needed.size()) throw ConfigError("unexpected constant for this system");
  if (static_cast<int>(q0.size()) != n_coords() || static_cast<int>(p0.size()) != n_coords()) {
    throw ConfigError("initial state has the wrong dimension");
  }
  if (!(t1 > t0)) throw ConfigError("t1 must exceed t0");
  if (n_points < 2) throw ConfigError("n_points must be at least 2");
}

SystemSpec builtin_system(SystemKind kind, int idx) {
  if (idx < 1 || idx > 3) throw ConfigError("dataset index must be 1, 2 or 3");
  const auto i = static_cast<std::size_t>(idx - 1);
  SystemSpec s;
  s.kind = kind;
  switch (kind) {
    case SystemKind::Oscillator: {
      static const double t[3][4] = {{1.23, 1.65, -0.05, 0.42}, {0.63, 1.30, 0.27, -0.29}, {1.69, 0.83, 0.06, -0.54}};
      s.constants = {{"m", t[i][0]}, {"omega", t[i][1]}};
      s.q0 = {t[i][2]};
      s.p0 = {t[i][3]};
      s.t1 = 3.0;
      s.n_points = 30;
      break;
    }
    case SystemKind::Pendulum: {
      // m, l, g, q0, p0
      static const double t[3][5] = {
          {0.47, 1.23, 1.95, 1.32, 0.23}, {1.10, 0.73, 1.02, 1.37, 0.12}, {0.68, 0.33, 1.59, 0.87, 0.15}};
      s.constants = {{"m", t[i][0]}, {"l", t[i][1]}, {"g", t[i][2]}};
      s.q0 = {t[i][3]};
      s.p0 = {t[i][4]};
      s.t1 = 5.0;
      s.n_points = 50;
      break;
    }
    case SystemKind::TwoBody: {
      static const double q[3][4] = {{0, 0, 1, 1}, {0, 0, 0.5, 1}, {0, 0.5, 0.3, -0.24}};
      static const double p[3][4] = {{0, 1, 1, 0}, {0.34, 0.30, 1.00, 0.21}, {0.4, -1.0, -0.8, -2.1}};
      s.constants = {{"G", 1.0}, {"m", 1.0}};
      s.q0.assign(q[i], q[i] + 4);
      s.p0.assign(p[i], p[i] + 4);
      s.t1 = 20.0;
      s.n_points = 200;
      break;
    }
    case SystemKind::ThreeBody: {
      static const double q[3][6] = {{0, 0, 1, 1, -1, -1}, {0, 0, -3, 0, 3, 0}, {0.25, 0.25, 2, 1.5, 3, -2}};
      static const double p[3][6] = {
          {0.5, 0.3, 1.1, -0.4, -0.2, 0.5}, {0, -1, 0.5, 0, 0.5, 0}, {0, -1, 0.5, -0.15, 0.8, 0.25}};
      s.constants = {{"G", 1.0}, {"m", 1.0}};
      s.q0.assign(q[i], q[i] + 6);
      s.p0.assign(p[i], p[i] + 6);
      s.t1 = 20.0;
      s.n_points = 200;
      break;
    }
  }
  return s;
}

double default_noise_sigma(SystemKind kind) noexcept { return kind == SystemKind::Pendulum ? 0.005 : 0.001; }

GroundTruth ground_truth(const SystemSpec& spec) {
  spec.validate();
  GroundTruth gt;
  const int nc = spec.n_coords();
  gt.field.n_coords = nc;
  switch (spec.kind) {
    case SystemKind::Oscillator: {
      const double m = spec.constant("m"), w = spec.constant("omega");
      gt.candidate = parse_infix_hamiltonian("(p1x*p1x)/" + num(2 * m) + " + " + num(0.5 * m * w * w) + "*(q1x*q1x)", 1, 1);
      gt.field.dT_dp = [m](std::span<const double> p, std::span<double> out) {
        out[0] = p[0] / m;
        return true;
      };
      gt.field.dV_dq = [k = m * w * w](std::span<const double> q, std::span<double> out) {
        out[0] = k * q[0];
        return true;
      };
      break;
    }
    case SystemKind::Pendulum: {
      const double m = spec.constant("m"), g = spec.constant("g"), l = spec.constant("l");
      gt.candidate = parse_infix_hamiltonian(
          "(p1x*p1x)/" + num(2 * m * l * l) + " + " + num(m * g * l) + "*(1 - cos(q1x))", 1, 1);
      gt.field.dT_dp = [i = m * l * l](std::span<const double> p, std::span<double> out) {
        out[0] = p[0] / i;
        return true;
      };
      gt.field.dV_dq = [k = m * g * l](std::span<const double> q, std::span<double> out) {
        out[0] = k * std::sin(q[0]);
        return true;
      };
      break;
    }
    default: {
      const double G = spec.constant("G"), m = spec.constant("m");
      const int nb = spec.n_bodies();
      std::string text;
      for (int k = 0; k < nc; ++k) {
        const std::string p = coordinate_name(VarRole::Momentum, k, 2);
        text += (k ? " + " : "") + ("(" + p + "*" + p + ")/" + num(2 * m));
      }
      for (int a = 0; a < nb; ++a) {
        for (int b = a + 1; b < nb; ++b) {
          std::string r2;
          for (int d = 0; d < 2; ++d) {
            const std::string qa = coordinate_name(VarRole::Position, 2 * a + d, 2);
            const std::string qb = coordinate_name(VarRole::Position, 2 * b + d, 2);
            r2 += (d ? " + " : "") + ("(" + qa + " - " + qb + ")*(" + qa + " - " + qb + ")");
          }
          text += " + " + num(-G * m * m) + "/sqrt(" + r2 + ")";
        }
      }
      gt.candidate = parse_infix_hamiltonian(text, nb, 2);
      gt.field.dT_dp = [m, nc](std::span<const double> p, std::span<double> out) {
        for (int k = 0; k < nc; ++k) out[static_cast<std::size_t>(k)] = p[static_cast<std::size_t>(k)] / m;
        return true;
      };
      gt.field.dV_dq = [k = G * m * m, nb](std::span<const double> q, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (int a = 0; a < nb; ++a) {
          for (int b = a + 1; b < nb; ++b) {
            const auto ia = static_cast<std::size_t>(2 * a), ib = static_cast<std::size_t>(2 * b);
            const double dx = q[ia] - q[ib], dy = q[ia + 1] - q[ib + 1];
            const double r2 = dx * dx + dy * dy;
            if (!(r2 > 0.0)) return false;
            const double s = k / (r2 * std::sqrt(r2));
            out[ia] += s * dx;
            out[ia + 1] += s * dy;
            out[ib] -= s * dx;
            out[ib + 1] -= s * dy;
          }
        }
        return true;
      };
      break;
    }
  }
  return gt;
}

double hamiltonian_value(const SystemSpec& spec, std::span<const double> q, std::span<const double> p) {
  switch (spec.kind) {
    case SystemKind::Oscillator: {
      const double m = spec.constant("m"), w = spec.constant("omega");
      return p[0] * p[0] / (2 * m) + 0.5 * m * w * w * q[0] * q[0];
    }
    case SystemKind::Pendulum: {
      const double m = spec.constant("m"), g = spec.constant("g"), l = spec.constant("l");
      return p[0] * p[0] / (2 * m * l * l) + m * g * l * (1 - std::cos(q[0]));
    }
    default: {
      const double G = spec.constant("G"), m = spec.constant("m");
      const int nb = spec.n_bodies();
      double h = 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) h += p[k] * p[k] / (2 * m);
      for (int a = 0; a < nb; ++a) {
        for (int b = a + 1; b < nb; ++b) {
          const auto ia = static_cast<std::size_t>(2 * a), ib = static_cast<std::size_t>(2 * b);
          h -= G * m * m / std::hypot(q[ia] - q[ib], q[ia + 1] - q[ib + 1]);
        }
      }
      return h;
    }
  }
  return 0.0;
}

Dataset generate(const SystemSpec& spec, int substeps) {
  GroundTruth gt = ground_truth(spec);
  Dataset ds;
  ds.spec = spec;
  ds.samples = rollout(gt.field, spec.q0, spec.p0, spec.t0, spec.t1, spec.n_points, substeps);
  return ds;
}

Dataset add_noise(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  Dataset out = ds;
  out.noise_sigma = sigma;
  out.seed = seed;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (Eigen::Index i = 0; i < out.samples.size(); ++i) {
    for (Eigen::Index k = 0; k < out.samples.q.cols(); ++k) out.samples.q(i, k) += noise(rng);
    for (Eigen::Index k = 0; k < out.samples.p.cols(); ++k) out.samples.p(i, k) += noise(rng);
  }
  return out;
}

PhaseDomain equivalence_domain(const Dataset& ds) {
  const auto& s = ds.samples;
  PhaseDomain dom;
  for (Eigen::Index k = 0; k < s.q.cols(); ++k) {
    dom.q.push_back({std::min(-1.0, s.q.col(k).minCoeff()), std::max(1.0, s.q.col(k).maxCoeff())});
    dom.p.push_back({std::min(-1.0, s.p.col(k).minCoeff()), std::max(1.0, s.p.col(k).maxCoeff())});
  }
  if (gravitational(ds.spec.kind)) {
    const int nb = ds.spec.n_bodies();
    double closest = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      for (int a = 0; a < nb; ++a) {
        for (int b = a + 1; b < nb; ++b) {
          closest = std::min(closest, std::hypot(s.q(i, 2 * a) - s.q(i, 2 * b), s.q(i, 2 * a + 1) - s.q(i, 2 * b + 1)));
        }
      }
    }
    const double r_min = 0.5 * closest;
    dom.admit = [nb, r_min](std::span<const double> q) {
      for (int a = 0; a < nb; ++a) {
        for (int b = a + 1; b < nb; ++b) {
          const auto ia = static_cast<std::size_t>(2 * a), ib = static_cast<std::size_t>(2 * b);
          if (std::hypot(q[ia] - q[ib], q[ia + 1] - q[ib + 1]) < r_min) return false;
        }
      }
      return true;
    };
  }
  return dom;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string num_list(std::span<const double> v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

std::size_t line_of_key(std::string_view text, std::string_view key) {
  const std::string quoted = "\"" + std::string(key) + "\"";
  const auto pos = text.find(quoted);
  return pos == std::string_view::npos ? 0 : line_of_offset(text, pos);
}

}  // namespace

std::string serialize_dataset(const Dataset& ds) {
  const auto& s = ds.spec;
  std::string out = "{\n";
  out += "  \"format_version\": 1,\n";
  out += "  \"system\": \"" + std::string(system_name(s.kind)) + "\",\n";
  out += "  \"constants\": {";
  bool first = true;
  for (const auto& [k, v] : s.constants) {
    out += (first ? "\"" : ", \"") + k + "\": " + num(v);
    first = false;
  }
  out += "},\n";
  out += "  \"initial_q\": " + num_list(s.q0) + ",\n";
  out += "  \"initial_p\": " + num_list(s.p0) + ",\n";
  out += "  \"t0\": " + num(s.t0) + ",\n";
  out += "  \"t1\": " + num(s.t1) + ",\n";
  out += "  \"n_points\": " + std::to_string(s.n_points) + ",\n";
  out += "  \"noise_sigma\": " + num(ds.noise_sigma) + ",\n";
  out += "  \"seed\": " + std::to_string(ds.seed) + ",\n";
  out += "  \"samples\": [\n";
  const auto& tr = ds.samples;
  for (Eigen::Index i = 0; i < tr.size(); ++i) {
    std::vector<double> row{tr.times(i)};
    for (Eigen::Index k = 0; k < tr.q.cols(); ++k) row.push_back(tr.q(i, k));
    for (Eigen::Index k = 0; k < tr.p.cols(); ++k) row.push_back(tr.p(i, k));
    out += "    " + num_list(row) + (i + 1 < tr.size() ? ",\n" : "\n");
  }
  out += "  ]\n}\n";
  return out;
}

Dataset parse_dataset(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw FormatError(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1), "", std::string("malformed dataset: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError(1, "", "dataset must be a JSON object");
  auto field = [&](const char* key) -> const json& {
    if (!doc.contains(key)) throw FormatError(0, key, std::string("missing field ") + key);
    return doc.at(key);
  };
  auto fail = [&](const char* key, const std::string& what) -> FormatError {
    return FormatError(line_of_key(text, key), key, what);
  };
  auto number = [&](const char* key) {
    const json& v = field(key);
    if (!v.is_number()) throw fail(key, std::string(key) + " must be a number");
    return v.get<double>();
  };
  auto numbers = [&](const char* key) {
    const json& v = field(key);
    if (!v.is_array()) throw fail(key, std::string(key) + " must be an array");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw fail(key, std::string(key) + " must hold numbers");
      out.push_back(x.get<double>());
    }
    return out;
  };

  if (!field("format_version").is_number_integer() || field("format_version").get<int>() != 1) {
    throw fail("format_version", "unsupported format_version");
  }
  Dataset ds;
  const json& sys = field("system");
  if (!sys.is_string() || !system_from_name(sys.get<std::string>())) throw fail("system", "unknown system");
  ds.spec.kind = *system_from_name(sys.get<std::string>());
  const json& consts = field("constants");
  if (!consts.is_object()) throw fail("constants", "constants must be an object");
  for (const auto& [k, v] : consts.items()) {
    if (!v.is_number()) throw fail("constants", "constant " + k + " must be a number");
    ds.spec.constants[k] = v.get<double>();
  }
  ds.spec.q0 = numbers("initial_q");
  ds.spec.p0 = numbers("initial_p");
  ds.spec.t0 = number("t0");
  ds.spec.t1 = number("t1");
  if (!field("n_points").is_number_integer()) throw fail("n_points", "n_points must be an integer");
  ds.spec.n_points = field("n_points").get<int>();
  ds.noise_sigma = number("noise_sigma");
  if (!field("seed").is_number_unsigned() && !(field("seed").is_number_integer() && field("seed").get<long long>() >= 0)) {
    throw fail("seed", "seed must be a non-negative integer");
  }
  ds.seed = field("seed").get<std::uint64_t>();
  try {
    ds.spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(0, "system", e.what());
  }

  const json& rows = field("samples");
  if (!rows.is_array()) throw fail("samples", "samples must be an array");
  const std::size_t first_row_line = line_of_key(text, "samples") + 1;
  const auto n = static_cast<std::size_t>(ds.spec.n_coords());
  if (rows.size() != static_cast<std::size_t>(ds.spec.n_points)) {
    throw FormatError(first_row_line + rows.size(), "samples",
                      "expected " + std::to_string(ds.spec.n_points) + " samples, found " + std::to_string(rows.size()));
  }
  auto& tr = ds.samples;
  tr.times.resize(static_cast<Eigen::Index>(rows.size()));
  tr.q.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  tr.p.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    const std::size_t line = first_row_line + i;
    if (!row.is_array() || row.size() != 1 + 2 * n) {
      throw FormatError(line, "samples", "sample " + std::to_string(i) + " must hold t, q and p");
    }
    for (const auto& x : row) {
      if (!x.is_number()) throw FormatError(line, "samples", "sample " + std::to_string(i) + " holds a non-number");
    }
    const auto r = static_cast<Eigen::Index>(i);
    tr.times(r) = row[0].get<double>();
    for (std::size_t k = 0; k < n; ++k) {
      tr.q(r, static_cast<Eigen::Index>(k)) = row[1 + k].get<double>();
      tr.p(r, static_cast<Eigen::Index>(k)) = row[1 + n + k].get<double>();
    }
    if (i > 0 && !(tr.times(r) > tr.times(r - 1))) throw FormatError(line, "samples", "times must increase strictly");
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << serialize_dataset(ds);
  if (!f) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace sisr
