#include "sisr/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

namespace sisr {

namespace {

constexpr std::array<std::string_view, 12> kOpSymbols = {"add", "sub", "mul", "div", "pow",  "cos",
                                                         "sin", "sqrt", "abs", "log", "neg", "sign"};

}  // namespace

int arity(Op op) noexcept {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
      return 2;
    default:
      return 1;
  }
}

std::string_view op_symbol(Op op) noexcept { return kOpSymbols[static_cast<std::size_t>(op)]; }

std::optional<Op> op_from_symbol(std::string_view symbol) noexcept {
  for (std::size_t i = 0; i < kOpSymbols.size(); ++i) {
    if (kOpSymbols[i] == symbol) return static_cast<Op>(i);
  }
  return std::nullopt;
}

std::string coordinate_name(VarRole role, int coord, int n_dims) {
  std::string name;
  switch (role) {
    case VarRole::Position: name = "q"; break;
    case VarRole::Momentum: name = "p"; break;
    case VarRole::Pseudo: return "u" + std::to_string(coord);
  }
  const int body = coord / n_dims + 1;
  const int dim = coord % n_dims;
  name += std::to_string(body);
  if (n_dims <= 3) {
    name += "xyz"[dim];
  } else {
    name += "_" + std::to_string(dim + 1);
  }
  return name;
}

Token Token::operator_token(Op op) {
  Token t;
  t.kind = Kind::Operator;
  t.symbol = std::string(op_symbol(op));
  t.op = op;
  return t;
}

Token Token::variable(std::string symbol, VarRole role, int index) {
  Token t;
  t.kind = Kind::Variable;
  t.symbol = std::move(symbol);
  t.role = role;
  t.index = index;
  return t;
}

Token Token::constant() { return Token{}; }

TokenLibrary::TokenLibrary(std::vector<Op> operators, std::vector<Token> variables, bool has_const)
    : n_ops_(operators.size()), n_vars_(variables.size()), has_const_(has_const) {
  for (Op op : operators) tokens_.push_back(Token::operator_token(op));
  for (auto& v : variables) {
    if (v.kind != Token::Kind::Variable) throw ConfigError("token library: non-variable in variable list");
    tokens_.push_back(std::move(v));
  }
  if (has_const) tokens_.push_back(Token::constant());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    for (std::size_t j = i + 1; j < tokens_.size(); ++j) {
      if (tokens_[i].symbol == tokens_[j].symbol) {
        throw ConfigError("token library: duplicate symbol '" + tokens_[i].symbol + "'");
      }
    }
  }
}

std::optional<std::size_t> TokenLibrary::const_index() const noexcept {
  if (!has_const_) return std::nullopt;
  return tokens_.size() - 1;
}

std::optional<std::size_t> TokenLibrary::find(std::string_view symbol) const noexcept {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].symbol == symbol) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> TokenLibrary::find_variable(VarRole role, int index) const noexcept {
  for (std::size_t i = n_ops_; i < n_ops_ + n_vars_; ++i) {
    if (tokens_[i].role == role && tokens_[i].index == index) return i;
  }
  return std::nullopt;
}

std::vector<Token> coordinate_tokens(VarRole role, int n_bodies, int n_dims) {
  std::vector<Token> out;
  for (int k = 0; k < n_bodies * n_dims; ++k) {
    out.push_back(Token::variable(coordinate_name(role, k, n_dims), role, k));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ExprTree

ExprTree::ExprTree(std::vector<Node> preorder) : nodes_(std::move(preorder)) {
  long open = 1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (open == 0) {
      throw ParseError(ParseError::Kind::TrailingTokens, i, "tokens remain after the expression closed");
    }
    const auto& n = nodes_[i];
    open += (n.kind == Node::Kind::Operator ? arity(n.op) : 0) - 1;
  }
  if (open != 0) {
    throw ParseError(ParseError::Kind::IncompleteSequence, nodes_.size(),
                     "expression needs " + std::to_string(open) + " more token(s)");
  }
  extent_.assign(nodes_.size(), 1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const auto& n = nodes_[i];
    if (n.kind != Node::Kind::Operator) continue;
    std::uint32_t total = 1;
    std::size_t c = i + 1;
    for (int k = 0; k < arity(n.op); ++k) {
      total += extent_[c];
      c += extent_[c];
    }
    extent_[i] = total;
  }
}

ExprTree ExprTree::variable(VarRole role, int index) {
  Node n;
  n.kind = Node::Kind::Variable;
  n.role = role;
  n.index = index;
  return ExprTree({n});
}

ExprTree ExprTree::constant(int slot) {
  Node n;
  n.kind = Node::Kind::Constant;
  n.index = slot;
  return ExprTree({n});
}

ExprTree ExprTree::literal(double value) {
  Node n;
  n.kind = Node::Kind::Literal;
  n.literal = value;
  return ExprTree({n});
}

ExprTree ExprTree::unary(Op op, const ExprTree& a) {
  Node n;
  n.kind = Node::Kind::Operator;
  n.op = op;
  std::vector<Node> nodes{n};
  nodes.insert(nodes.end(), a.nodes_.begin(), a.nodes_.end());
  return ExprTree(std::move(nodes));
}

ExprTree ExprTree::binary(Op op, const ExprTree& a, const ExprTree& b) {
  Node n;
  n.kind = Node::Kind::Operator;
  n.op = op;
  std::vector<Node> nodes{n};
  nodes.reserve(1 + a.size() + b.size());
  nodes.insert(nodes.end(), a.nodes_.begin(), a.nodes_.end());
  nodes.insert(nodes.end(), b.nodes_.begin(), b.nodes_.end());
  return ExprTree(std::move(nodes));
}

std::vector<std::size_t> ExprTree::const_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == Node::Kind::Constant) out.push_back(i);
  }
  return out;
}

int ExprTree::slot_count() const noexcept {
  int n = 0;
  for (const auto& node : nodes_) {
    if (node.kind == Node::Kind::Constant) n = std::max(n, node.index + 1);
  }
  return n;
}

bool ExprTree::uses(VarRole role) const noexcept {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [role](const Node& n) { return n.kind == Node::Kind::Variable && n.role == role; });
}

int ExprTree::operator_count() const noexcept {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                        [](const Node& n) { return n.kind == Node::Kind::Operator; }));
}

ExprTree ExprTree::substitute(VarRole from, const std::function<ExprTree(int)>& map) const {
  std::vector<Node> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    if (n.kind == Node::Kind::Variable && n.role == from) {
      const ExprTree repl = map(n.index);
      out.insert(out.end(), repl.nodes_.begin(), repl.nodes_.end());
    } else {
      out.push_back(n);
    }
  }
  return ExprTree(std::move(out));
}

ExprTree ExprTree::shift_slots(int offset) const {
  std::vector<Node> out = nodes_;
  for (auto& n : out) {
    if (n.kind == Node::Kind::Constant) n.index += offset;
  }
  return ExprTree(std::move(out));
}

// ---------------------------------------------------------------------------
// Pre-order token sequences

ExprTree parse_preorder_ids(std::span<const std::size_t> ids, const TokenLibrary& lib, int first_slot) {
  std::vector<Node> nodes;
  nodes.reserve(ids.size());
  int slot = first_slot;
  long open = 1;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= lib.size()) {
      throw ParseError(ParseError::Kind::UnknownToken, i, "token id " + std::to_string(ids[i]) + " out of range");
    }
    if (open == 0) {
      throw ParseError(ParseError::Kind::TrailingTokens, i, "tokens remain after the expression closed");
    }
    const Token& t = lib.at(ids[i]);
    Node n;
    switch (t.kind) {
      case Token::Kind::Operator:
        n.kind = Node::Kind::Operator;
        n.op = t.op;
        break;
      case Token::Kind::Variable:
        n.kind = Node::Kind::Variable;
        n.role = t.role;
        n.index = t.index;
        break;
      case Token::Kind::Constant:
        n.kind = Node::Kind::Constant;
        n.index = slot++;
        break;
    }
    open += t.arity() - 1;
    nodes.push_back(n);
  }
  return ExprTree(std::move(nodes));
}

ExprTree parse_preorder(std::span<const std::string> tokens, const TokenLibrary& lib, int first_slot) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto id = lib.find(tokens[i]);
    if (!id) throw ParseError(ParseError::Kind::UnknownToken, i, "unknown token '" + tokens[i] + "'");
    ids.push_back(*id);
  }
  return parse_preorder_ids(ids, lib, first_slot);
}

std::vector<std::string> to_preorder(const ExprTree& tree, const TokenLibrary& lib) {
  std::vector<std::string> out;
  for (const auto& n : tree.nodes()) {
    switch (n.kind) {
      case Node::Kind::Operator: {
        auto id = lib.find(op_symbol(n.op));
        if (!id) throw Error("operator '" + std::string(op_symbol(n.op)) + "' not in token library");
        out.push_back(lib.at(*id).symbol);
        break;
      }
      case Node::Kind::Variable: {
        auto id = lib.find_variable(n.role, n.index);
        if (!id) throw Error("variable not in token library");
        out.push_back(lib.at(*id).symbol);
        break;
      }
      case Node::Kind::Constant:
        if (!lib.has_const()) throw Error("token library has no constant placeholder");
        out.push_back(lib.at(*lib.const_index()).symbol);
        break;
      case Node::Kind::Literal:
        throw Error("literal nodes have no token form");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

double Bindings::value(VarRole role, int index) const {
  std::span<const double> s = role == VarRole::Position ? q : role == VarRole::Momentum ? p : pseudo;
  if (index < 0 || static_cast<std::size_t>(index) >= s.size()) {
    throw Error("unbound variable " + coordinate_name(role, index, 1));
  }
  return s[static_cast<std::size_t>(index)];
}

namespace {

// Forward-mode evaluation over the pre-order array, children before parents.
// `var` returns (value, tangent pointer or nullptr) for a variable node.
template <class VarFn>
bool eval_core(const ExprTree& tree, VarFn&& var, std::span<const double> constants, int dirs, JetWorkspace& ws,
               double& value, std::span<double> tangent) {
  const std::size_t n = tree.size();
  const std::size_t d = static_cast<std::size_t>(dirs);
  if (ws.val.size() < n) ws.val.resize(n);
  if (ws.tan.size() < n * d) ws.tan.resize(n * d);
  double* val = ws.val.data();
  double* tan = ws.tan.data();

  for (std::size_t i = n; i-- > 0;) {
    const Node& node = tree.node(i);
    double* ti = tan + i * d;
    switch (node.kind) {
      case Node::Kind::Variable: {
        const auto [x, tx] = var(node);
        val[i] = x;
        if (tx != nullptr) {
          std::copy(tx, tx + d, ti);
        } else {
          std::fill(ti, ti + d, 0.0);
        }
        break;
      }
      case Node::Kind::Constant: {
        const auto slot = static_cast<std::size_t>(node.index);
        if (slot >= constants.size()) return false;
        val[i] = constants[slot];
        std::fill(ti, ti + d, 0.0);
        if (slot < d) ti[slot] = 1.0;
        break;
      }
      case Node::Kind::Literal:
        val[i] = node.literal;
        std::fill(ti, ti + d, 0.0);
        break;
      case Node::Kind::Operator: {
        const std::size_t c0 = i + 1;
        const double a = val[c0];
        const double* ta = tan + c0 * d;
        if (arity(node.op) == 2) {
          const std::size_t c1 = tree.child(i, 1);
          const double b = val[c1];
          const double* tb = tan + c1 * d;
          switch (node.op) {
            case Op::Add:
              val[i] = a + b;
              for (std::size_t k = 0; k < d; ++k) ti[k] = ta[k] + tb[k];
              break;
            case Op::Sub:
              val[i] = a - b;
              for (std::size_t k = 0; k < d; ++k) ti[k] = ta[k] - tb[k];
              break;
            case Op::Mul:
              val[i] = a * b;
              for (std::size_t k = 0; k < d; ++k) ti[k] = ta[k] * b + a * tb[k];
              break;
            case Op::Div: {
              if (b == 0.0) return false;
              const double r = a / b;
              val[i] = r;
              for (std::size_t k = 0; k < d; ++k) ti[k] = (ta[k] - r * tb[k]) / b;
              break;
            }
            case Op::Pow: {
              if (a < 0.0 && b != std::trunc(b)) return false;
              if (a == 0.0 && b < 0.0) return false;
              const double r = std::pow(a, b);
              val[i] = r;
              if (d == 0) break;
              bool tb_zero = true;
              bool ta_zero = true;
              for (std::size_t k = 0; k < d; ++k) {
                tb_zero = tb_zero && tb[k] == 0.0;
                ta_zero = ta_zero && ta[k] == 0.0;
              }
              const double da = ta_zero ? 0.0 : b * std::pow(a, b - 1.0);
              double db = 0.0;
              if (!tb_zero) {
                if (a > 0.0) {
                  db = r * std::log(a);
                } else if (a < 0.0) {
                  return false;
                }
              }
              for (std::size_t k = 0; k < d; ++k) ti[k] = da * ta[k] + db * tb[k];
              break;
            }
            default:
              return false;
          }
        } else {
          switch (node.op) {
            case Op::Cos: {
              val[i] = std::cos(a);
              const double s = -std::sin(a);
              for (std::size_t k = 0; k < d; ++k) ti[k] = s * ta[k];
              break;
            }
            case Op::Sin: {
              val[i] = std::sin(a);
              const double c = std::cos(a);
              for (std::size_t k = 0; k < d; ++k) ti[k] = c * ta[k];
              break;
            }
            case Op::Sqrt: {
              if (a < 0.0) return false;
              const double s = std::sqrt(a);
              val[i] = s;
              for (std::size_t k = 0; k < d; ++k) ti[k] = ta[k] == 0.0 ? 0.0 : ta[k] * 0.5 / s;
              break;
            }
            case Op::Abs: {
              val[i] = std::fabs(a);
              const double s = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
              for (std::size_t k = 0; k < d; ++k) ti[k] = s * ta[k];
              break;
            }
            case Op::Log:
              if (a <= 0.0) return false;
              val[i] = std::log(a);
              for (std::size_t k = 0; k < d; ++k) ti[k] = ta[k] / a;
              break;
            case Op::Neg:
              val[i] = -a;
              for (std::size_t k = 0; k < d; ++k) ti[k] = -ta[k];
              break;
            case Op::Sign:
              val[i] = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
              std::fill(ti, ti + d, 0.0);
              break;
            default:
              return false;
          }
        }
        break;
      }
    }
    if (!std::isfinite(val[i])) return false;
  }
  value = val[0];
  for (std::size_t k = 0; k < d; ++k) {
    if (!std::isfinite(tan[k])) return false;
    tangent[k] = tan[k];
  }
  return true;
}

}  // namespace

bool eval_jet(const ExprTree& tree, std::span<const double> q, std::span<const double> p,
              std::span<const double> q_tan, std::span<const double> p_tan, std::span<const double> constants,
              int dirs, JetWorkspace& ws, double& value, std::span<double> tangent) noexcept {
  if (tree.empty()) return false;
  const auto d = static_cast<std::size_t>(dirs);
  bool bound = true;
  auto var = [&](const Node& node) -> std::pair<double, const double*> {
    const auto k = static_cast<std::size_t>(node.index);
    const bool is_q = node.role == VarRole::Position;
    const auto& vals = is_q ? q : p;
    const auto& tans = is_q ? q_tan : p_tan;
    if (node.role == VarRole::Pseudo || k >= vals.size()) {
      bound = false;
      return {0.0, nullptr};
    }
    return {vals[k], tans.empty() ? nullptr : tans.data() + k * d};
  };
  const bool ok = eval_core(tree, var, constants, dirs, ws, value, tangent);
  return ok && bound;
}

double eval(const ExprTree& tree, const Bindings& at, std::span<const double> constants) {
  if (tree.empty()) throw Error("eval of empty expression");
  JetWorkspace ws;
  auto var = [&](const Node& node) -> std::pair<double, const double*> {
    return {at.value(node.role, node.index), nullptr};
  };
  double value = 0.0;
  if (!eval_core(tree, var, constants, 0, ws, value, {})) {
    throw DomainError("expression left the real domain");
  }
  return value;
}

// ---------------------------------------------------------------------------
// Symbolic differentiation

namespace {

bool is_literal(const ExprTree& t, double v) {
  return t.size() == 1 && t.node(0).kind == Node::Kind::Literal && t.node(0).literal == v;
}

ExprTree zero() { return ExprTree::literal(0.0); }

ExprTree neg_s(const ExprTree& a) {
  if (is_literal(a, 0.0)) return a;
  if (a.node(0).kind == Node::Kind::Literal) return ExprTree::literal(-a.node(0).literal);
  if (a.node(0).kind == Node::Kind::Operator && a.node(0).op == Op::Neg) {
    return ExprTree(std::vector<Node>(a.nodes().begin() + 1, a.nodes().end()));
  }
  return ExprTree::unary(Op::Neg, a);
}

ExprTree add_s(const ExprTree& a, const ExprTree& b) {
  if (is_literal(a, 0.0)) return b;
  if (is_literal(b, 0.0)) return a;
  return ExprTree::binary(Op::Add, a, b);
}

ExprTree sub_s(const ExprTree& a, const ExprTree& b) {
  if (is_literal(b, 0.0)) return a;
  if (is_literal(a, 0.0)) return neg_s(b);
  return ExprTree::binary(Op::Sub, a, b);
}

ExprTree mul_s(const ExprTree& a, const ExprTree& b) {
  if (is_literal(a, 0.0) || is_literal(b, 0.0)) return zero();
  if (is_literal(a, 1.0)) return b;
  if (is_literal(b, 1.0)) return a;
  return ExprTree::binary(Op::Mul, a, b);
}

ExprTree div_s(const ExprTree& a, const ExprTree& b) {
  if (is_literal(a, 0.0)) return zero();
  if (is_literal(b, 1.0)) return a;
  return ExprTree::binary(Op::Div, a, b);
}

ExprTree subtree(const ExprTree& t, std::size_t i) {
  auto nodes = t.nodes().subspan(i, t.subtree_size(i));
  return ExprTree(std::vector<Node>(nodes.begin(), nodes.end()));
}

ExprTree derive(const ExprTree& t, std::size_t i, VarRole role, int index) {
  const Node& n = t.node(i);
  switch (n.kind) {
    case Node::Kind::Variable:
      return ExprTree::literal(n.role == role && n.index == index ? 1.0 : 0.0);
    case Node::Kind::Constant:
    case Node::Kind::Literal:
      return zero();
    case Node::Kind::Operator:
      break;
  }
  const std::size_t c0 = i + 1;
  const ExprTree da = derive(t, c0, role, index);
  if (arity(n.op) == 2) {
    const std::size_t c1 = t.child(i, 1);
    const ExprTree db = derive(t, c1, role, index);
    if (is_literal(da, 0.0) && is_literal(db, 0.0)) return zero();
    const ExprTree a = subtree(t, c0);
    const ExprTree b = subtree(t, c1);
    switch (n.op) {
      case Op::Add:
        return add_s(da, db);
      case Op::Sub:
        return sub_s(da, db);
      case Op::Mul:
        return add_s(mul_s(da, b), mul_s(a, db));
      case Op::Div:
        if (is_literal(db, 0.0)) return div_s(da, b);
        return sub_s(div_s(da, b), div_s(mul_s(a, db), ExprTree::binary(Op::Mul, b, b)));
      case Op::Pow: {
        ExprTree term = zero();
        if (!is_literal(da, 0.0)) {
          const ExprTree bm1 = b.size() == 1 && b.node(0).kind == Node::Kind::Literal
                                   ? ExprTree::literal(b.node(0).literal - 1.0)
                                   : ExprTree::binary(Op::Sub, b, ExprTree::literal(1.0));
          term = mul_s(mul_s(b, ExprTree::binary(Op::Pow, a, bm1)), da);
        }
        if (!is_literal(db, 0.0)) {
          term = add_s(term, mul_s(mul_s(ExprTree::binary(Op::Pow, a, b), ExprTree::unary(Op::Log, a)), db));
        }
        return term;
      }
      default:
        break;
    }
    return zero();
  }
  if (is_literal(da, 0.0)) return zero();
  const ExprTree a = subtree(t, c0);
  switch (n.op) {
    case Op::Cos:
      return mul_s(neg_s(ExprTree::unary(Op::Sin, a)), da);
    case Op::Sin:
      return mul_s(ExprTree::unary(Op::Cos, a), da);
    case Op::Sqrt:
      return div_s(da, ExprTree::binary(Op::Mul, ExprTree::literal(2.0), ExprTree::unary(Op::Sqrt, a)));
    case Op::Abs:
      return mul_s(ExprTree::unary(Op::Sign, a), da);
    case Op::Log:
      return div_s(da, a);
    case Op::Neg:
      return neg_s(da);
    default:
      return zero();
  }
}

}  // namespace

ExprTree differentiate(const ExprTree& tree, VarRole role, int index) {
  if (tree.empty()) throw Error("differentiate of empty expression");
  return derive(tree, 0, role, index);
}

std::vector<double> grad_vars(const ExprTree& tree, const Bindings& at, std::span<const double> constants,
                              VarRole role, std::span<const int> wrt) {
  std::vector<double> out;
  out.reserve(wrt.size());
  eval(tree, at, constants);  // the partials are only meaningful where the value is defined
  for (int k : wrt) out.push_back(eval(differentiate(tree, role, k), at, constants));
  return out;
}

ConstTangents const_tangents(const ExprTree& tree, const Bindings& at, std::span<const double> constants,
                             VarRole role, std::span<const int> wrt) {
  const int dirs = static_cast<int>(constants.size());
  JetWorkspace ws;
  ConstTangents out;
  auto var = [&](const Node& node) -> std::pair<double, const double*> {
    return {at.value(node.role, node.index), nullptr};
  };
  auto run = [&](const ExprTree& t, double& value, std::vector<double>& dc) {
    dc.assign(constants.size(), 0.0);
    if (!eval_core(t, var, constants, dirs, ws, value, dc)) throw DomainError("expression left the real domain");
  };
  run(tree, out.value, out.value_dc);
  out.wrt.assign(wrt.begin(), wrt.end());
  for (int k : wrt) {
    double g = 0.0;
    std::vector<double> gdc;
    run(differentiate(tree, role, k), g, gdc);
    out.grad.push_back(g);
    out.grad_dc.push_back(std::move(gdc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Candidates

int HamiltonianCandidate::slot_count() const noexcept {
  return std::max(T.empty() ? 0 : T.slot_count(), V.empty() ? 0 : V.slot_count());
}

void HamiltonianCandidate::validate() const {
  if (T.empty() || V.empty()) throw Error("candidate: T and V must both be present");
  if (T.uses(VarRole::Position) || T.uses(VarRole::Pseudo)) throw Error("candidate: T references a non-momentum variable");
  if (V.uses(VarRole::Momentum) || V.uses(VarRole::Pseudo)) throw Error("candidate: V references a non-position variable");
  if (static_cast<std::size_t>(slot_count()) > constants.size()) {
    throw Error("candidate: constants vector shorter than the slot count");
  }
  for (const ExprTree* t : {&T, &V}) {
    for (const auto& n : t->nodes()) {
      if (n.kind == Node::Kind::Variable && (n.index < 0 || n.index >= n_coords())) {
        throw Error("candidate: variable index outside the phase space");
      }
    }
  }
}

CompiledCandidate::CompiledCandidate(const HamiltonianCandidate& candidate)
    : n_coords_(candidate.n_coords()), n_constants_(static_cast<int>(candidate.constants.size())) {
  candidate.validate();
  dT_.resize(static_cast<std::size_t>(n_coords_));
  dV_.resize(static_cast<std::size_t>(n_coords_));
  for (int k = 0; k < n_coords_; ++k) {
    ExprTree dt = differentiate(candidate.T, VarRole::Momentum, k);
    ExprTree dv = differentiate(candidate.V, VarRole::Position, k);
    if (!is_literal(dt, 0.0)) dT_[static_cast<std::size_t>(k)] = std::move(dt);
    if (!is_literal(dv, 0.0)) dV_[static_cast<std::size_t>(k)] = std::move(dv);
  }
}

namespace {

bool field_values(const std::vector<ExprTree>& trees, bool is_q, std::span<const double> x,
                  std::span<const double> constants, std::span<double> out, JetWorkspace& ws) {
  for (std::size_t k = 0; k < trees.size(); ++k) {
    if (trees[k].empty()) {
      out[k] = 0.0;
      continue;
    }
    const bool ok = is_q ? eval_jet(trees[k], x, {}, {}, {}, constants, 0, ws, out[k], {})
                         : eval_jet(trees[k], {}, x, {}, {}, constants, 0, ws, out[k], {});
    if (!ok) return false;
  }
  return true;
}

bool field_jets(const std::vector<ExprTree>& trees, bool is_q, std::span<const double> x,
                std::span<const double> x_tan, std::span<const double> constants, int dirs, std::span<double> out,
                std::span<double> out_tan, JetWorkspace& ws) {
  const auto d = static_cast<std::size_t>(dirs);
  for (std::size_t k = 0; k < trees.size(); ++k) {
    auto tk = out_tan.subspan(k * d, d);
    if (trees[k].empty()) {
      out[k] = 0.0;
      std::fill(tk.begin(), tk.end(), 0.0);
      continue;
    }
    const bool ok = is_q ? eval_jet(trees[k], x, {}, x_tan, {}, constants, dirs, ws, out[k], tk)
                         : eval_jet(trees[k], {}, x, {}, x_tan, constants, dirs, ws, out[k], tk);
    if (!ok) return false;
  }
  return true;
}

}  // namespace

bool CompiledCandidate::dT_dp(std::span<const double> p, std::span<const double> constants, std::span<double> out,
                              JetWorkspace& ws) const noexcept {
  return field_values(dT_, false, p, constants, out, ws);
}

bool CompiledCandidate::dV_dq(std::span<const double> q, std::span<const double> constants, std::span<double> out,
                              JetWorkspace& ws) const noexcept {
  return field_values(dV_, true, q, constants, out, ws);
}

bool CompiledCandidate::dT_dp_jet(std::span<const double> p, std::span<const double> p_tan,
                                  std::span<const double> constants, std::span<double> out, std::span<double> out_tan,
                                  JetWorkspace& ws) const noexcept {
  return field_jets(dT_, false, p, p_tan, constants, n_constants_, out, out_tan, ws);
}

bool CompiledCandidate::dV_dq_jet(std::span<const double> q, std::span<const double> q_tan,
                                  std::span<const double> constants, std::span<double> out, std::span<double> out_tan,
                                  JetWorkspace& ws) const noexcept {
  return field_jets(dV_, true, q, q_tan, constants, n_constants_, out, out_tan, ws);
}

// ---------------------------------------------------------------------------
// Equivalence of gradient fields

PhaseDomain PhaseDomain::uniform(int n_coords, Interval range) {
  PhaseDomain d;
  d.q.assign(static_cast<std::size_t>(n_coords), range);
  d.p.assign(static_cast<std::size_t>(n_coords), range);
  return d;
}

namespace {

constexpr std::array<int, 24> kPrimes = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37,
                                         41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};

double radical_inverse(long index, int base) {
  double f = 1.0;
  double r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

}  // namespace

double max_gradient_gap(const HamiltonianCandidate& a, const HamiltonianCandidate& b, const PhaseDomain& domain,
                        int min_points) {
  if (a.n_coords() != b.n_coords()) throw Error("equivalence: candidates over different phase spaces");
  const auto n = static_cast<std::size_t>(a.n_coords());
  if (domain.q.size() != n || domain.p.size() != n) throw Error("equivalence: domain dimension mismatch");
  if (2 * n > kPrimes.size()) throw Error("equivalence: phase space too large for the Halton table");
  const CompiledCandidate ca(a);
  const CompiledCandidate cb(b);
  JetWorkspace ws;
  std::vector<double> q(n), p(n), ga(n), gb(n);
  double gap = 0.0;
  int valid = 0;
  int failed = 0;
  const long cap = 100L * min_points;
  for (long i = 1; i <= cap && valid < min_points && failed <= min_points; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double uq = radical_inverse(i, kPrimes[k]);
      const double up = radical_inverse(i, kPrimes[n + k]);
      q[k] = domain.q[k].lo + uq * (domain.q[k].hi - domain.q[k].lo);
      p[k] = domain.p[k].lo + up * (domain.p[k].hi - domain.p[k].lo);
    }
    if (domain.admit && !domain.admit(q)) continue;
    double local = 0.0;
    auto compare = [&] {
      for (std::size_t k = 0; k < n; ++k) {
        const double scale = std::max({1.0, std::fabs(ga[k]), std::fabs(gb[k])});
        local = std::max(local, std::fabs(ga[k] - gb[k]) / scale);
      }
    };
    bool ok = ca.dT_dp(p, a.constants, ga, ws) && cb.dT_dp(p, b.constants, gb, ws);
    if (ok) compare();
    ok = ok && ca.dV_dq(q, a.constants, ga, ws) && cb.dV_dq(q, b.constants, gb, ws);
    if (ok) compare();
    if (!ok) {
      ++failed;
      continue;
    }
    gap = std::max(gap, local);
    ++valid;
  }
  if (valid < min_points) throw DomainError("equivalence: more than half of the sample points were undefined");
  return gap;
}

bool numeric_equivalence(const HamiltonianCandidate& a, const HamiltonianCandidate& b, const PhaseDomain& domain,
                         double tol, int min_points) {
  return max_gradient_gap(a, b, domain, min_points) <= tol;
}

// ---------------------------------------------------------------------------
// Infix text

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string render(const ExprTree& t, std::size_t i, std::span<const double> constants, const VariableNamer& namer) {
  const Node& n = t.node(i);
  switch (n.kind) {
    case Node::Kind::Variable:
      return namer(n.role, n.index);
    case Node::Kind::Constant: {
      const auto slot = static_cast<std::size_t>(n.index);
      return slot < constants.size() ? format_number(constants[slot]) : "c" + std::to_string(n.index);
    }
    case Node::Kind::Literal:
      return format_number(n.literal);
    case Node::Kind::Operator:
      break;
  }
  const std::string a = render(t, i + 1, constants, namer);
  if (arity(n.op) == 2) {
    const std::string b = render(t, t.child(i, 1), constants, namer);
    const char* sym = "+";
    switch (n.op) {
      case Op::Sub: sym = "-"; break;
      case Op::Mul: sym = "*"; break;
      case Op::Div: sym = "/"; break;
      case Op::Pow: sym = "^"; break;
      default: break;
    }
    return "(" + a + " " + sym + " " + b + ")";
  }
  if (n.op == Op::Neg) return "(-" + a + ")";
  return std::string(op_symbol(n.op)) + "(" + a + ")";
}

class InfixParser {
 public:
  InfixParser(std::string_view text, int n_bodies, int n_dims, std::vector<double>& constants)
      : text_(text), n_bodies_(n_bodies), n_dims_(n_dims), constants_(constants) {}

  ExprTree parse() {
    ExprTree e = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(ParseError::Kind::Syntax, pos_, msg + " at position " + std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n')) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExprTree expr() {
    ExprTree lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = ExprTree::binary(Op::Add, lhs, term());
      } else if (accept('-')) {
        lhs = ExprTree::binary(Op::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  ExprTree term() {
    ExprTree lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = ExprTree::binary(Op::Mul, lhs, unary());
      } else if (accept('/')) {
        lhs = ExprTree::binary(Op::Div, lhs, unary());
      } else {
        return lhs;
      }
    }
  }

  ExprTree unary() {
    skip_ws();
    if (accept('-')) {
      skip_ws();
      if (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
        ExprTree num = number(-1.0);
        return power_tail(num);
      }
      return ExprTree::unary(Op::Neg, unary());
    }
    return power_tail(primary());
  }

  ExprTree power_tail(const ExprTree& base) {
    if (accept('^')) return ExprTree::binary(Op::Pow, base, unary());
    return base;
  }

  ExprTree number(double sign) {
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc()) fail("malformed number");
    pos_ += static_cast<std::size_t>(ptr - begin);
    constants_.push_back(sign * v);
    return ExprTree::constant(static_cast<int>(constants_.size()) - 1);
  }

  ExprTree primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      ExprTree e = expr();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number(1.0);
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        ++pos_;
      }
      const std::string ident(text_.substr(start, pos_ - start));
      if (auto op = op_from_symbol(ident); op && arity(*op) == 1) {
        if (!accept('(')) fail("expected '(' after " + ident);
        ExprTree arg = expr();
        if (!accept(')')) fail("expected ')'");
        return ExprTree::unary(*op, arg);
      }
      for (VarRole role : {VarRole::Position, VarRole::Momentum}) {
        for (int k = 0; k < n_bodies_ * n_dims_; ++k) {
          if (coordinate_name(role, k, n_dims_) == ident) return ExprTree::variable(role, k);
        }
      }
      pos_ = start;
      fail("unknown identifier '" + ident + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int n_bodies_;
  int n_dims_;
  std::vector<double>& constants_;
};

enum RoleMask : unsigned { kNone = 0, kQ = 1, kP = 2 };

unsigned roles_in(const ExprTree& t, std::size_t i) {
  unsigned m = 0;
  for (std::size_t k = i; k < i + t.subtree_size(i); ++k) {
    const Node& n = t.node(k);
    if (n.kind != Node::Kind::Variable) continue;
    m |= n.role == VarRole::Momentum ? kP : kQ;
  }
  return m;
}

struct SignedTerm {
  ExprTree tree;
  bool negative;
  unsigned roles;
};

void split_terms(const ExprTree& t, std::size_t i, bool negative, std::vector<SignedTerm>& out) {
  const unsigned roles = roles_in(t, i);
  if (roles != (kQ | kP)) {
    out.push_back({subtree(t, i), negative, roles});
    return;
  }
  const Node& n = t.node(i);
  if (n.kind == Node::Kind::Operator) {
    if (n.op == Op::Add || n.op == Op::Sub) {
      split_terms(t, i + 1, negative, out);
      split_terms(t, t.child(i, 1), n.op == Op::Sub ? !negative : negative, out);
      return;
    }
    if (n.op == Op::Neg) {
      split_terms(t, i + 1, !negative, out);
      return;
    }
  }
  throw ParseError(ParseError::Kind::NotSeparable, 0, "expression is not of the form T(p) + V(q)");
}

ExprTree combine(const std::vector<SignedTerm>& terms) {
  if (terms.empty()) return ExprTree::literal(0.0);
  ExprTree acc = terms[0].negative ? ExprTree::unary(Op::Neg, terms[0].tree) : terms[0].tree;
  for (std::size_t i = 1; i < terms.size(); ++i) {
    acc = ExprTree::binary(terms[i].negative ? Op::Sub : Op::Add, acc, terms[i].tree);
  }
  return acc;
}

}  // namespace

std::string to_infix(const ExprTree& tree, std::span<const double> constants, const VariableNamer& namer) {
  if (tree.empty()) return "";
  return render(tree, 0, constants, namer);
}

std::string to_infix(const HamiltonianCandidate& candidate) {
  const int n_dims = candidate.n_dims;
  VariableNamer namer = [n_dims](VarRole role, int k) { return coordinate_name(role, k, n_dims); };
  return to_infix(candidate.T, candidate.constants, namer) + " + " + to_infix(candidate.V, candidate.constants, namer);
}

HamiltonianCandidate parse_infix_hamiltonian(std::string_view text, int n_bodies, int n_dims) {
  HamiltonianCandidate c;
  c.n_bodies = n_bodies;
  c.n_dims = n_dims;
  InfixParser parser(text, n_bodies, n_dims, c.constants);
  const ExprTree h = parser.parse();
  std::vector<SignedTerm> terms;
  split_terms(h, 0, false, terms);
  std::vector<SignedTerm> t_terms;
  std::vector<SignedTerm> v_terms;
  for (auto& term : terms) (term.roles == kP ? t_terms : v_terms).push_back(std::move(term));
  c.T = combine(t_terms);
  c.V = combine(v_terms);
  c.validate();
  return c;
}

}  // namespace sisr
