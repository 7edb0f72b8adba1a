#pragma once

// Symbolic expression trees for separable Hamiltonians.
//
// A tree is stored as its pre-order node sequence. Variables refer to a flat
// coordinate index (body * n_dims + dim) of either the position or momentum
// block; constant placeholders refer to a slot in a separately held value
// vector so one tree can be refitted without being rebuilt.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sisr/errors.hpp"

namespace sisr {

/// Add..Sin are sampleable; the rest only appear in composite templates and
/// derivative trees.
enum class Op : std::uint8_t { Add, Sub, Mul, Div, Pow, Cos, Sin, Sqrt, Abs, Log, Neg, Sign };

int arity(Op op) noexcept;
std::string_view op_symbol(Op op) noexcept;
std::optional<Op> op_from_symbol(std::string_view symbol) noexcept;

enum class VarRole : std::uint8_t { Position, Momentum, Pseudo };

/// "q1x", "p2y": role letter, 1-based body, dimension letter.
std::string coordinate_name(VarRole role, int coord, int n_dims);

struct Token {
  enum class Kind : std::uint8_t { Operator, Variable, Constant };

  Kind kind = Kind::Constant;
  std::string symbol = "const";
  Op op = Op::Add;
  VarRole role = VarRole::Position;
  int index = 0;

  int arity() const noexcept { return kind == Kind::Operator ? sisr::arity(op) : 0; }

  static Token operator_token(Op op);
  static Token variable(std::string symbol, VarRole role, int index);
  static Token constant();
};

/// Ordered vocabulary: operators, then variables, then the constant
/// placeholder. Indices are stable for the lifetime of the library.
class TokenLibrary {
 public:
  TokenLibrary(std::vector<Op> operators, std::vector<Token> variables, bool has_const);

  std::size_t size() const noexcept { return tokens_.size(); }
  const Token& at(std::size_t i) const { return tokens_.at(i); }
  std::span<const Token> tokens() const noexcept { return tokens_; }
  std::size_t n_operators() const noexcept { return n_ops_; }
  std::size_t n_variables() const noexcept { return n_vars_; }
  bool has_const() const noexcept { return has_const_; }
  std::optional<std::size_t> const_index() const noexcept;
  std::optional<std::size_t> find(std::string_view symbol) const noexcept;
  std::optional<std::size_t> find_variable(VarRole role, int index) const noexcept;

 private:
  std::vector<Token> tokens_;
  std::size_t n_ops_ = 0;
  std::size_t n_vars_ = 0;
  bool has_const_ = false;
};

/// Position or momentum coordinate tokens q1x.. / p1x.. for an n-body system.
std::vector<Token> coordinate_tokens(VarRole role, int n_bodies, int n_dims);

struct Node {
  enum class Kind : std::uint8_t { Operator, Variable, Constant, Literal };

  Kind kind = Kind::Literal;
  Op op = Op::Add;
  VarRole role = VarRole::Position;
  int index = 0;  // coordinate for variables, slot for constants
  double literal = 0.0;

  bool operator==(const Node&) const = default;
};

class ExprTree {
 public:
  ExprTree() = default;
  /// Throws ParseError if the sequence is not a single complete tree.
  explicit ExprTree(std::vector<Node> preorder);

  static ExprTree variable(VarRole role, int index);
  static ExprTree constant(int slot);
  static ExprTree literal(double value);
  static ExprTree unary(Op op, const ExprTree& a);
  static ExprTree binary(Op op, const ExprTree& a, const ExprTree& b);

  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  /// Pre-order index of the k-th child of node i.
  std::size_t child(std::size_t i, int k) const noexcept {
    return k == 0 ? i + 1 : i + 1 + extent_[i + 1];
  }
  std::size_t subtree_size(std::size_t i) const noexcept { return extent_[i]; }

  /// Node ids of constant placeholders, in pre-order.
  std::vector<std::size_t> const_slots() const;
  /// One past the largest referenced slot.
  int slot_count() const noexcept;
  bool uses(VarRole role) const noexcept;
  int operator_count() const noexcept;
  /// Replace every variable of `from` role through `map(index)`.
  ExprTree substitute(VarRole from, const std::function<ExprTree(int)>& map) const;
  ExprTree shift_slots(int offset) const;

  bool operator==(const ExprTree& other) const { return nodes_ == other.nodes_; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> extent_;
};

ExprTree parse_preorder(std::span<const std::string> tokens, const TokenLibrary& lib, int first_slot = 0);
ExprTree parse_preorder_ids(std::span<const std::size_t> ids, const TokenLibrary& lib, int first_slot = 0);
std::vector<std::string> to_preorder(const ExprTree& tree, const TokenLibrary& lib);

struct Bindings {
  std::span<const double> q;
  std::span<const double> p;
  std::span<const double> pseudo;

  double value(VarRole role, int index) const;
};

double eval(const ExprTree& tree, const Bindings& at, std::span<const double> constants);

/// Exact symbolic partial derivative with zero/one pruning.
ExprTree differentiate(const ExprTree& tree, VarRole role, int index);

/// Partial derivatives w.r.t. the listed coordinates of `role`.
std::vector<double> grad_vars(const ExprTree& tree, const Bindings& at, std::span<const double> constants,
                              VarRole role, std::span<const int> wrt);

/// Derivatives of the value and of every partial w.r.t. each constant slot.
struct ConstTangents {
  double value = 0.0;
  std::vector<double> value_dc;               // [slot]
  std::vector<int> wrt;                       // coordinates
  std::vector<double> grad;                   // [wrt]
  std::vector<std::vector<double>> grad_dc;   // [wrt][slot]
};

ConstTangents const_tangents(const ExprTree& tree, const Bindings& at, std::span<const double> constants,
                             VarRole role, std::span<const int> wrt);

/// Scratch buffers for forward-mode evaluation; one per thread.
struct JetWorkspace {
  std::vector<double> val;
  std::vector<double> tan;
};

/// Value and tangent of `tree` along `dirs` directions. Constant slot s < dirs
/// carries the unit tangent e_s; variables carry `q_tan` / `p_tan`
/// (coordinate-major, `dirs` entries each), or zero when those spans are empty.
/// Returns false on a domain violation.
bool eval_jet(const ExprTree& tree, std::span<const double> q, std::span<const double> p,
              std::span<const double> q_tan, std::span<const double> p_tan,
              std::span<const double> constants, int dirs, JetWorkspace& ws, double& value,
              std::span<double> tangent) noexcept;

struct HamiltonianCandidate {
  ExprTree T;  // over momenta
  ExprTree V;  // over positions
  std::vector<double> constants;
  int n_bodies = 1;
  int n_dims = 1;

  int n_coords() const noexcept { return n_bodies * n_dims; }
  int slot_count() const noexcept;
  /// Throws Error on separability or slot-count violations.
  void validate() const;
};

/// Pre-differentiated gradient field dT/dp, dV/dq of a candidate.
class CompiledCandidate {
 public:
  explicit CompiledCandidate(const HamiltonianCandidate& candidate);

  int n_coords() const noexcept { return n_coords_; }
  int n_constants() const noexcept { return n_constants_; }

  bool dT_dp(std::span<const double> p, std::span<const double> constants, std::span<double> out,
             JetWorkspace& ws) const noexcept;
  bool dV_dq(std::span<const double> q, std::span<const double> constants, std::span<double> out,
             JetWorkspace& ws) const noexcept;
  /// Jets: `p_tan`/`out_tan` are coordinate-major with n_constants() entries.
  bool dT_dp_jet(std::span<const double> p, std::span<const double> p_tan, std::span<const double> constants,
                 std::span<double> out, std::span<double> out_tan, JetWorkspace& ws) const noexcept;
  bool dV_dq_jet(std::span<const double> q, std::span<const double> q_tan, std::span<const double> constants,
                 std::span<double> out, std::span<double> out_tan, JetWorkspace& ws) const noexcept;

 private:
  int n_coords_ = 0;
  int n_constants_ = 0;
  std::vector<ExprTree> dT_;  // empty tree = identically zero
  std::vector<ExprTree> dV_;
};

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

struct PhaseDomain {
  std::vector<Interval> q;
  std::vector<Interval> p;
  /// Optional restriction on positions (e.g. excluding near-collisions);
  /// rejected points are redrawn and do not count as failures.
  std::function<bool(std::span<const double> q)> admit;

  static PhaseDomain uniform(int n_coords, Interval range);
};

/// Largest |da - db| / max(1, |da|, |db|) over gradient components at Halton
/// points of the domain: absolute where gradients are small, relative where
/// they are large. Points where either field is undefined are skipped; throws
/// DomainError when more than half of the evaluated points fail.
double max_gradient_gap(const HamiltonianCandidate& a, const HamiltonianCandidate& b, const PhaseDomain& domain,
                        int min_points = 256);

bool numeric_equivalence(const HamiltonianCandidate& a, const HamiltonianCandidate& b, const PhaseDomain& domain,
                         double tol, int min_points = 256);

using VariableNamer = std::function<std::string(VarRole, int)>;

/// Fully parenthesised infix; constants printed with 6 significant digits.
std::string to_infix(const ExprTree& tree, std::span<const double> constants, const VariableNamer& namer);
std::string to_infix(const HamiltonianCandidate& candidate);

/// Parses the report's infix form back into a separable candidate; every
/// numeric literal becomes a constant slot holding that value.
HamiltonianCandidate parse_infix_hamiltonian(std::string_view text, int n_bodies, int n_dims);

}  // namespace sisr
