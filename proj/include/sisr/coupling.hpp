#pragma once

// Coupling structure of T(p) and V(q): how each side splits into a sum of
// subfunctions, what reduction their inputs pass through, and whether the
// subfunctions share one definition.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sisr/expr.hpp"

namespace sisr {

struct CouplingForm {
  enum class Kind { None, CompleteDecoupling, Dimensional, Pairwise };

  Kind kind = Kind::None;
  /// Body pairs (a < b, 0-based); empty with Pairwise means every pair.
  std::vector<std::pair<int, int>> pairs;

  bool operator==(const CouplingForm&) const = default;
};

enum class CompositeKind { None, Sum, Product, Manhattan, Euclidean };

struct CouplingSpec {
  CouplingForm T_form;
  CouplingForm V_form;
  CompositeKind T_composite = CompositeKind::None;
  CompositeKind V_composite = CompositeKind::None;
  bool T_symmetric = false;
  bool V_symmetric = false;

  bool operator==(const CouplingSpec&) const = default;

  /// Throws ConfigError if a form or composite does not fit the system.
  void validate(int n_bodies, int n_dims) const;
};

std::string_view form_name(CouplingForm::Kind kind) noexcept;
CouplingForm::Kind form_from_name(std::string_view name);
std::string_view composite_name(CompositeKind kind) noexcept;
CompositeKind composite_from_name(std::string_view name);

/// One coupled variable group: the coordinates entering a subfunction, and
/// for pairwise groups the two bodies.
struct CouplingGroup {
  std::vector<int> coords;
  int body_a = -1;
  int body_b = -1;
};

std::vector<CouplingGroup> coupling_groups(const CouplingForm& form, int n_bodies, int n_dims);

/// Scalar reduction of a group's variables. Distances act on the pair
/// difference for pairwise groups and on the vector itself otherwise.
ExprTree composite_expr(CompositeKind kind, const CouplingGroup& group, VarRole role, int n_dims);
double composite_value(CompositeKind kind, const CouplingGroup& group, std::span<const double> x, int n_dims);

std::string serialize_coupling(const CouplingSpec& spec);
CouplingSpec parse_coupling(const std::string& text);
void save_coupling(const CouplingSpec& spec, const std::filesystem::path& path);
CouplingSpec load_coupling(const std::filesystem::path& path);

}  // namespace sisr
