#pragma once

#include <random>
#include <vector>

#include "sisr/expr.hpp"

namespace sisr::fixtures {

// Random tree with exactly n_ops operators drawn from `ops`; leaves are
// variables of `role` or fresh constant slots.
inline ExprTree random_tree(std::mt19937_64& rng, int n_ops, const std::vector<Op>& ops, VarRole role, int n_coords,
                            int& next_slot) {
  if (n_ops == 0) {
    std::bernoulli_distribution use_const(0.35);
    if (use_const(rng)) return ExprTree::constant(next_slot++);
    std::uniform_int_distribution<int> coord(0, n_coords - 1);
    return ExprTree::variable(role, coord(rng));
  }
  std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 1);
  const Op op = ops[pick(rng)];
  if (arity(op) == 1) return ExprTree::unary(op, random_tree(rng, n_ops - 1, ops, role, n_coords, next_slot));
  std::uniform_int_distribution<int> split(0, n_ops - 1);
  const int left = split(rng);
  ExprTree a = random_tree(rng, left, ops, role, n_coords, next_slot);
  ExprTree b = random_tree(rng, n_ops - 1 - left, ops, role, n_coords, next_slot);
  return ExprTree::binary(op, a, b);
}

inline const std::vector<Op>& smooth_ops() {
  static const std::vector<Op> ops = {Op::Add, Op::Sub, Op::Mul, Op::Cos, Op::Sin};
  return ops;
}

inline const std::vector<Op>& all_sampleable_ops() {
  static const std::vector<Op> ops = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow, Op::Cos, Op::Sin};
  return ops;
}

}  // namespace sisr::fixtures
