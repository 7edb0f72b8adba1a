#pragma once

// Fourth-order symplectic (Forest-Ruth) integration of separable
// Hamiltonians, plus the forward-mode rollout used to fit candidate constants.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sisr/expr.hpp"

namespace sisr {

struct IntegratorCoefficients {
  std::array<double, 4> c{};
  std::array<double, 4> d{};

  /// c1=c4=1/(2(2-2^(1/3))), c2=c3=(1-2^(1/3))/(2(2-2^(1/3))),
  /// d1=d3=1/(2-2^(1/3)), d2=-2^(1/3)/(2-2^(1/3)), d4=0.
  static IntegratorCoefficients forest_ruth() noexcept;
  /// Same table with d2 taken positive. Not consistent (sum d != 1); kept so
  /// the order test can show why the negative sign is the right one.
  static IntegratorCoefficients positive_d2() noexcept;
};

/// dT/dp and dV/dq. Each callable returns false when the field is undefined
/// at the given point.
struct GradientField {
  int n_coords = 0;
  std::function<bool(std::span<const double> p, std::span<double> out)> dT_dp;
  std::function<bool(std::span<const double> q, std::span<double> out)> dV_dq;
};

/// Field of a compiled candidate with fixed constant values. The workspace
/// makes the field single-threaded; build one per thread.
GradientField candidate_field(const CompiledCandidate& candidate, std::vector<double> constants);

/// One step of the 4-stage scheme, in place: for j = 1..4
/// q += c_j h dT/dp(p); p -= d_j h dV/dq(q). Throws FieldError(0).
void step4(std::span<double> q, std::span<double> p, double h, const GradientField& field,
           const IntegratorCoefficients& coeffs = IntegratorCoefficients::forest_ruth());

struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd q;  // rows = samples, cols = coordinates
  Eigen::MatrixXd p;

  Eigen::Index size() const noexcept { return times.size(); }
  int n_coords() const noexcept { return static_cast<int>(q.cols()); }
};

/// n_points uniform samples on [t0, t1]; each interval is covered by
/// `substeps` calls of step4. FieldError carries the failing interval index.
Trajectory rollout(const GradientField& field, std::span<const double> q0, std::span<const double> p0, double t0,
                   double t1, int n_points, int substeps);

struct RolloutGradient {
  bool valid = false;
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d constant slot
};

/// Mean squared error of `horizon`-step predictions started from every index
/// in `starts` (all admissible starts when empty), with exact gradients w.r.t.
/// the constants carried through every stage by forward-mode tangents.
RolloutGradient rollout_loss_and_const_grads(const CompiledCandidate& candidate, std::span<const double> constants,
                                             const Trajectory& data, int horizon, int substeps = 1,
                                             std::span<const std::size_t> starts = {});

/// Predictions of samples 1..n-1, each started from the preceding observed
/// sample. Returns false if the field is undefined anywhere.
bool one_step_predictions(const CompiledCandidate& candidate, std::span<const double> constants,
                          const Trajectory& data, int substeps, Trajectory& predicted);

}  // namespace sisr
