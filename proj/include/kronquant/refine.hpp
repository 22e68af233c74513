#pragma once

#include "kronquant/grid.hpp"
#include "kronquant/matrix.hpp"

namespace kronquant {

// Scale refinement state. Integer codes are frozen; only grid.scales move.
// h_in / h_out are the exact Gram curvature factors (no damping needed since
// nothing is inverted here) and r is the alpha-scaled deviation correlation.
struct RefineState {
  Matrix w;        // full-precision weights, d_out x d_in
  IMatrix w_int;   // frozen integer codes
  QuantGrid grid;  // scales under refinement (+ fixed zero points)
  Matrix q;        // current dequantized weights, kept in sync with grid
  Matrix h_in;
  Matrix h_out;
  Matrix r;        // d_in x d_in, zero when no input deviation
};

// One coordinate step on channel j:
//   s_j += [V (h_in (W-Q)^T - r^T W^T) h_out]_{j,j}
//          / ([V h_in V^T]_{j,j} [h_out]_{j,j})
// with V = codes - zero_point. Channels with a zero denominator are skipped.
// Returns the (possibly unchanged) scale and refreshes row j of q.
double cd_scale_step(RefineState& state, std::size_t j);

// n_iter full ascending sweeps of cd_scale_step.
void refine_scales(RefineState& state, int n_iter);

// Quadratic objective in the scales (additive constant dropped):
//   sum_{j,k} [V h_in V^T]_{j,k} [h_out]_{k,j} s_j s_k
//   - 2 sum_j [V (h_in - r)^T W^T h_out]_{j,j} s_j
double refine_objective(const RefineState& state);
double refine_objective_at(const RefineState& state, const std::vector<double>& scales);

}  // namespace kronquant
