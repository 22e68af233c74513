#pragma once

#include <functional>
#include <vector>

#include "kronquant/compensate.hpp"
#include "kronquant/matrix.hpp"
#include "kronquant/rng.hpp"

namespace kronquant {

// Brute-force validator for the constrained compensation problems. Solves
//   min  tr(h_out dW h_in dW^T) + <linear_term, dW>_F
//   s.t. [dW]_{B,:} = rhs_block
// by assembling the full stationarity-plus-constraints linear system in
// vec(dW) and the Lagrange multipliers. Deliberately simple and dense;
// compiled into the test surface only.
struct KktSystem {
  Matrix h_out;
  Matrix h_in;
  BlockIndex block;   // constrained rows
  Matrix rhs_block;   // forced dW values on the constrained rows, n x d_in
  Matrix linear_term; // gradient of the linear objective part; empty means zero
};

struct KktSolution {
  Matrix delta_w;  // d_out x d_in, constrained rows equal rhs_block
  Matrix lambda;   // n x d_in multipliers
};

KktSolution kkt_solve(const KktSystem& sys);

// Objective value at a candidate update (for optimality probes).
double kkt_objective(const KktSystem& sys, const Matrix& delta_w);

// Linear term matching the deviation-aware objective: 2 [h_out]_{:,B} w_block r.
Matrix kkt_linear_term(const Matrix& h_out, const BlockIndex& block, const Matrix& w_block,
                       const Matrix& r);

// Dense scan over [lo, hi] with `steps` points plus one parabola refinement
// on the best interior triple. Throws on non-finite objective values.
double scan_min_1d(const std::function<double(double)>& f, double lo, double hi, int steps);

// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
std::vector<double> sym_eigenvalues(Matrix a);

// Triple-loop reference multiply, independent of the Matrix operator.
Matrix naive_matmul(const Matrix& a, const Matrix& b);

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);
Matrix random_spd(Rng& rng, std::size_t n, double ridge = 0.1);

}  // namespace kronquant
