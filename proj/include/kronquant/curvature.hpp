#pragma once

#include "kronquant/matrix.hpp"

namespace kronquant {

// Kronecker-factored curvature H = h_in (x) h_out. Both factors are symmetric
// Gram matrices; builders return them pre-damping.
struct KronHessian {
  Matrix h_in;   // d_in x d_in
  Matrix h_out;  // d_out x d_out
};

// Upper-triangular factors U with U^T U = H^{-1}, one per Kronecker side.
struct CholFactors {
  Matrix u_in;
  Matrix u_out;
};

// Query projection: h_in = x x^T, h_out = k_h^T k_h.
KronHessian build_hessian_query(const Matrix& x, const Matrix& k_h);

// Key projection: h_in = x x^T, h_out = q_h^T q_h.
KronHessian build_hessian_key(const Matrix& x, const Matrix& q_h);

// Value projection: h_in = x a_h^T a_h x^T, h_out = w_out_h^T w_out_h.
// a_h must be row-stochastic (attention weights).
KronHessian build_hessian_value(const Matrix& x, const Matrix& a_h, const Matrix& w_out_h);

// h + lambda_frac * mean(diag(h)) * I
Matrix dampen(const Matrix& h, double lambda_frac);

// Upper-triangular U with U^T U = h^{-1}. Requires h positive definite.
Matrix chol_inv_upper(const Matrix& h);

CholFactors chol_factors(const KronHessian& damped);

}  // namespace kronquant
