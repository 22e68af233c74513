#include "kronquant/curvature.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kronquant {

namespace {

Matrix gram_of_rows(const Matrix& t) {  // t^T t, symmetric by construction
  return symmetrized(t.transposed() * t);
}

}  // namespace

KronHessian build_hessian_query(const Matrix& x, const Matrix& k_h) {
  if (x.empty() || k_h.empty())
    throw std::invalid_argument("build_hessian_query: empty input");
  return {symmetrized(x * x.transposed()), gram_of_rows(k_h)};
}

KronHessian build_hessian_key(const Matrix& x, const Matrix& q_h) {
  if (x.empty() || q_h.empty())
    throw std::invalid_argument("build_hessian_key: empty input");
  return {symmetrized(x * x.transposed()), gram_of_rows(q_h)};
}

KronHessian build_hessian_value(const Matrix& x, const Matrix& a_h, const Matrix& w_out_h) {
  if (x.empty() || a_h.empty() || w_out_h.empty())
    throw std::invalid_argument("build_hessian_value: empty input");
  if (a_h.rows() != a_h.cols() || a_h.rows() != x.cols())
    throw std::invalid_argument("build_hessian_value: attention matrix shape mismatch");
  for (std::size_t i = 0; i < a_h.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < a_h.cols(); ++j) row_sum += a_h(i, j);
    if (std::fabs(row_sum - 1.0) > 1e-8)
      throw std::invalid_argument("build_hessian_value: attention row " + std::to_string(i) +
                                  " is not a probability distribution");
  }
  // x a^T a x^T as the Gram of (a x^T)
  return {gram_of_rows(a_h * x.transposed()), gram_of_rows(w_out_h)};
}

Matrix dampen(const Matrix& h, double lambda_frac) {
  if (h.rows() != h.cols()) throw std::invalid_argument("dampen: matrix not square");
  if (lambda_frac < 0.0) throw std::invalid_argument("dampen: negative damping");
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) mean_diag += h(i, i);
  mean_diag /= static_cast<double>(h.rows());
  Matrix out = h;
  const double shift = lambda_frac * mean_diag;
  for (std::size_t i = 0; i < h.rows(); ++i) out(i, i) += shift;
  return out;
}

Matrix chol_inv_upper(const Matrix& h) {
  const Matrix l = cholesky_lower(h);
  Matrix hinv = symmetrized(solve_spd_chol(l, Matrix::identity(h.rows())));
  return cholesky_lower(hinv).transposed();
}

CholFactors chol_factors(const KronHessian& damped) {
  return {chol_inv_upper(damped.h_in), chol_inv_upper(damped.h_out)};
}

}  // namespace kronquant
