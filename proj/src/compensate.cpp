#include "kronquant/compensate.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kronquant {

ResidualInfo ResidualInfo::none(std::size_t d_in) {
  ResidualInfo res;
  res.r = Matrix(d_in, d_in);
  res.alpha = 0.0;
  return res;
}

namespace {

void check_upper_factor(const Matrix& u, std::size_t dim, const char* who) {
  if (u.rows() != u.cols() || u.rows() != dim)
    throw std::invalid_argument(std::string(who) + ": factor shape mismatch");
}

}  // namespace

ColumnStep gptq_column_step(Matrix& w, std::size_t col, const Matrix& u_in,
                            const QuantGrid& grid) {
  check_upper_factor(u_in, w.cols(), "gptq_column_step");
  if (grid.size() != w.rows())
    throw std::invalid_argument("gptq_column_step: grid does not match rows");
  const double u_pp = u_in(col, col);
  if (u_pp == 0.0)
    throw std::runtime_error("gptq_column_step: zero pivot in factor at column " +
                             std::to_string(col));
  const std::int64_t lo = grid.code_min();
  const std::int64_t hi = grid.code_max();
  ColumnStep step;
  step.codes.resize(w.rows());
  step.dequant.resize(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double s = grid.scales[r];
    const std::int64_t z = grid.zero_points[r];
    if (!(s > 0.0)) throw std::invalid_argument("gptq_column_step: nonpositive scale");
    std::int64_t code =
        static_cast<std::int64_t>(round_half_even(w(r, col) / s)) + z;
    code = code < lo ? lo : (code > hi ? hi : code);
    const double q = s * static_cast<double>(code - z);
    step.codes[r] = code;
    step.dequant[r] = q;
    const double e = (w(r, col) - q) / u_pp;
    for (std::size_t c = col; c < w.cols(); ++c) w(r, c) -= e * u_in(col, c);
  }
  return step;
}

InnerQuantResult gptq_quantize(const Matrix& w, const Matrix& u_in, const QuantGrid& grid) {
  Matrix work = w;
  InnerQuantResult out;
  out.w_int = IMatrix(w.rows(), w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    const ColumnStep step = gptq_column_step(work, j, u_in, grid);
    for (std::size_t r = 0; r < w.rows(); ++r) out.w_int(r, j) = step.codes[r];
  }
  out.q = dequantize(out.w_int, grid);
  return out;
}

InnerQuantResult gptaq_quantize(const Matrix& w, const Matrix& u_in, const Matrix& r,
                                const QuantGrid& grid) {
  check_upper_factor(u_in, w.cols(), "gptaq_quantize");
  if (r.max_abs() == 0.0) return gptq_quantize(w, u_in, grid);
  if (r.rows() != w.cols() || r.cols() != w.cols())
    throw std::invalid_argument("gptaq_quantize: deviation correlation shape mismatch");

  // P = (r u^T with the diagonal and below zeroed) u; strictly upper result.
  const std::size_t d = w.cols();
  Matrix t = r * u_in.transposed();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) t(i, j) = 0.0;
  const Matrix p = t * u_in;

  Matrix work = w;
  InnerQuantResult out;
  out.w_int = IMatrix(w.rows(), w.cols());
  std::vector<double> col_snapshot(w.rows());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t row = 0; row < w.rows(); ++row) col_snapshot[row] = work(row, j);
    const ColumnStep step = gptq_column_step(work, j, u_in, grid);
    for (std::size_t row = 0; row < w.rows(); ++row) {
      out.w_int(row, j) = step.codes[row];
      const double wj = col_snapshot[row];
      for (std::size_t c = j; c < d; ++c) work(row, c) -= wj * p(j, c);
    }
  }
  out.q = dequantize(out.w_int, grid);
  return out;
}

namespace {

// Shared solve: -[U^T]_{after,B} [U^T]_{B,B}^{-1} rhs. The (B, B) block of
// the transposed factor is lower triangular, so one forward substitution
// covers both compensation rules.
Matrix compensate_from_rhs(const Matrix& rhs, const Matrix& u_out, const BlockIndex& block) {
  const std::size_t d_out = u_out.rows();
  const std::size_t start = block.start;
  const std::size_t n = block.n;
  if (n == 0 || start + n > d_out)
    throw std::invalid_argument("joint_compensate: block out of range");
  if (rhs.rows() != n) throw std::invalid_argument("joint_compensate: block shape mismatch");

  Matrix diag_block(n, n);  // [U^T]_{B,B}, lower triangular
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) diag_block(i, j) = u_out(start + j, start + i);
  for (std::size_t i = 0; i < n; ++i)
    if (diag_block(i, i) == 0.0)
      throw std::runtime_error("joint_compensate: singular diagonal block at row " +
                               std::to_string(start + i));
  const Matrix y = solve_lower(diag_block, rhs);

  const std::size_t rem = d_out - start - n;
  Matrix update(rem, rhs.cols());
  for (std::size_t i = 0; i < rem; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double a = u_out(start + k, start + n + i);  // [U^T]_{after,B}(i, k)
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < rhs.cols(); ++c) update(i, c) -= a * y(k, c);
    }
  }
  return update;
}

}  // namespace

Matrix joint_compensate(const Matrix& w_block, const Matrix& q_block, const Matrix& u_out,
                        const BlockIndex& block) {
  if (!same_shape(w_block, q_block))
    throw std::invalid_argument("joint_compensate: block shapes differ");
  return compensate_from_rhs(w_block - q_block, u_out, block);
}

Matrix joint_compensate_residual(const Matrix& w_block, const Matrix& q_block,
                                 const Matrix& u_out, const BlockIndex& block,
                                 const ResidualInfo& res) {
  if (!same_shape(w_block, q_block))
    throw std::invalid_argument("joint_compensate_residual: block shapes differ");
  if (!res.active()) return compensate_from_rhs(w_block - q_block, u_out, block);
  // rhs = (W_B - Q_B) - W_B r h_in^{-1}, the inverse applied via the factor.
  const Matrix correction = solve_spd_chol_right(res.h_in_chol, w_block * res.r);
  return compensate_from_rhs(w_block - q_block - correction, u_out, block);
}

}  // namespace kronquant
