#pragma once

#include <cstdint>
#include <vector>

#include "kronquant/grid.hpp"
#include "kronquant/matrix.hpp"

namespace kronquant {

// Contiguous run of out-channels quantized jointly. start indexes into the
// row frame of whatever triangular factor the caller passes in, so the same
// closed forms serve both a leading block (start = 0) and an interior block
// of a full layer factor.
struct BlockIndex {
  std::size_t start = 0;
  std::size_t n = 1;
};

// Deviation correlation r = alpha * (x - x_fp) x^T plus the Cholesky factor
// of the damped input Hessian. The inverse input Hessian is never formed
// explicitly; it is applied through two triangular solves.
struct ResidualInfo {
  Matrix r;           // d_in x d_in, already alpha-scaled
  Matrix h_in_chol;   // lower factor of the damped h_in
  double alpha = 0.0;

  static ResidualInfo none(std::size_t d_in);
  bool active() const { return alpha != 0.0 && r.max_abs() != 0.0; }
};

struct ColumnStep {
  std::vector<std::int64_t> codes;
  std::vector<double> dequant;
};

// Quantize column `col` of w in place and fold the error into columns > col
// through the row of the upper factor: dw = -(w_p - q_p) / U_pp * U_{p,p:}.
ColumnStep gptq_column_step(Matrix& w, std::size_t col, const Matrix& u_in,
                            const QuantGrid& grid);

struct InnerQuantResult {
  Matrix q;
  IMatrix w_int;
};

// Plain sequential column loop (no input-deviation term).
InnerQuantResult gptq_quantize(const Matrix& w, const Matrix& u_in, const QuantGrid& grid);

// Column loop with the propagated-error correction term
// P = (r u_in^T  (.)  M_upper) u_in applied alongside the usual update.
// With r == 0 this takes exactly the plain path.
InnerQuantResult gptaq_quantize(const Matrix& w, const Matrix& u_in, const Matrix& r,
                                const QuantGrid& grid);

// Joint compensation for a block of rows quantized at once:
//   dW_remaining = -[U^T]_{after,B} [U^T]_{B,B}^{-1} (W_B - Q_B)
// Returns the update for the rows following the block.
Matrix joint_compensate(const Matrix& w_block, const Matrix& q_block, const Matrix& u_out,
                        const BlockIndex& block);

// Same, with the quantization error corrected by the input-deviation term:
//   rhs = (W_B - Q_B) - W_B r h_in^{-1}
Matrix joint_compensate_residual(const Matrix& w_block, const Matrix& q_block,
                                 const Matrix& u_out, const BlockIndex& block,
                                 const ResidualInfo& res);

}  // namespace kronquant
