#pragma once

#include <cstdint>
#include <vector>

#include "kronquant/matrix.hpp"

namespace kronquant {

enum class RangeMode {
  signed_symmetric,  // codes in [-2^{b-1}, 2^{b-1}-1], zero points fixed at 0
  unsigned_affine,   // codes in [0, 2^b-1], per-channel integer zero points
};

// Per-out-channel quantization grid: q = s * (code - z) row-wise.
struct QuantGrid {
  std::vector<double> scales;
  std::vector<std::int64_t> zero_points;
  int bits = 4;
  RangeMode mode = RangeMode::signed_symmetric;

  static QuantGrid uniform(std::size_t n, int bits, RangeMode mode);

  std::size_t size() const { return scales.size(); }
  std::int64_t code_min() const;
  std::int64_t code_max() const;

  QuantGrid slice(std::size_t start, std::size_t n) const;
  void set_slice(std::size_t start, const QuantGrid& s);
};

// Per-layer diagnostics. Attention losses come in two flavours: the pure
// weight-perturbation value ||G dW X||_F^2 and the deviation-aware value
// ||G dW X + G W dX||_F^2 measured against the full-precision reference.
struct QuantDiag {
  std::size_t sequential_steps = 0;
  double block_loop_ms = 0.0;
  double loss_layer_pre = 0.0;
  double loss_layer_post = 0.0;
  double loss_attn_pre = 0.0;
  double loss_attn_post = 0.0;
  double loss_attn_dev_pre = 0.0;
  double loss_attn_dev_post = 0.0;
};

struct QuantResult {
  IMatrix w_int;
  QuantGrid grid;
  Matrix q;  // always equals dequantize(w_int, grid) bit-for-bit
  QuantDiag diag;
};

struct RoundResult {
  IMatrix codes;
  Matrix dequant;
};

double round_half_even(double x);

// Round each row of w_rows onto its channel grid, clamping to the code range.
RoundResult round_to_grid(const Matrix& w_rows, const QuantGrid& grid);

Matrix dequantize(const IMatrix& codes, const QuantGrid& grid);

// Per-row clipping-ratio search: for each candidate ratio g the scale is
// g * max|w_row| / code_max_positive; the winner minimizes dw * h_in * dw^T.
// Ties break toward the larger ratio. All-zero rows get scale 1.
QuantGrid init_scales_for_block(const Matrix& w_block, const Matrix& h_in, int bits,
                                const std::vector<double>& candidates,
                                RangeMode mode = RangeMode::signed_symmetric);

}  // namespace kronquant
