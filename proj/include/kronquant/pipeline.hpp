#pragma once

#include <vector>

#include "kronquant/compensate.hpp"
#include "kronquant/curvature.hpp"
#include "kronquant/grid.hpp"
#include "kronquant/toymodel.hpp"

namespace kronquant {

struct PipelineConfig {
  int bits = 2;
  std::size_t block_n = 4;   // out-channels quantized jointly per step
  double alpha = 0.25;       // stabilization coefficient for the deviation term
  int cd_iters = 1;
  double damping = 0.01;     // applied before every inversion
  std::vector<double> candidates = {0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 1.00};
  RangeMode range_mode = RangeMode::signed_symmetric;
  bool f2_residual = true;   // compensate errors propagated from earlier blocks
  bool f3_grid = true;       // per-block adaptive grid + CD scale refinement
};

using LayerReport = QuantDiag;

// Explicit tensors for the reported attention losses: g is the context
// factor (h_out = g^T g), x_eff the effective layer input and dx_eff its
// deviation from the full-precision stream.
struct AttnLossContext {
  Matrix g;
  Matrix x_eff;
  Matrix dx_eff;
};

// Full per-layer run: damped factors, block loop (optional per-block grid,
// inner column quantization with the deviation term, joint compensation of
// the remaining rows), then optional CD scale refinement.
QuantResult quantize_layer(const Matrix& w, const KronHessian& hess,
                           const CalibrationBundle& bundle, const PipelineConfig& cfg,
                           const AttnLossContext* loss_ctx = nullptr);

struct AttnQuantResult {
  AttnBlock qblock;                 // quantized q/k/v weights, w_out untouched
  std::vector<QuantResult> layers;  // head-major, q/k/v order within each head
};

AttnQuantResult quantize_attention(const AttnBlock& blk,
                                   const std::vector<AttentionContext>& ctx,
                                   const CalibrationBundle& bundle,
                                   const PipelineConfig& cfg);

BlockQuantizer make_block_quantizer(const PipelineConfig& cfg);

}  // namespace kronquant
