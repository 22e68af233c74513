#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kronquant/grid.hpp"
#include "kronquant/matrix.hpp"

namespace kronquant {

// Attention-only toy block. No layer norm, rotary embedding or MLP: the
// output of one block feeds the next block's input directly.
struct AttnBlock {
  std::vector<Matrix> w_q, w_k, w_v;  // per head, head_dim x model_dim
  Matrix w_out;                       // model_dim x (heads * head_dim)
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t model_dim = 0;

  Matrix w_out_head(std::size_t h) const;
  static AttnBlock random(std::uint64_t seed, std::size_t d, std::size_t d_h,
                          std::size_t heads);
};

// Per-head activations of one forward pass: projected queries/keys (length
// major) and the causal row-stochastic attention matrix.
struct AttentionContext {
  Matrix q;  // L x d_h
  Matrix k;  // L x d_h
  Matrix a;  // L x L, rows sum to 1, strictly upper zero
};

struct ForwardResult {
  std::vector<AttentionContext> heads;
  Matrix output;  // model_dim x L
};

// Layer input under the partially quantized model, its full-precision
// counterpart, and their alpha-scaled deviation correlation.
struct CalibrationBundle {
  Matrix x;        // d x L
  Matrix x_tilde;  // d x L
  double alpha = 0.0;
  Matrix r;        // alpha * (x - x_tilde) x^T

  static CalibrationBundle make(Matrix x, Matrix x_tilde, double alpha);
};

// Unit-Gaussian calibration input with a fixed random subset of channels
// scaled by outlier_gain. Deterministic in the seed.
Matrix gen_calibration(std::uint64_t seed, std::size_t d, std::size_t len,
                       std::size_t outlier_channels, double outlier_gain);

ForwardResult forward_attention(const AttnBlock& blk, const Matrix& x);

// || g * delta_w * x ||_F^2
double attention_recon_error(const Matrix& g, const Matrix& delta_w, const Matrix& x);

struct BlockQuantOutcome {
  AttnBlock qblock;
  std::vector<QuantDiag> reports;  // head-major, q/k/v within each head
};

using BlockQuantizer = std::function<BlockQuantOutcome(
    const AttnBlock&, const std::vector<AttentionContext>&, const CalibrationBundle&)>;

struct PropagateResult {
  std::vector<CalibrationBundle> bundles;
  std::vector<AttnBlock> quantized;
  std::vector<std::vector<QuantDiag>> reports;
  double final_mse = 0.0;  // mean squared deviation of the last output vs FP
};

// Runs the FP stack once to record reference inputs, then quantizes blocks in
// order, feeding each block's quantized output forward. The attention context
// handed to the quantizer comes from the FP weights applied to the quantized
// stream; set ctx_from_fp_stream to use the FP stream instead.
PropagateResult propagate_blocks(const std::vector<AttnBlock>& blocks, const Matrix& x0,
                                 double alpha, const BlockQuantizer& quantizer,
                                 bool ctx_from_fp_stream = false);

}  // namespace kronquant
