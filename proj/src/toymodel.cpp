#include "kronquant/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "kronquant/rng.hpp"

namespace kronquant {

Matrix AttnBlock::w_out_head(std::size_t h) const {
  return w_out.block(0, h * head_dim, model_dim, head_dim);
}

AttnBlock AttnBlock::random(std::uint64_t seed, std::size_t d, std::size_t d_h,
                            std::size_t heads) {
  AttnBlock blk;
  blk.heads = heads;
  blk.head_dim = d_h;
  blk.model_dim = d;
  Rng rng(derive_seed(seed, 0xb10c));
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto fill = [&](Matrix& m, double scale) {
    for (double& v : m.data()) v = scale * rng.gaussian();
  };
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix q(d_h, d), k(d_h, d), v(d_h, d);
    fill(q, proj_scale);
    fill(k, proj_scale);
    fill(v, proj_scale);
    blk.w_q.push_back(std::move(q));
    blk.w_k.push_back(std::move(k));
    blk.w_v.push_back(std::move(v));
  }
  blk.w_out = Matrix(d, heads * d_h);
  fill(blk.w_out, 1.0 / std::sqrt(static_cast<double>(heads * d_h)));
  return blk;
}

CalibrationBundle CalibrationBundle::make(Matrix x, Matrix x_tilde, double alpha) {
  if (!same_shape(x, x_tilde))
    throw std::invalid_argument("CalibrationBundle: input shapes differ");
  CalibrationBundle b;
  b.r = alpha * ((x - x_tilde) * x.transposed());
  b.x = std::move(x);
  b.x_tilde = std::move(x_tilde);
  b.alpha = alpha;
  return b;
}

Matrix gen_calibration(std::uint64_t seed, std::size_t d, std::size_t len,
                       std::size_t outlier_channels, double outlier_gain) {
  if (outlier_channels > d)
    throw std::invalid_argument("gen_calibration: more outlier channels than channels");
  Rng rng(derive_seed(seed, 0xca11b));
  Matrix x(d, len);
  for (double& v : x.data()) v = rng.gaussian();
  // pick the outlier subset by partial shuffle, deterministic in the seed
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < outlier_channels; ++i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i, d - 1));
    std::swap(idx[i], idx[j]);
  }
  for (std::size_t i = 0; i < outlier_channels; ++i)
    for (std::size_t c = 0; c < len; ++c) x(idx[i], c) *= outlier_gain;
  return x;
}

ForwardResult forward_attention(const AttnBlock& blk, const Matrix& x) {
  if (x.rows() != blk.model_dim)
    throw std::invalid_argument("forward_attention: input dimension mismatch");
  const std::size_t len = x.cols();
  const double inv_temp = 1.0 / std::sqrt(static_cast<double>(blk.head_dim));

  ForwardResult out;
  out.output = Matrix(blk.model_dim, len);
  for (std::size_t h = 0; h < blk.heads; ++h) {
    AttentionContext ctx;
    ctx.q = (blk.w_q[h] * x).transposed();  // L x d_h
    ctx.k = (blk.w_k[h] * x).transposed();
    Matrix logits = ctx.q * ctx.k.transposed();  // L x L
    ctx.a = Matrix(len, len);
    for (std::size_t i = 0; i < len; ++i) {
      double m = -1e300;
      for (std::size_t j = 0; j <= i; ++j) m = std::max(m, logits(i, j) * inv_temp);
      double denom = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double e = std::exp(logits(i, j) * inv_temp - m);
        ctx.a(i, j) = e;
        denom += e;
      }
      for (std::size_t j = 0; j <= i; ++j) ctx.a(i, j) /= denom;
    }
    const Matrix v = blk.w_v[h] * x;                               // d_h x L
    const Matrix head_out = blk.w_out_head(h) * (v * ctx.a.transposed());  // d x L
    if (!ctx.q.all_finite() || !ctx.k.all_finite() || !ctx.a.all_finite() ||
        !head_out.all_finite())
      throw std::runtime_error("forward_attention: non-finite activation in head " +
                               std::to_string(h));
    out.output = out.output + head_out;
    out.heads.push_back(std::move(ctx));
  }
  return out;
}

double attention_recon_error(const Matrix& g, const Matrix& delta_w, const Matrix& x) {
  const double n = (g * delta_w * x).frob_norm();
  return n * n;
}

PropagateResult propagate_blocks(const std::vector<AttnBlock>& blocks, const Matrix& x0,
                                 double alpha, const BlockQuantizer& quantizer,
                                 bool ctx_from_fp_stream) {
  if (blocks.empty()) throw std::invalid_argument("propagate_blocks: no blocks");

  // reference pass through the full-precision stack
  std::vector<Matrix> x_fp;
  std::vector<ForwardResult> fwd_fp;
  x_fp.push_back(x0);
  for (const AttnBlock& blk : blocks) {
    fwd_fp.push_back(forward_attention(blk, x_fp.back()));
    x_fp.push_back(fwd_fp.back().output);
  }

  PropagateResult result;
  Matrix x = x0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    CalibrationBundle bundle = CalibrationBundle::make(x, x_fp[b], alpha);
    std::vector<AttentionContext> ctx_storage;
    const std::vector<AttentionContext>* ctx = &fwd_fp[b].heads;
    if (!ctx_from_fp_stream) {
      ctx_storage = forward_attention(blocks[b], x).heads;
      ctx = &ctx_storage;
    }
    BlockQuantOutcome outcome = quantizer(blocks[b], *ctx, bundle);
    x = forward_attention(outcome.qblock, x).output;
    result.bundles.push_back(std::move(bundle));
    result.quantized.push_back(std::move(outcome.qblock));
    result.reports.push_back(std::move(outcome.reports));
  }

  const Matrix dev = x - x_fp.back();
  double mse = 0.0;
  for (double v : dev.data()) mse += v * v;
  result.final_mse = mse / static_cast<double>(dev.data().size());
  return result;
}

}  // namespace kronquant
