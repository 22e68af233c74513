#include "kronquant/pipeline.hpp"

#include <chrono>
#include <stdexcept>
#include <string>

#include "kronquant/refine.hpp"

namespace kronquant {

namespace {

double frob_sq(const Matrix& m) {
  const double n = m.frob_norm();
  return n * n;
}

// tr(h_out dW h_in dW^T), the curvature form of ||g dW x_eff||_F^2
double attn_loss_trace(const KronHessian& hess, const Matrix& dw) {
  return trace_product(hess.h_out * dw, hess.h_in * dw.transposed());
}

struct LossSnapshot {
  double layer = 0.0;
  double attn = 0.0;
  double attn_dev = 0.0;
};

LossSnapshot measure_losses(const Matrix& w, const Matrix& q, const KronHessian& hess,
                            const CalibrationBundle& bundle, const AttnLossContext* ctx) {
  LossSnapshot s;
  const Matrix dw = q - w;
  s.layer = frob_sq(dw * bundle.x);
  s.attn = attn_loss_trace(hess, dw);
  if (ctx != nullptr) {
    if (ctx->dx_eff.max_abs() == 0.0) {
      s.attn_dev = frob_sq(ctx->g * (dw * ctx->x_eff));
    } else {
      s.attn_dev = frob_sq(ctx->g * (dw * ctx->x_eff + w * ctx->dx_eff));
    }
  } else {
    s.attn_dev = s.attn;
  }
  return s;
}

}  // namespace

QuantResult quantize_layer(const Matrix& w, const KronHessian& hess,
                           const CalibrationBundle& bundle, const PipelineConfig& cfg,
                           const AttnLossContext* loss_ctx) {
  const std::size_t d_out = w.rows();
  const std::size_t d_in = w.cols();
  if (hess.h_in.rows() != d_in || hess.h_out.rows() != d_out)
    throw std::invalid_argument("quantize_layer: curvature shape mismatch");
  if (cfg.block_n == 0 || cfg.bits < 2)
    throw std::invalid_argument("quantize_layer: bad configuration");
  if (!w.all_finite()) throw std::runtime_error("quantize_layer: non-finite input weights");

  const Matrix h_in_damped = dampen(hess.h_in, cfg.damping);
  const Matrix h_out_damped = dampen(hess.h_out, cfg.damping);
  const CholFactors factors = chol_factors({h_in_damped, h_out_damped});
  const Matrix& u_in = factors.u_in;
  const Matrix& u_out = factors.u_out;

  ResidualInfo res = ResidualInfo::none(d_in);
  if (cfg.f2_residual && bundle.r.max_abs() != 0.0) {
    res.r = bundle.r;
    res.alpha = bundle.alpha;
    res.h_in_chol = cholesky_lower(h_in_damped);
  }
  const Matrix zero_r(d_in, d_in);
  const Matrix& r_eff = res.active() ? res.r : zero_r;

  QuantResult out;
  out.w_int = IMatrix(d_out, d_in);
  out.grid = QuantGrid::uniform(d_out, cfg.bits, cfg.range_mode);
  out.q = Matrix(d_out, d_in);
  if (!cfg.f3_grid)
    out.grid = init_scales_for_block(w, hess.h_in, cfg.bits, cfg.candidates, cfg.range_mode);

  Matrix work = w;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t steps = 0;
  for (std::size_t i = 0; i < d_out; i += cfg.block_n) {
    const std::size_t n = std::min(cfg.block_n, d_out - i);
    ++steps;
    const Matrix w_block = work.block(i, 0, n, d_in);
    QuantGrid grid_block =
        cfg.f3_grid ? init_scales_for_block(w_block, hess.h_in, cfg.bits, cfg.candidates,
                                            cfg.range_mode)
                    : out.grid.slice(i, n);
    const InnerQuantResult inner = gptaq_quantize(w_block, u_in, r_eff, grid_block);
    out.w_int.set_block(i, inner.w_int);
    out.grid.set_slice(i, grid_block);
    if (i + n < d_out) {
      const Matrix dw = cfg.f2_residual
                            ? joint_compensate_residual(w_block, inner.q, u_out,
                                                        BlockIndex{i, n}, res)
                            : joint_compensate(w_block, inner.q, u_out, BlockIndex{i, n});
      work.add_block(i + n, 0, dw);
    }
    work.set_block(i, 0, inner.q);
    if (!work.all_finite())
      throw std::runtime_error("quantize_layer: non-finite values after block " +
                               std::to_string(i / cfg.block_n));
  }
  const auto t1 = std::chrono::steady_clock::now();

  out.q = dequantize(out.w_int, out.grid);
  out.diag.sequential_steps = steps;
  out.diag.block_loop_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();

  const LossSnapshot pre = measure_losses(w, out.q, hess, bundle, loss_ctx);
  out.diag.loss_layer_pre = pre.layer;
  out.diag.loss_attn_pre = pre.attn;
  out.diag.loss_attn_dev_pre = pre.attn_dev;

  if (cfg.f3_grid && cfg.cd_iters > 0) {
    RefineState st{w, out.w_int, out.grid, out.q, hess.h_in, hess.h_out, r_eff};
    refine_scales(st, cfg.cd_iters);
    out.grid = st.grid;
    out.q = dequantize(out.w_int, out.grid);
  }

  const LossSnapshot post = measure_losses(w, out.q, hess, bundle, loss_ctx);
  out.diag.loss_layer_post = post.layer;
  out.diag.loss_attn_post = post.attn;
  out.diag.loss_attn_dev_post = post.attn_dev;
  return out;
}

AttnQuantResult quantize_attention(const AttnBlock& blk,
                                   const std::vector<AttentionContext>& ctx,
                                   const CalibrationBundle& bundle,
                                   const PipelineConfig& cfg) {
  if (ctx.size() != blk.heads)
    throw std::invalid_argument("quantize_attention: context head count mismatch");
  AttnQuantResult out;
  out.qblock = blk;
  const Matrix dx = bundle.x - bundle.x_tilde;
  for (std::size_t h = 0; h < blk.heads; ++h) {
    {
      const KronHessian hess = build_hessian_query(bundle.x, ctx[h].k);
      const AttnLossContext lc{ctx[h].k, bundle.x, dx};
      QuantResult res = quantize_layer(blk.w_q[h], hess, bundle, cfg, &lc);
      out.qblock.w_q[h] = res.q;
      out.layers.push_back(std::move(res));
    }
    {
      const KronHessian hess = build_hessian_key(bundle.x, ctx[h].q);
      const AttnLossContext lc{ctx[h].q, bundle.x, dx};
      QuantResult res = quantize_layer(blk.w_k[h], hess, bundle, cfg, &lc);
      out.qblock.w_k[h] = res.q;
      out.layers.push_back(std::move(res));
    }
    {
      const Matrix w_out_h = blk.w_out_head(h);
      const KronHessian hess = build_hessian_value(bundle.x, ctx[h].a, w_out_h);
      const Matrix at = ctx[h].a.transposed();
      const AttnLossContext lc{w_out_h, bundle.x * at, dx * at};
      QuantResult res = quantize_layer(blk.w_v[h], hess, bundle, cfg, &lc);
      out.qblock.w_v[h] = res.q;
      out.layers.push_back(std::move(res));
    }
  }
  return out;
}

BlockQuantizer make_block_quantizer(const PipelineConfig& cfg) {
  return [cfg](const AttnBlock& blk, const std::vector<AttentionContext>& ctx,
               const CalibrationBundle& bundle) {
    AttnQuantResult res = quantize_attention(blk, ctx, bundle, cfg);
    BlockQuantOutcome outcome;
    outcome.qblock = std::move(res.qblock);
    outcome.reports.reserve(res.layers.size());
    for (const QuantResult& layer : res.layers) outcome.reports.push_back(layer.diag);
    return outcome;
  };
}

}  // namespace kronquant
