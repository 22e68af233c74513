#include "kronquant/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kronquant {

QuantGrid QuantGrid::uniform(std::size_t n, int bits, RangeMode mode) {
  QuantGrid g;
  g.bits = bits;
  g.mode = mode;
  g.scales.assign(n, 1.0);
  const std::int64_t zp = (mode == RangeMode::unsigned_affine) ? (1ll << (bits - 1)) : 0;
  g.zero_points.assign(n, zp);
  return g;
}

std::int64_t QuantGrid::code_min() const {
  return mode == RangeMode::signed_symmetric ? -(1ll << (bits - 1)) : 0;
}

std::int64_t QuantGrid::code_max() const {
  return mode == RangeMode::signed_symmetric ? (1ll << (bits - 1)) - 1 : (1ll << bits) - 1;
}

QuantGrid QuantGrid::slice(std::size_t start, std::size_t n) const {
  if (start + n > scales.size()) throw std::invalid_argument("QuantGrid::slice: out of bounds");
  QuantGrid s;
  s.bits = bits;
  s.mode = mode;
  s.scales.assign(scales.begin() + start, scales.begin() + start + n);
  s.zero_points.assign(zero_points.begin() + start, zero_points.begin() + start + n);
  return s;
}

void QuantGrid::set_slice(std::size_t start, const QuantGrid& s) {
  if (start + s.size() > scales.size())
    throw std::invalid_argument("QuantGrid::set_slice: out of bounds");
  std::copy(s.scales.begin(), s.scales.end(), scales.begin() + start);
  std::copy(s.zero_points.begin(), s.zero_points.end(), zero_points.begin() + start);
}

double round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

namespace {

std::int64_t round_code(double w, double scale, std::int64_t zp, std::int64_t lo,
                        std::int64_t hi) {
  const std::int64_t code = static_cast<std::int64_t>(round_half_even(w / scale)) + zp;
  return std::clamp(code, lo, hi);
}

}  // namespace

RoundResult round_to_grid(const Matrix& w_rows, const QuantGrid& grid) {
  if (w_rows.rows() != grid.size())
    throw std::invalid_argument("round_to_grid: row count does not match grid");
  const std::int64_t lo = grid.code_min();
  const std::int64_t hi = grid.code_max();
  RoundResult out;
  out.codes = IMatrix(w_rows.rows(), w_rows.cols());
  out.dequant = Matrix(w_rows.rows(), w_rows.cols());
  for (std::size_t r = 0; r < w_rows.rows(); ++r) {
    const double s = grid.scales[r];
    const std::int64_t z = grid.zero_points[r];
    if (!(s > 0.0)) throw std::invalid_argument("round_to_grid: nonpositive scale");
    for (std::size_t c = 0; c < w_rows.cols(); ++c) {
      const std::int64_t code = round_code(w_rows(r, c), s, z, lo, hi);
      out.codes(r, c) = code;
      out.dequant(r, c) = s * static_cast<double>(code - z);
    }
  }
  return out;
}

Matrix dequantize(const IMatrix& codes, const QuantGrid& grid) {
  if (codes.rows != grid.size()) throw std::invalid_argument("dequantize: row count mismatch");
  Matrix q(codes.rows, codes.cols);
  for (std::size_t r = 0; r < codes.rows; ++r)
    for (std::size_t c = 0; c < codes.cols; ++c)
      q(r, c) = grid.scales[r] * static_cast<double>(codes(r, c) - grid.zero_points[r]);
  return q;
}

QuantGrid init_scales_for_block(const Matrix& w_block, const Matrix& h_in, int bits,
                                const std::vector<double>& candidates, RangeMode mode) {
  if (w_block.cols() != h_in.rows() || h_in.rows() != h_in.cols())
    throw std::invalid_argument("init_scales_for_block: curvature shape mismatch");
  if (candidates.empty())
    throw std::invalid_argument("init_scales_for_block: no candidate ratios");
  for (double g : candidates)
    if (!(g > 0.0 && g <= 1.0))
      throw std::invalid_argument("init_scales_for_block: ratio outside (0, 1]");

  std::vector<double> ratios = candidates;
  std::sort(ratios.begin(), ratios.end(), std::greater<double>());

  QuantGrid grid = QuantGrid::uniform(w_block.rows(), bits, mode);
  const std::int64_t lo = grid.code_min();
  const std::int64_t hi = grid.code_max();
  const double q_pos = static_cast<double>((1ll << (bits - 1)) - 1);
  const std::size_t d = w_block.cols();

  std::vector<double> dw(d);
  for (std::size_t r = 0; r < w_block.rows(); ++r) {
    double amax = 0.0;
    for (std::size_t c = 0; c < d; ++c) amax = std::max(amax, std::fabs(w_block(r, c)));
    if (amax == 0.0) continue;  // degenerate row: scale stays 1, codes will be zero

    const std::int64_t z = grid.zero_points[r];
    double best_loss = 0.0;
    double best_scale = 0.0;
    bool have_best = false;
    for (double g : ratios) {
      const double s = g * amax / q_pos;
      for (std::size_t c = 0; c < d; ++c) {
        const std::int64_t code = round_code(w_block(r, c), s, z, lo, hi);
        dw[c] = s * static_cast<double>(code - z) - w_block(r, c);
      }
      double loss = 0.0;
      for (std::size_t c1 = 0; c1 < d; ++c1) {
        if (dw[c1] == 0.0) continue;
        double acc = 0.0;
        for (std::size_t c2 = 0; c2 < d; ++c2) acc += h_in(c1, c2) * dw[c2];
        loss += dw[c1] * acc;
      }
      if (!have_best || loss < best_loss) {
        have_best = true;
        best_loss = loss;
        best_scale = s;
      }
    }
    grid.scales[r] = best_scale;
  }
  return grid;
}

}  // namespace kronquant
