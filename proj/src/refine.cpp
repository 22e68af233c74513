#include "kronquant/refine.hpp"

#include <stdexcept>

namespace kronquant {

namespace {

// Row j of the effective integer weights V = codes - zero_point, as doubles.
std::vector<double> v_row(const RefineState& st, std::size_t j) {
  std::vector<double> v(st.w_int.cols);
  const std::int64_t z = st.grid.zero_points[j];
  for (std::size_t c = 0; c < st.w_int.cols; ++c)
    v[c] = static_cast<double>(st.w_int(j, c) - z);
  return v;
}

Matrix v_matrix(const RefineState& st) {
  Matrix v(st.w_int.rows, st.w_int.cols);
  for (std::size_t r = 0; r < st.w_int.rows; ++r) {
    const std::int64_t z = st.grid.zero_points[r];
    for (std::size_t c = 0; c < st.w_int.cols; ++c)
      v(r, c) = static_cast<double>(st.w_int(r, c) - z);
  }
  return v;
}

}  // namespace

double cd_scale_step(RefineState& st, std::size_t j) {
  const std::size_t d_out = st.w.rows();
  const std::size_t d_in = st.w.cols();
  if (j >= d_out) throw std::invalid_argument("cd_scale_step: channel out of range");

  const std::vector<double> vj = v_row(st, j);

  std::vector<double> a(d_in, 0.0);  // h_in * v_j
  for (std::size_t c1 = 0; c1 < d_in; ++c1) {
    double acc = 0.0;
    for (std::size_t c2 = 0; c2 < d_in; ++c2) acc += st.h_in(c1, c2) * vj[c2];
    a[c1] = acc;
  }
  double vhv = 0.0;
  for (std::size_t c = 0; c < d_in; ++c) vhv += vj[c] * a[c];
  const double denom = vhv * st.h_out(j, j);
  if (!(denom > 0.0)) return st.grid.scales[j];  // all-zero integer row: skip

  // numerator term 1: ((W - Q) h_in v_j) . h_out_{:,j}
  double num = 0.0;
  for (std::size_t r = 0; r < d_out; ++r) {
    double p = 0.0;
    for (std::size_t c = 0; c < d_in; ++c) p += (st.w(r, c) - st.q(r, c)) * a[c];
    num += p * st.h_out(r, j);
  }
  // numerator term 2: (W r v_j) . h_out_{:,j}
  if (st.r.max_abs() != 0.0) {
    std::vector<double> rv(d_in, 0.0);
    for (std::size_t c1 = 0; c1 < d_in; ++c1) {
      double acc = 0.0;
      for (std::size_t c2 = 0; c2 < d_in; ++c2) acc += st.r(c1, c2) * vj[c2];
      rv[c1] = acc;
    }
    for (std::size_t r = 0; r < d_out; ++r) {
      double p = 0.0;
      for (std::size_t c = 0; c < d_in; ++c) p += st.w(r, c) * rv[c];
      num -= p * st.h_out(r, j);
    }
  }

  const double s_new = st.grid.scales[j] + num / denom;
  st.grid.scales[j] = s_new;
  for (std::size_t c = 0; c < d_in; ++c) st.q(j, c) = s_new * vj[c];
  return s_new;
}

void refine_scales(RefineState& st, int n_iter) {
  if (n_iter < 0) throw std::invalid_argument("refine_scales: negative iteration count");
  for (int pass = 0; pass < n_iter; ++pass)
    for (std::size_t j = 0; j < st.w.rows(); ++j) cd_scale_step(st, j);
}

double refine_objective(const RefineState& st) { return refine_objective_at(st, st.grid.scales); }

double refine_objective_at(const RefineState& st, const std::vector<double>& scales) {
  if (scales.size() != st.w.rows())
    throw std::invalid_argument("refine_objective_at: scale count mismatch");
  const Matrix v = v_matrix(st);
  const Matrix vhv = v * st.h_in * v.transposed();  // d_out x d_out

  // linear coefficients: diag(V (h_in - r)^T W^T h_out)
  const Matrix m = (st.h_in - st.r).transposed() * st.w.transposed() * st.h_out;  // d_in x d_out
  double obj = 0.0;
  const std::size_t d_out = st.w.rows();
  for (std::size_t j = 0; j < d_out; ++j) {
    for (std::size_t k = 0; k < d_out; ++k)
      obj += vhv(j, k) * st.h_out(k, j) * scales[j] * scales[k];
    double lin = 0.0;
    for (std::size_t c = 0; c < st.w.cols(); ++c) lin += v(j, c) * m(c, j);
    obj -= 2.0 * lin * scales[j];
  }
  return obj;
}

}  // namespace kronquant
