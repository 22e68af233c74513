#include "kronquant/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kronquant {

KktSolution kkt_solve(const KktSystem& sys) {
  const std::size_t d_out = sys.h_out.rows();
  const std::size_t d_in = sys.h_in.rows();
  const std::size_t n = sys.block.n;
  const std::size_t start = sys.block.start;
  if (sys.h_out.cols() != d_out || sys.h_in.cols() != d_in)
    throw std::invalid_argument("kkt_solve: curvature not square");
  if (n == 0 || start + n > d_out) throw std::invalid_argument("kkt_solve: bad block");
  if (sys.rhs_block.rows() != n || sys.rhs_block.cols() != d_in)
    throw std::invalid_argument("kkt_solve: rhs shape mismatch");
  if (!sys.linear_term.empty() &&
      (sys.linear_term.rows() != d_out || sys.linear_term.cols() != d_in))
    throw std::invalid_argument("kkt_solve: linear term shape mismatch");
  if (d_out * d_in > 512)
    throw std::invalid_argument("kkt_solve: system exceeds the size cap");

  const std::size_t nw = d_out * d_in;
  const std::size_t total = nw + n * d_in;
  const auto wi = [d_out](std::size_t r, std::size_t c) { return c * d_out + r; };
  const auto li = [nw, n](std::size_t i, std::size_t c) { return nw + c * n + i; };

  Matrix a(total, total);
  Matrix b(total, 1);
  // stationarity: 2 h_out dW h_in + E_B L + linear_term = 0
  for (std::size_t r = 0; r < d_out; ++r) {
    for (std::size_t c = 0; c < d_in; ++c) {
      const std::size_t row = wi(r, c);
      for (std::size_t r2 = 0; r2 < d_out; ++r2)
        for (std::size_t c2 = 0; c2 < d_in; ++c2)
          a(row, wi(r2, c2)) = 2.0 * sys.h_out(r, r2) * sys.h_in(c2, c);
      if (r >= start && r < start + n) a(row, li(r - start, c)) = 1.0;
      b(row, 0) = sys.linear_term.empty() ? 0.0 : -sys.linear_term(r, c);
    }
  }
  // primal feasibility: [dW]_{B,:} = rhs_block
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d_in; ++c) {
      const std::size_t row = li(i, c);
      a(row, wi(start + i, c)) = 1.0;
      b(row, 0) = sys.rhs_block(i, c);
    }
  }

  const Matrix x = solve_dense(std::move(a), std::move(b));
  KktSolution sol;
  sol.delta_w = Matrix(d_out, d_in);
  sol.lambda = Matrix(n, d_in);
  for (std::size_t r = 0; r < d_out; ++r)
    for (std::size_t c = 0; c < d_in; ++c) sol.delta_w(r, c) = x(wi(r, c), 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d_in; ++c) sol.lambda(i, c) = x(li(i, c), 0);
  return sol;
}

double kkt_objective(const KktSystem& sys, const Matrix& delta_w) {
  double obj = trace_product(sys.h_out * delta_w, sys.h_in * delta_w.transposed());
  if (!sys.linear_term.empty())
    for (std::size_t i = 0; i < delta_w.data().size(); ++i)
      obj += sys.linear_term.data()[i] * delta_w.data()[i];
  return obj;
}

Matrix kkt_linear_term(const Matrix& h_out, const BlockIndex& block, const Matrix& w_block,
                       const Matrix& r) {
  const Matrix wr = w_block * r;  // n x d_in
  Matrix lin(h_out.rows(), wr.cols());
  for (std::size_t i = 0; i < h_out.rows(); ++i)
    for (std::size_t k = 0; k < block.n; ++k) {
      const double h = h_out(i, block.start + k);
      if (h == 0.0) continue;
      for (std::size_t c = 0; c < wr.cols(); ++c) lin(i, c) += 2.0 * h * wr(k, c);
    }
  return lin;
}

double scan_min_1d(const std::function<double(double)>& f, double lo, double hi, int steps) {
  if (!(lo < hi) || steps < 3) throw std::invalid_argument("scan_min_1d: bad range");
  const double h = (hi - lo) / static_cast<double>(steps - 1);
  std::vector<double> vals(steps);
  int best = 0;
  for (int i = 0; i < steps; ++i) {
    const double x = lo + h * i;
    vals[i] = f(x);
    if (!std::isfinite(vals[i]))
      throw std::runtime_error("scan_min_1d: non-finite objective value");
    if (vals[i] < vals[best]) best = i;
  }
  double x_best = lo + h * best;
  if (best > 0 && best + 1 < steps) {
    const double fm = vals[best - 1], fc = vals[best], fp = vals[best + 1];
    const double denom = fm - 2.0 * fc + fp;
    if (denom > 0.0) {
      double x_fit = x_best + 0.5 * h * (fm - fp) / denom;
      x_fit = std::clamp(x_fit, x_best - h, x_best + h);
      const double f_fit = f(x_fit);
      if (!std::isfinite(f_fit)) throw std::runtime_error("scan_min_1d: non-finite refinement");
      if (f_fit <= fc) x_best = x_fit;
    }
  }
  return x_best;
}

std::vector<double> sym_eigenvalues(Matrix a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("sym_eigenvalues: not square");
  const std::size_t n = a.rows();
  const double scale = std::max(a.max_abs(), 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) < 1e-14 * scale) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a(p, q)) < 1e-300) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("naive_matmul: shapes differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.gaussian();
  return m;
}

Matrix random_spd(Rng& rng, std::size_t n, double ridge) {
  const Matrix b = random_matrix(rng, n, n);
  Matrix h = symmetrized(b * b.transposed());
  for (std::size_t i = 0; i < n; ++i) h(i, i) += ridge * static_cast<double>(n);
  return h;
}

}  // namespace kronquant
