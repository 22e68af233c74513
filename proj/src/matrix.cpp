#include "kronquant/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace kronquant {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  if (r0 + nr > rows_ || c0 + nc > cols_)
    throw std::invalid_argument("Matrix::block: range out of bounds");
  Matrix b(nr, nc);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t c = 0; c < nc; ++c) b(r, c) = (*this)(r0 + r, c0 + c);
  return b;
}

void Matrix::set_block(std::size_t r0, std::size_t c0, const Matrix& b) {
  if (r0 + b.rows() > rows_ || c0 + b.cols() > cols_)
    throw std::invalid_argument("Matrix::set_block: range out of bounds");
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) (*this)(r0 + r, c0 + c) = b(r, c);
}

void Matrix::add_block(std::size_t r0, std::size_t c0, const Matrix& b) {
  if (r0 + b.rows() > rows_ || c0 + b.cols() > cols_)
    throw std::invalid_argument("Matrix::add_block: range out of bounds");
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) (*this)(r0 + r, c0 + c) += b(r, c);
}

double Matrix::frob_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) throw std::invalid_argument("add: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) throw std::invalid_argument("sub: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) return false;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

Matrix symmetrized(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("symmetrized: matrix not square");
  Matrix s(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) s(r, c) = 0.5 * (a(r, c) + a(c, r));
  return s;
}

double rel_frob_diff(const Matrix& a, const Matrix& ref) {
  if (!same_shape(a, ref)) throw std::invalid_argument("rel_frob_diff: shapes differ");
  return (a - ref).frob_norm() / std::max(ref.frob_norm(), 1e-12);
}

double trace_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols())
    throw std::invalid_argument("trace_product: shapes differ");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) t += a(i, k) * b(k, i);
  return t;
}

Matrix cholesky_lower(const Matrix& spd) {
  if (spd.rows() != spd.cols()) throw std::invalid_argument("cholesky_lower: matrix not square");
  const std::size_t n = spd.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (sum <= 0.0) {
          char msg[96];
          std::snprintf(msg, sizeof(msg), "cholesky_lower: pivot %zu not positive (%.3e)", i, sum);
          throw std::runtime_error(msg);
        }
        l(i, i) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  return l;
}

Matrix solve_lower(const Matrix& l, const Matrix& b) {
  if (l.rows() != l.cols() || l.rows() != b.rows())
    throw std::invalid_argument("solve_lower: shapes differ");
  const std::size_t n = l.rows();
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = x(i, c);
      for (std::size_t k = 0; k < i; ++k) sum -= l(i, k) * x(k, c);
      if (l(i, i) == 0.0) throw std::runtime_error("solve_lower: zero diagonal");
      x(i, c) = sum / l(i, i);
    }
  }
  return x;
}

Matrix solve_upper(const Matrix& u, const Matrix& b) {
  if (u.rows() != u.cols() || u.rows() != b.rows())
    throw std::invalid_argument("solve_upper: shapes differ");
  const std::size_t n = u.rows();
  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double sum = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) sum -= u(ii, k) * x(k, c);
      if (u(ii, ii) == 0.0) throw std::runtime_error("solve_upper: zero diagonal");
      x(ii, c) = sum / u(ii, ii);
    }
  }
  return x;
}

Matrix solve_spd_chol(const Matrix& l, const Matrix& b) {
  return solve_upper(l.transposed(), solve_lower(l, b));
}

Matrix solve_spd_chol_right(const Matrix& l, const Matrix& b) {
  return solve_spd_chol(l, b.transposed()).transposed();
}

Matrix solve_dense(Matrix a, Matrix b) {
  if (a.rows() != a.cols() || a.rows() != b.rows())
    throw std::invalid_argument("solve_dense: shapes differ");
  const std::size_t n = a.rows();
  const double tol = 1e-14 * std::max(a.max_abs(), 1e-300);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::fabs(a(i, k)) > std::fabs(a(piv, k))) piv = i;
    if (std::fabs(a(piv, k)) < tol)
      throw std::runtime_error("solve_dense: singular system at pivot " + std::to_string(k));
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(k, c), a(piv, c));
      for (std::size_t c = 0; c < b.cols(); ++c) std::swap(b(k, c), b(piv, c));
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) a(i, c) -= f * a(k, c);
      for (std::size_t c = 0; c < b.cols(); ++c) b(i, c) -= f * b(k, c);
    }
  }
  Matrix x(n, b.cols());
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double sum = b(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) sum -= a(ii, k) * x(k, c);
      x(ii, c) = sum / a(ii, ii);
    }
  }
  return x;
}

void IMatrix::set_block(std::size_t r0, const IMatrix& b) {
  if (r0 + b.rows > rows || b.cols != cols)
    throw std::invalid_argument("IMatrix::set_block: range out of bounds");
  for (std::size_t r = 0; r < b.rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) (*this)(r0 + r, c) = b(r, c);
}

bool operator==(const IMatrix& a, const IMatrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

}  // namespace kronquant
