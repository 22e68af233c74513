#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace kronquant {

// Dense row-major matrix of doubles. Every tensor in this project (weights,
// calibration inputs, Hessians, triangular factors) is carried by this type;
// sizes stay desk-scale, so all kernels are plain O(n^3) loops.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Matrix transposed() const;
  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  void set_block(std::size_t r0, std::size_t c0, const Matrix& b);
  void add_block(std::size_t r0, std::size_t c0, const Matrix& b);

  double frob_norm() const;
  double max_abs() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

bool same_shape(const Matrix& a, const Matrix& b);
bool bit_equal(const Matrix& a, const Matrix& b);

// (A + A^T) / 2
Matrix symmetrized(const Matrix& a);

// ||a - ref||_F / max(||ref||_F, floor)
double rel_frob_diff(const Matrix& a, const Matrix& ref);

// tr(a * b), shapes (m x n) * (n x m)
double trace_product(const Matrix& a, const Matrix& b);

// Lower Cholesky factor L with spd = L L^T. Throws naming the failing pivot.
Matrix cholesky_lower(const Matrix& spd);

// Forward / back substitution against a full matrix right-hand side.
Matrix solve_lower(const Matrix& l, const Matrix& b);
Matrix solve_upper(const Matrix& u, const Matrix& b);

// (L L^T)^{-1} b given the lower factor L.
Matrix solve_spd_chol(const Matrix& l, const Matrix& b);

// Right-sided SPD solve: b * (L L^T)^{-1}.
Matrix solve_spd_chol_right(const Matrix& l, const Matrix& b);

// Dense LU solve with partial pivoting (oracle-grade, not performance code).
Matrix solve_dense(Matrix a, Matrix b);

// Integer code matrix for quantized weights.
struct IMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> data;

  IMatrix() = default;
  IMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  std::int64_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  std::int64_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void set_block(std::size_t r0, const IMatrix& b);
};

bool operator==(const IMatrix& a, const IMatrix& b);

}  // namespace kronquant
