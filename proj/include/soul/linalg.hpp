#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace soul::linalg {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const { return rows == 0 || cols == 0; }

  static Matrix identity(std::size_t n);
};

struct SvdResult {
  Matrix left_vectors;                  // columns u_j, orthonormal
  std::vector<double> singular_values;  // non-increasing, >= 0
  Matrix right_vectors;                 // columns v_j
};

bool all_finite(const Matrix& m);

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& m, std::span<const double> v);
double frobenius_norm(const Matrix& m);

// Economy SVD via one-sided Jacobi rotations. Deterministic sweep order;
// sign fixed so the largest-magnitude entry of each left vector is positive.
SvdResult svd(const Matrix& m);

// 1 - a.b / (|a||b|), in [0, 2]. Throws ZeroVector on a zero-norm input.
double cosine_distance(std::span<const double> a, std::span<const double> b);

// v - B B^T v for a basis B with orthonormal columns.
std::vector<double> orthonormal_project(const Matrix& basis,
                                        std::span<const double> v);

// Appends to `basis` the columns of `cols` (same row count), keeps orthonormality.
void append_columns(Matrix& basis, const Matrix& cols);

}  // namespace soul::linalg
