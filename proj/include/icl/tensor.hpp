#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "icl/errors.hpp"

namespace icl {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. Sequences are stored one token per column.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vec col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> v);

  void fill(double value);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Boolean mask over a score matrix; true means the entry takes part in the softmax.
class Mask {
 public:
  Mask(std::size_t rows, std::size_t cols, bool allowed = true);

  // keys j (rows) visible to query i (columns) iff j <= i
  static Mask causal(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool allowed(std::size_t r, std::size_t c) const { return flags_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool allowed) { flags_[r * cols_ + c] = allowed ? 1 : 0; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<unsigned char> flags_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a b^T without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Vec matvec(const Matrix& a, std::span<const double> x);
Vec matvec_t(const Matrix& a, std::span<const double> x);
Matrix transpose(const Matrix& a);
Matrix outer(std::span<const double> u, std::span<const double> v);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix& operator+=(Matrix& a, const Matrix& b);

Vec add(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double max_abs(std::span<const double> a);
double frobenius_inner(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

bool all_finite(std::span<const double> a);
void require_finite(std::span<const double> a, const char* what);

double gelu(double x);
double gelu_derivative(double x);

struct LayerNormStats {
  double mean = 0.0;
  double inv_std = 0.0;  // 1 / sqrt(var + eps)
};

// gamma * (x - mean) / sqrt(var + eps) + beta with the population variance.
Vec layer_norm(std::span<const double> x, std::span<const double> gamma,
               std::span<const double> beta, double eps);
LayerNormStats layer_norm_stats(std::span<const double> x, double eps);

// Per-column masked softmax. Masked entries are exactly zero.
Matrix softmax_columns(const Matrix& scores, const Mask& mask);

// Two largest singular values, sigma1 >= sigma2 >= 0. A single-row or
// single-column matrix reports sigma2 = 0.
std::pair<double, double> top_two_singular_values(const Matrix& m);

}  // namespace icl
