#include "icl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

namespace icl {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::span<const double> v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data_.begin());
  return m;
}

Vec Matrix::col(std::size_t c) const {
  Vec v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Matrix::set_col(std::size_t c, std::span<const double> v) {
  if (v.size() != rows_) throw DimensionError("set_col: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Mask::Mask(std::size_t rows, std::size_t cols, bool allowed)
    : rows_(rows), cols_(cols), flags_(rows * cols, allowed ? 1 : 0) {}

Mask Mask::causal(std::size_t n) {
  Mask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.set(j, i, true);
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape(a) + " x " + shape(b));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + shape(a) + "^T x " + shape(b));
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + shape(a) + " x " + shape(b) + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Vec matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size())
    throw DimensionError("matvec: " + shape(a) + " x " + std::to_string(x.size()));
  Vec out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

Vec matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size())
    throw DimensionError("matvec_t: " + shape(a) + "^T x " + std::to_string(x.size()));
  Vec out(a.cols(), 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += arow[j] * x[k];
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix outer(std::span<const double> u, std::span<const double> v) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out += b;
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator-");
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] -= bd[k];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "operator+=");
  auto o = a.data();
  auto bd = b.data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] += bd[k];
  return a;
}

Vec add(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "add");
  Vec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
  return out;
}

Vec sub(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "sub");
  Vec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a, b, "dot");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "frobenius_inner");
  return dot(a.data(), b.data());
}

double frobenius_norm(const Matrix& a) { return std::sqrt(squared_norm(a.data())); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(std::span<const double> a, const char* what) {
  if (!all_finite(a)) throw NonFiniteError(std::string(what) + ": non-finite value");
}

double gelu(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

LayerNormStats layer_norm_stats(std::span<const double> x, double eps) {
  if (x.empty()) throw DimensionError("layer_norm: empty input");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  if (var + eps <= 0.0) throw NonFiniteError("layer_norm: zero variance with eps = 0");
  return {mean, 1.0 / std::sqrt(var + eps)};
}

Vec layer_norm(std::span<const double> x, std::span<const double> gamma,
               std::span<const double> beta, double eps) {
  require_same_length(x, gamma, "layer_norm gamma");
  require_same_length(x, beta, "layer_norm beta");
  if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be non-negative");
  const auto stats = layer_norm_stats(x, eps);
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k)
    out[k] = gamma[k] * (x[k] - stats.mean) * stats.inv_std + beta[k];
  require_finite(out, "layer_norm");
  return out;
}

Matrix softmax_columns(const Matrix& scores, const Mask& mask) {
  if (mask.rows() != scores.rows() || mask.cols() != scores.cols())
    throw DimensionError("softmax_columns: mask shape mismatch");
  Matrix out(scores.rows(), scores.cols());
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      if (!mask.allowed(r, c)) continue;
      any = true;
      mx = std::max(mx, scores(r, c));
    }
    if (!any)
      throw std::invalid_argument("softmax_columns: column " + std::to_string(c) +
                                  " is fully masked");
    double total = 0.0;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      if (!mask.allowed(r, c)) continue;
      out(r, c) = std::exp(scores(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t r = 0; r < scores.rows(); ++r) out(r, c) /= total;
  }
  require_finite(out.data(), "softmax_columns");
  return out;
}

std::pair<double, double> top_two_singular_values(const Matrix& m) {
  if (m.empty()) throw DimensionError("top_two_singular_values: empty matrix");
  require_finite(m.data(), "top_two_singular_values");
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  // One-sided Jacobi keeps small singular values accurate relative to the
  // largest one, which the rank checks rely on.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(e);
  const auto& s = svd.singularValues();
  return {s(0), s.size() > 1 ? s(1) : 0.0};
}

}  // namespace icl
