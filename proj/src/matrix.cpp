#include "abrnet/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace abrnet {

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw dim_error("matrix: negative dimension");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) throw dim_error("matrix: ragged initializer rows");
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw dim_error("matmul: incompatible shapes " + a.shape_str() + " * " + b.shape_str());
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (int i = 0; i < z.rows(); ++i) {
    double mx = z(i, 0);
    for (int j = 1; j < z.cols(); ++j) mx = std::max(mx, z(i, j));
    double total = 0.0;
    for (int j = 0; j < z.cols(); ++j) {
      const double e = std::exp(z(i, j) - mx);
      out(i, j) = e;
      total += e;
    }
    for (int j = 0; j < z.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

Matrix leaky_relu(const Matrix& z, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw config_error("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  Matrix out(z.rows(), z.cols());
  for (int i = 0; i < z.size(); ++i) out[i] = z[i] >= 0.0 ? z[i] : slope * z[i];
  return out;
}

Matrix sigmoid(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (int i = 0; i < z.size(); ++i) {
    const double x = z[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw dim_error("hadamard: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Matrix row_scale(const Matrix& a, const Matrix& col) {
  if (col.cols() != 1 || col.rows() != a.rows())
    throw dim_error("row_scale: expected " + std::to_string(a.rows()) + "x1 column, got " +
                    col.shape_str());
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) * col(i, 0);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw dim_error("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw dim_error("sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Matrix scale(const Matrix& a, double c) {
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out[i] = c * a[i];
  return out;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

bool all_finite(const Matrix& a) {
  for (int i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw dim_error("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace abrnet
