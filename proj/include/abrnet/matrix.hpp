#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "abrnet/errors.hpp"

namespace abrnet {

// Dense row-major double-precision matrix. Values are plain data: copyable,
// movable, immutable by convention once handed to an operation.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);
  static Matrix identity(int n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](int i) { return data_[i]; }
  double operator[](int i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Row-wise softmax with max subtraction. Each output row sums to 1.
Matrix softmax_rows(const Matrix& z);

// Entrywise z if z >= 0 else slope*z. slope must lie in (0,1).
Matrix leaky_relu(const Matrix& z, double slope);

// Entrywise logistic function, stable for large |z|.
Matrix sigmoid(const Matrix& z);

Matrix hadamard(const Matrix& a, const Matrix& b);

// out(i,j) = a(i,j) * col(i,0) for a column vector col.
Matrix row_scale(const Matrix& a, const Matrix& col);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);

double sum(const Matrix& a);
bool all_finite(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

inline Matrix operator+(const Matrix& a, const Matrix& b) { return add(a, b); }
inline Matrix operator-(const Matrix& a, const Matrix& b) { return sub(a, b); }
inline Matrix operator*(const Matrix& a, const Matrix& b) { return matmul(a, b); }
inline Matrix operator*(double c, const Matrix& a) { return scale(a, c); }

}  // namespace abrnet
