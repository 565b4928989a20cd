#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "abrnet/matrix.hpp"

namespace abrnet {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline Matrix uniform_matrix(Rng& rng, int rows, int cols, double lo, double hi) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int i = 0; i < m.size(); ++i) m[i] = dist(rng);
  return m;
}

inline Matrix gaussian_matrix(Rng& rng, int rows, int cols, double stddev = 1.0) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (int i = 0; i < m.size(); ++i) m[i] = dist(rng);
  return m;
}

// Inverse of the standard normal CDF (Acklam's rational approximation,
// relative error below 1.15e-9 on (0,1)).
double inverse_normal_cdf(double p);

}  // namespace abrnet
