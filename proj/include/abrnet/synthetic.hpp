#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "abrnet/dataset.hpp"
#include "abrnet/matrix.hpp"

namespace abrnet {

// One sub-population with its own label-correlation structure.
struct ClusterSpec {
  double weight = 1.0;            // relative sampling probability
  std::vector<double> rates;      // per-unit occurrence rate, in (0,1)
  Matrix correlation;             // n x n, symmetric, unit diagonal
};

struct SyntheticSpec {
  int n = 0;
  int d_l = 0;
  int samples = 0;
  std::uint64_t seed = 0;
  double noise = 0.5;            // feature noise stddev
  double neighbor_scale = 0.4;   // strength of cross-unit label leakage
  std::vector<ClusterSpec> clusters;

  void validate() const;  // throws spec_error naming the offending field
};

SyntheticSpec parse_synthetic_spec(const std::string& json_text);
SyntheticSpec load_synthetic_spec(const std::string& path);

// Labels come from a thresholded latent Gaussian with the sample's cluster
// correlation; features embed the own label along a per-unit anchor direction
// plus neighbor labels along per-pair directions, plus Gaussian noise.
// Anchors depend only on (seed, n, d_l), so datasets generated from the same
// spec with more samples extend rather than reshuffle.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Cyclic Jacobi eigendecomposition of a symmetric matrix: returns
// (V, lambda) with columns of V the eigenvectors, descending eigenvalues.
std::pair<Matrix, std::vector<double>> symmetric_eigen(const Matrix& a);

}  // namespace abrnet
