#pragma once

#include <stdexcept>
#include <string>

namespace abrnet {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands. Message names both shapes.
struct dim_error : error {
  using error::error;
};

// Invalid configuration value (k out of range, t > m, bad slope, ...).
struct config_error : error {
  using error::error;
};

// Statistics cannot be computed (zero-support conditional).
struct stats_error : error {
  using error::error;
};

// The finite-difference oracle hit a non-finite function evaluation.
struct oracle_error : error {
  using error::error;
};

// Invalid synthetic data spec (non-PSD correlation, bad field).
struct spec_error : error {
  using error::error;
};

// File / parse problems.
struct io_error : error {
  using error::error;
};

}  // namespace abrnet
