#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abrnet/loss.hpp"
#include "abrnet/model.hpp"

namespace abrnet {

struct GradCheckEntry {
  std::string tensor;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  double tolerance = 1e-4;
  bool passed = false;
  std::vector<std::string> failing;
};

// Compares tape gradients of the joint loss against central finite
// differences on a random mini-problem, tensor by tensor. Relative error per
// entry is |a - f| / max(|a|, |f|, 1e-3); the floor absorbs finite-difference
// truncation noise on near-zero entries. When m > 0 the check runs through
// the dropout path with a fixed subset drawn from the seed.
// `corrupt` != 0 perturbs one analytic gradient entry (negative-control hook).
GradCheckReport grad_check(const ModelConfig& model, const LossConfig& loss,
                           std::uint64_t seed, double h = 1e-5, double tolerance = 1e-4,
                           double corrupt = 0.0);

}  // namespace abrnet
