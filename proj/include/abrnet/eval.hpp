#pragma once

#include <vector>

#include "abrnet/dataset.hpp"
#include "abrnet/model.hpp"

namespace abrnet {

struct EvalReport {
  std::vector<double> f1;  // per unit; 0 when 2TP+FP+FN = 0
  double avg_f1 = 0.0;
  std::vector<long long> tp, fp, fn, tn;
  int samples = 0;
  int units() const { return static_cast<int>(f1.size()); }
};

// Full fusion (no dropout); predicted 1 iff phat >= threshold.
EvalReport evaluate(const Dataset& data, const ModelParams& params, const ModelConfig& cfg,
                    double threshold = 0.5);

}  // namespace abrnet
