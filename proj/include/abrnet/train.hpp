#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abrnet/dataset.hpp"
#include "abrnet/loss.hpp"
#include "abrnet/model.hpp"
#include "abrnet/rng.hpp"

namespace abrnet {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.9;       // Nesterov
  double weight_decay = 0.0005;
  int lr_halve_every = 2;      // epochs per halving, zero-based epoch index
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool dropout_enabled = true;
  bool per_unit_dropout = false;  // draw a separate layer subset per unit
  int threads = 0;                // 0: all cores; 1: fully serial
  ModelConfig model;
  LossConfig loss;

  void validate() const;
};

double lr_at(const TrainConfig& cfg, int epoch);

// Velocity buffers, one per named tensor in named_tensors order.
struct SgdState {
  std::vector<Matrix> velocity;
};

// g <- grad + wd * theta; v <- mu * v + g; theta <- theta - lr * (g + mu * v).
// With momentum 0 this reduces to theta - lr * g.
void sgd_step(ModelParams& params, const std::vector<Matrix>& grads, SgdState& state,
              const TrainConfig& cfg, int epoch);

// Uniformly random t-subset of {0..m-1}, sorted ascending.
std::vector<int> sample_dropout_subset(Rng& rng, int m, int t);

struct TraceRow {
  int epoch;
  int batch;
  double l_cross;
  double l_aur;   // unscaled; l_total = l_cross + lambda * l_aur
  double l_total;
  double lr;
};

struct TrainResult {
  ModelParams params;
  std::vector<TraceRow> trace;
  BalanceWeights weights;
  RelationStats stats;
  bool diverged = false;
  std::string divergence_note;
};

// Mini-batch SGD over the joint loss. Statistics are computed from `data`
// itself (the training split). Batch gradients may be evaluated in parallel;
// the reduction is in sample-index order, so results are bit-identical for
// any thread count.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

// CSV: epoch,batch,l_cross,l_aur,l_total,lr
void save_trace(const std::string& path, const std::vector<TraceRow>& trace);

// Resolved-config JSON (all defaults materialized); n/d_l of 0 in a parsed
// config mean "take them from the dataset".
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json_text(const std::string& text);

}  // namespace abrnet
