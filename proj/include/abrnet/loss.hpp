#pragma once

#include <cstdint>
#include <vector>

#include "abrnet/matrix.hpp"
#include "abrnet/tape.hpp"

namespace abrnet {

// Binary label table, samples x units. Entries are exactly 0 or 1.
class LabelBatch {
 public:
  LabelBatch(int samples, int units);
  static LabelBatch from_rows(const std::vector<std::vector<int>>& rows);

  int samples() const { return samples_; }
  int units() const { return units_; }
  int at(int sample, int unit) const { return bits_[static_cast<size_t>(sample) * units_ + unit]; }
  void set(int sample, int unit, int value);

 private:
  int samples_;
  int units_;
  std::vector<std::uint8_t> bits_;
};

// Per-unit occurrence rates and inverse-rate weights, sum(w) = 1.
// `floored` lists units whose empirical rate was zero and got replaced by
// the floor 1/(2*samples).
struct BalanceWeights {
  std::vector<double> rates;
  std::vector<double> w;
  std::vector<int> floored;
  int units() const { return static_cast<int>(w.size()); }
};

BalanceWeights balance_weights(const LabelBatch& train_labels);

// Empirical pairwise relation statistics over a training label table.
// r(i,j) = P(y_j=1 | y_i=1) - P(y_j=1)
// a(i,j) = P(y_j=1 | y_i=1)                     if r(i,j) > 0
//          P(y_j=1 | y_i=1) / P(y_j=1) - 1      otherwise
struct RelationStats {
  Matrix r_mat;
  Matrix a_mat;
  std::vector<long long> cooccur;    // units x units, row-major
  std::vector<long long> marginals;  // per unit
  long long samples = 0;
  int units() const { return r_mat.rows(); }
};

// Throws stats_error naming the unit if some unit never occurs.
RelationStats relation_stats(const LabelBatch& train_labels);

struct LossConfig {
  double lambda = 0.1;
  double p_pos = 0.5;
  double p_neg = -0.7;
  bool exclude_diagonal = false;
};

// Predicted probabilities are clamped to [kProbClamp, 1-kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

double weighted_cross_entropy(const std::vector<double>& phat, const std::vector<int>& p,
                              const BalanceWeights& w);

// Pairwise relation penalty:
//   max(2*a - phat_i - phat_j, 0)   if a > p_pos and p_i = p_j = 1
//   max(-a - phat_i + phat_j, 0)    if a < p_neg and p_i = 1, p_j = 0
//   0                               otherwise
double aur_pair_loss(double a, double phat_i, double phat_j, int p_i, int p_j,
                     const LossConfig& cfg);

// Double sum over ordered pairs (diagonal included unless cfg.exclude_diagonal),
// each term weighted by w_i.
double aur_loss(const std::vector<double>& phat, const std::vector<int>& p,
                const RelationStats& stats, const BalanceWeights& w, const LossConfig& cfg);

double joint_loss(const std::vector<double>& phat, const std::vector<int>& p,
                  const RelationStats& stats, const BalanceWeights& w, const LossConfig& cfg);

// Tape version of the joint loss for a single sample. `phat` is an n x 1 node.
struct LossNodes {
  Tape::Id joint;
  Tape::Id cross;
  Tape::Id aur;  // unscaled by lambda
};
LossNodes joint_loss_tape(Tape& tape, Tape::Id phat, const std::vector<int>& p,
                          const RelationStats& stats, const BalanceWeights& w,
                          const LossConfig& cfg);

}  // namespace abrnet
