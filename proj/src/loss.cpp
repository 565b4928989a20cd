#include "abrnet/loss.hpp"

#include <algorithm>
#include <cmath>

namespace abrnet {

LabelBatch::LabelBatch(int samples, int units)
    : samples_(samples), units_(units), bits_(static_cast<size_t>(samples) * units, 0) {
  if (samples < 0 || units < 0) throw dim_error("label batch: negative dimension");
}

LabelBatch LabelBatch::from_rows(const std::vector<std::vector<int>>& rows) {
  const int s = static_cast<int>(rows.size());
  const int n = s > 0 ? static_cast<int>(rows[0].size()) : 0;
  LabelBatch batch(s, n);
  for (int i = 0; i < s; ++i) {
    if (static_cast<int>(rows[i].size()) != n)
      throw dim_error("label batch: ragged rows");
    for (int j = 0; j < n; ++j) batch.set(i, j, rows[i][j]);
  }
  return batch;
}

void LabelBatch::set(int sample, int unit, int value) {
  if (value != 0 && value != 1)
    throw error("label batch: entries must be 0 or 1, got " + std::to_string(value));
  bits_[static_cast<size_t>(sample) * units_ + unit] = static_cast<std::uint8_t>(value);
}

BalanceWeights balance_weights(const LabelBatch& labels) {
  const int n = labels.units();
  const int s = labels.samples();
  if (s == 0 || n == 0) throw error("balance_weights: empty label batch");
  BalanceWeights out;
  out.rates.resize(n);
  out.w.resize(n);
  for (int i = 0; i < n; ++i) {
    long long count = 0;
    for (int k = 0; k < s; ++k) count += labels.at(k, i);
    if (count == 0) {
      out.rates[i] = 1.0 / (2.0 * s);  // rate floor for never-occurring units
      out.floored.push_back(i);
    } else {
      out.rates[i] = static_cast<double>(count) / s;
    }
  }
  double denom = 0.0;
  for (int i = 0; i < n; ++i) denom += 1.0 / out.rates[i];
  for (int i = 0; i < n; ++i) out.w[i] = (1.0 / out.rates[i]) / denom;
  return out;
}

RelationStats relation_stats(const LabelBatch& labels) {
  const int n = labels.units();
  const long long s = labels.samples();
  if (s == 0 || n == 0) throw stats_error("relation_stats: empty label batch");

  RelationStats out;
  out.samples = s;
  out.marginals.assign(n, 0);
  out.cooccur.assign(static_cast<size_t>(n) * n, 0);
  for (int k = 0; k < labels.samples(); ++k) {
    for (int i = 0; i < n; ++i) {
      if (!labels.at(k, i)) continue;
      ++out.marginals[i];
      for (int j = 0; j < n; ++j)
        if (labels.at(k, j)) ++out.cooccur[static_cast<size_t>(i) * n + j];
    }
  }
  for (int i = 0; i < n; ++i)
    if (out.marginals[i] == 0)
      throw stats_error("relation_stats: unit " + std::to_string(i + 1) +
                        " never occurs in the training labels");

  out.r_mat = Matrix(n, n);
  out.a_mat = Matrix(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double p_j = static_cast<double>(out.marginals[j]) / s;
      const double p_j_given_i =
          static_cast<double>(out.cooccur[static_cast<size_t>(i) * n + j]) / out.marginals[i];
      const double r = p_j_given_i - p_j;
      out.r_mat(i, j) = r;
      out.a_mat(i, j) = r > 0.0 ? p_j_given_i : p_j_given_i / p_j - 1.0;
    }
  }
  return out;
}

double weighted_cross_entropy(const std::vector<double>& phat, const std::vector<int>& p,
                              const BalanceWeights& w) {
  const int n = static_cast<int>(phat.size());
  if (static_cast<int>(p.size()) != n || w.units() != n)
    throw dim_error("weighted_cross_entropy: size mismatch");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double q = std::clamp(phat[i], kProbClamp, 1.0 - kProbClamp);
    acc += w.w[i] * (p[i] * std::log(q) + (1.0 - p[i]) * std::log(1.0 - q));
  }
  return -acc;
}

double aur_pair_loss(double a, double phat_i, double phat_j, int p_i, int p_j,
                     const LossConfig& cfg) {
  if (a > cfg.p_pos && p_i == 1 && p_j == 1)
    return std::max(2.0 * a - (phat_i + phat_j), 0.0);
  if (a < cfg.p_neg && p_i == 1 && p_j == 0)
    return std::max((phat_j - phat_i) - a, 0.0);
  return 0.0;
}

double aur_loss(const std::vector<double>& phat, const std::vector<int>& p,
                const RelationStats& stats, const BalanceWeights& w, const LossConfig& cfg) {
  const int n = static_cast<int>(phat.size());
  if (stats.units() != n || w.units() != n || static_cast<int>(p.size()) != n)
    throw dim_error("aur_loss: size mismatch");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (cfg.exclude_diagonal && i == j) continue;
      acc += w.w[i] * aur_pair_loss(stats.a_mat(i, j), phat[i], phat[j], p[i], p[j], cfg);
    }
  }
  return acc;
}

double joint_loss(const std::vector<double>& phat, const std::vector<int>& p,
                  const RelationStats& stats, const BalanceWeights& w, const LossConfig& cfg) {
  return weighted_cross_entropy(phat, p, w) + cfg.lambda * aur_loss(phat, p, stats, w, cfg);
}

LossNodes joint_loss_tape(Tape& tape, Tape::Id phat, const std::vector<int>& p,
                          const RelationStats& stats, const BalanceWeights& w,
                          const LossConfig& cfg) {
  const int n = static_cast<int>(p.size());
  if (tape.value(phat).rows() != n || tape.value(phat).cols() != 1)
    throw dim_error("joint_loss_tape: phat must be " + std::to_string(n) + "x1, got " +
                    tape.value(phat).shape_str());

  Matrix pv(n, 1), qv(n, 1), wv(n, 1), ones(n, 1, 1.0);
  for (int i = 0; i < n; ++i) {
    pv(i, 0) = p[i];
    qv(i, 0) = 1.0 - p[i];
    wv(i, 0) = w.w[i];
  }
  const Tape::Id pc = tape.clamp(phat, kProbClamp, 1.0 - kProbClamp);
  const Tape::Id inner = tape.add(tape.mul(tape.leaf(pv), tape.log(pc)),
                                  tape.mul(tape.leaf(qv), tape.log(tape.sub(tape.leaf(ones), pc))));
  const Tape::Id cross = tape.scale(tape.sum_all(tape.mul(tape.leaf(wv), inner)), -1.0);

  // Branch activation depends only on labels and statistics, so it folds into
  // constant masks; the hinge arguments stay differentiable in phat.
  Matrix two_a(n, n), a_neg(n, n), mask_pos(n, n), mask_neg(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double a = stats.a_mat(i, j);
      two_a(i, j) = 2.0 * a;
      a_neg(i, j) = a;
      const bool diag_skip = cfg.exclude_diagonal && i == j;
      if (!diag_skip && a > cfg.p_pos && p[i] == 1 && p[j] == 1) mask_pos(i, j) = w.w[i];
      if (!diag_skip && a < cfg.p_neg && p[i] == 1 && p[j] == 0) mask_neg(i, j) = w.w[i];
    }
  }
  const Tape::Id pi = tape.tile_cols(phat, n);     // (i,j) -> phat_i
  const Tape::Id pj = tape.transpose(pi);          // (i,j) -> phat_j
  const Tape::Id arg_pos = tape.sub(tape.leaf(two_a), tape.add(pi, pj));
  const Tape::Id arg_neg = tape.sub(tape.sub(pj, pi), tape.leaf(a_neg));
  const Tape::Id aur = tape.add(tape.sum_all(tape.mul(tape.leaf(mask_pos), tape.relu(arg_pos))),
                                tape.sum_all(tape.mul(tape.leaf(mask_neg), tape.relu(arg_neg))));

  const Tape::Id joint = tape.add(cross, tape.scale(aur, cfg.lambda));
  return LossNodes{joint, cross, aur};
}

}  // namespace abrnet
