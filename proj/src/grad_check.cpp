#include "abrnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "abrnet/finite_diff.hpp"
#include "abrnet/rng.hpp"
#include "abrnet/tape.hpp"
#include "abrnet/train.hpp"

namespace abrnet {

namespace {

// Fixed 8-sample label table giving every unit support and making both
// relation-loss branches reachable: unit 1 is the complement of unit 0, so
// a(0,1) = -1, and the diagonal always sits in the positive branch.
LabelBatch crafted_labels(int n) {
  std::vector<std::vector<int>> rows(8, std::vector<int>(n, 0));
  for (int s = 0; s < 8; ++s) {
    rows[s][0] = s < 4 ? 1 : 0;
    if (n > 1) rows[s][1] = 1 - rows[s][0];
    for (int u = 2; u < n; ++u) rows[s][u] = (s + u) % 2 == 0 ? 1 : 0;
  }
  return LabelBatch::from_rows(rows);
}

std::vector<int> crafted_targets(int n) {
  std::vector<int> p(n);
  for (int u = 0; u < n; ++u) p[u] = u % 2 == 0 ? 1 : 0;
  return p;
}

double rel_err(double a, double f) {
  const double denom = std::max({std::abs(a), std::abs(f), 1e-3});
  return std::abs(a - f) / denom;
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& model, const LossConfig& loss,
                           std::uint64_t seed, double h, double tolerance, double corrupt) {
  model.validate(model.m > 0);
  const int n = model.n;

  Rng feature_rng(seed);
  const FeatureSet fs{gaussian_matrix(feature_rng, n, model.d_l)};
  ModelParams params = init_params(model, seed ^ 0x517cc1b727220a95ULL);

  const LabelBatch table = crafted_labels(n);
  const BalanceWeights weights = balance_weights(table);
  const RelationStats stats = relation_stats(table);
  const std::vector<int> targets = crafted_targets(n);

  std::vector<std::optional<DropoutPlan>> paths;
  paths.emplace_back(std::nullopt);  // full fusion
  if (model.m > 0 && model.fusion == FusionKind::attention) {
    Rng subset_rng(seed ^ 0x2545f4914f6cdd1dULL);
    DropoutPlan plan;
    plan.shared = sample_dropout_subset(subset_rng, model.m, model.t);
    paths.emplace_back(std::move(plan));
  }

  const auto tensors = named_tensors(params);
  GradCheckReport report;
  report.tolerance = tolerance;
  report.entries.resize(tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) report.entries[i].tensor = tensors[i].first;

  for (const auto& plan : paths) {
    const std::optional<std::vector<int>> subset =
        plan ? std::optional<std::vector<int>>(plan->shared) : std::nullopt;

    Tape tape;
    const TapeForward fwd = forward_tape(tape, fs, params, model, plan);
    const LossNodes ln = joint_loss_tape(tape, fwd.phat, targets, stats, weights, loss);
    tape.backward(ln.joint);

    for (size_t i = 0; i < tensors.size(); ++i) {
      Matrix analytic = tape.grad(fwd.param_ids[i]);
      if (corrupt != 0.0 && i == 0 && analytic.size() > 0) analytic[0] += corrupt;

      auto loss_at = [&](const Matrix& x) {
        ModelParams probe = params;
        *named_tensors(probe)[i].second = x;
        const std::vector<double> phat = forward(fs, probe, model, subset);
        return joint_loss(phat, targets, stats, weights, loss);
      };
      const Matrix numeric = finite_diff_grad(loss_at, *tensors[i].second, h);

      double worst = 0.0;
      for (int e = 0; e < analytic.size(); ++e)
        worst = std::max(worst, rel_err(analytic[e], numeric[e]));
      report.entries[i].max_rel_err = std::max(report.entries[i].max_rel_err, worst);
    }
  }

  for (const auto& entry : report.entries) {
    report.worst = std::max(report.worst, entry.max_rel_err);
    if (!(entry.max_rel_err < tolerance)) report.failing.push_back(entry.tensor);
  }
  report.passed = report.failing.empty();
  return report;
}

}  // namespace abrnet
