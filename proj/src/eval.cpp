#include "abrnet/eval.hpp"

#include "abrnet/errors.hpp"

namespace abrnet {

EvalReport evaluate(const Dataset& data, const ModelParams& params, const ModelConfig& cfg,
                    double threshold) {
  if (data.samples() == 0) throw config_error("evaluate: dataset is empty");
  if (data.n != cfg.n || data.d_l != cfg.d_l)
    throw dim_error("evaluate: dataset is " + std::to_string(data.n) + " units x " +
                    std::to_string(data.d_l) + " dims but model expects " +
                    std::to_string(cfg.n) + " x " + std::to_string(cfg.d_l));

  EvalReport rep;
  rep.samples = data.samples();
  rep.tp.assign(cfg.n, 0);
  rep.fp.assign(cfg.n, 0);
  rep.fn.assign(cfg.n, 0);
  rep.tn.assign(cfg.n, 0);

  for (int s = 0; s < data.samples(); ++s) {
    FeatureSet fs{data.features[s]};
    const std::vector<double> phat = forward(fs, params, cfg, std::nullopt);
    for (int u = 0; u < cfg.n; ++u) {
      const int pred = phat[u] >= threshold ? 1 : 0;
      const int truth = data.labels[s][u];
      if (pred == 1 && truth == 1) ++rep.tp[u];
      else if (pred == 1 && truth == 0) ++rep.fp[u];
      else if (pred == 0 && truth == 1) ++rep.fn[u];
      else ++rep.tn[u];
    }
  }

  rep.f1.resize(cfg.n);
  double sum = 0.0;
  for (int u = 0; u < cfg.n; ++u) {
    const long long denom = 2 * rep.tp[u] + rep.fp[u] + rep.fn[u];
    rep.f1[u] = denom == 0 ? 0.0 : 2.0 * rep.tp[u] / static_cast<double>(denom);
    sum += rep.f1[u];
  }
  rep.avg_f1 = sum / cfg.n;
  return rep;
}

}  // namespace abrnet
