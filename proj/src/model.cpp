#include "abrnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "abrnet/rng.hpp"

namespace abrnet {

using nlohmann::json;

std::string to_string(HeadSharing s) {
  return s == HeadSharing::shared ? "shared" : "per_unit";
}

std::string to_string(FusionKind f) {
  switch (f) {
    case FusionKind::attention: return "attention";
    case FusionKind::average: return "avg";
    case FusionKind::concat: return "concat";
    case FusionKind::score_average: return "score-avg";
  }
  return "attention";
}

HeadSharing head_sharing_from_string(const std::string& s) {
  if (s == "shared") return HeadSharing::shared;
  if (s == "per_unit") return HeadSharing::per_unit;
  throw config_error("unknown classifier sharing '" + s + "' (expected shared|per_unit)");
}

FusionKind fusion_from_string(const std::string& s) {
  if (s == "attention") return FusionKind::attention;
  if (s == "avg") return FusionKind::average;
  if (s == "concat") return FusionKind::concat;
  if (s == "score-avg") return FusionKind::score_average;
  throw config_error("unknown fusion '" + s + "' (expected attention|avg|concat|score-avg)");
}

void ModelConfig::validate(bool dropout_enabled) const {
  if (n < 1) throw config_error("model: n must be >= 1, got " + std::to_string(n));
  if (d_l < 1) throw config_error("model: d_l must be >= 1, got " + std::to_string(d_l));
  if (d_m < 1) throw config_error("model: d_m must be >= 1, got " + std::to_string(d_m));
  if (m < 0) throw config_error("model: m must be >= 0, got " + std::to_string(m));
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw config_error("model: leaky_slope must lie in (0,1), got " + std::to_string(leaky_slope));
  const int kk = resolved_k();
  if (kk < 1 || kk > n)
    throw config_error("model: k must lie in [1," + std::to_string(n) + "], got " +
                       std::to_string(kk));
  if (dropout_enabled) {
    if (m < 1)
      throw config_error("model: relation dropout needs m >= 1 relation layers");
    if (t < 1 || t > m)
      throw config_error("model: t must lie in [1," + std::to_string(m) + "], got " +
                         std::to_string(t));
  }
}

namespace {

Matrix xavier_uniform(Rng& rng, int rows, int cols, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_matrix(rng, rows, cols, -a, a);
}

int head_input_dim(const ModelConfig& cfg) {
  return cfg.fusion == FusionKind::concat ? (cfg.m + 1) * cfg.d_l : cfg.d_l;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p;
  p.layers.resize(cfg.m);
  for (int l = 0; l < cfg.m; ++l) {
    p.layers[l].wq = xavier_uniform(rng, cfg.d_m, cfg.d_l, cfg.d_l, cfg.d_m);
    p.layers[l].wk = xavier_uniform(rng, cfg.d_m, cfg.d_l, cfg.d_l, cfg.d_m);
  }
  if (cfg.fusion == FusionKind::attention)
    p.fusion.q0 = xavier_uniform(rng, cfg.d_l, 1, cfg.d_l, 1);
  p.classifier.sharing = cfg.sharing;
  const int heads = cfg.sharing == HeadSharing::shared ? 1 : cfg.n;
  const int in = head_input_dim(cfg);
  p.classifier.heads.resize(heads);
  for (int h = 0; h < heads; ++h) {
    auto& head = p.classifier.heads[h];
    head.hidden_w = xavier_uniform(rng, kClassifierHidden, in, in, kClassifierHidden);
    head.hidden_b = Matrix(1, kClassifierHidden);
    head.out_w = xavier_uniform(rng, 2, kClassifierHidden, kClassifierHidden, 2);
    head.out_b = Matrix(1, 2);
  }
  return p;
}

template <typename Params, typename Mat>
static std::vector<std::pair<std::string, Mat*>> named_tensors_impl(Params& params) {
  std::vector<std::pair<std::string, Mat*>> out;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    out.emplace_back("wq[" + std::to_string(l) + "]", &params.layers[l].wq);
    out.emplace_back("wk[" + std::to_string(l) + "]", &params.layers[l].wk);
  }
  if (!params.fusion.q0.empty()) out.emplace_back("q0", &params.fusion.q0);
  const bool per_unit = params.classifier.sharing == HeadSharing::per_unit;
  for (size_t h = 0; h < params.classifier.heads.size(); ++h) {
    const std::string suffix = per_unit ? ".unit" + std::to_string(h) : "";
    auto& head = params.classifier.heads[h];
    out.emplace_back("cls.hidden.w" + suffix, &head.hidden_w);
    out.emplace_back("cls.hidden.b" + suffix, &head.hidden_b);
    out.emplace_back("cls.out.w" + suffix, &head.out_w);
    out.emplace_back("cls.out.b" + suffix, &head.out_b);
  }
  return out;
}

std::vector<std::pair<std::string, Matrix*>> named_tensors(ModelParams& params) {
  return named_tensors_impl<ModelParams, Matrix>(params);
}

std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ModelParams& params) {
  return named_tensors_impl<const ModelParams, const Matrix>(params);
}

Matrix relation_coefficients(const FeatureSet& f, const RelationLayerParams& layer,
                             double slope) {
  if (layer.wq.cols() != f.dim() || layer.wk.cols() != f.dim())
    throw dim_error("relation_coefficients: projections " + layer.wq.shape_str() + "/" +
                    layer.wk.shape_str() + " do not match features " + f.F.shape_str());
  if (!layer.wq.same_shape(layer.wk))
    throw dim_error("relation_coefficients: wq " + layer.wq.shape_str() + " vs wk " +
                    layer.wk.shape_str());
  const Matrix q = matmul(f.F, transpose(layer.wq));  // n x d_m
  const Matrix k = matmul(f.F, transpose(layer.wk));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(layer.wq.rows()));
  const Matrix logits = scale(matmul(q, transpose(k)), inv_scale);
  return softmax_rows(leaky_relu(logits, slope));
}

Matrix topk_mask(const Matrix& mu, int k) {
  const int n = mu.cols();
  if (k < 1 || k > n)
    throw config_error("topk: k must lie in [1," + std::to_string(n) + "], got " +
                       std::to_string(k));
  Matrix mask(mu.rows(), n);
  std::vector<int> idx(n);
  for (int i = 0; i < mu.rows(); ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return mu(i, a) > mu(i, b); });
    for (int r = 0; r < k; ++r) mask(i, idx[r]) = 1.0;
  }
  return mask;
}

Matrix topk_aggregate(const FeatureSet& f, const Matrix& mu, int k, double slope) {
  if (mu.rows() != f.n() || mu.cols() != f.n())
    throw dim_error("topk_aggregate: coefficients " + mu.shape_str() + " do not match " +
                    std::to_string(f.n()) + " units");
  const Matrix masked = hadamard(mu, topk_mask(mu, k));
  return leaky_relu(matmul(masked, f.F), slope);
}

std::vector<Matrix> run_relation_module(const FeatureSet& f,
                                        const std::vector<RelationLayerParams>& layers,
                                        const ModelConfig& cfg) {
  if (static_cast<int>(layers.size()) != cfg.m)
    throw config_error("run_relation_module: expected " + std::to_string(cfg.m) +
                       " layers, got " + std::to_string(layers.size()));
  std::vector<Matrix> out;
  out.reserve(layers.size());
  for (const auto& layer : layers) {
    const Matrix mu = relation_coefficients(f, layer, cfg.leaky_slope);
    out.push_back(topk_aggregate(f, mu, cfg.resolved_k(), cfg.leaky_slope));
  }
  return out;
}

std::vector<double> fusion_weights(const Matrix& r, const FusionParams& q) {
  if (q.q0.cols() != 1 || q.q0.rows() != r.cols())
    throw dim_error("fusion_weights: q0 " + q.q0.shape_str() + " does not match features " +
                    r.shape_str());
  const Matrix beta = sigmoid(matmul(r, q.q0));
  std::vector<double> out(beta.rows());
  for (int i = 0; i < beta.rows(); ++i) out[i] = beta(i, 0);
  return out;
}

namespace {

Matrix gated_term(const Matrix& r, const FusionParams& q) {
  return row_scale(r, sigmoid(matmul(r, q.q0)));
}

// Sum of gated relation-layer terms in ascending layer order.
Matrix relation_sum(const std::vector<Matrix>& outputs, const FusionParams& q,
                    const std::vector<int>& subset) {
  Matrix acc;
  for (int l : subset) {
    Matrix term = gated_term(outputs[l], q);
    acc = acc.empty() ? std::move(term) : add(acc, term);
  }
  return acc;
}

std::vector<int> all_layers(int m) {
  std::vector<int> v(m);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

Matrix fuse(const FeatureSet& layer0, const std::vector<Matrix>& outputs,
            const FusionParams& q) {
  Matrix s = gated_term(layer0.F, q);
  if (!outputs.empty())
    s = add(s, relation_sum(outputs, q, all_layers(static_cast<int>(outputs.size()))));
  return s;
}

Matrix fuse_with_dropout(const FeatureSet& layer0, const std::vector<Matrix>& outputs,
                         const FusionParams& q, const std::vector<int>& subset, int m, int t) {
  if (static_cast<int>(subset.size()) != t)
    throw config_error("fuse_with_dropout: subset size " + std::to_string(subset.size()) +
                       " does not match t=" + std::to_string(t));
  for (int l : subset)
    if (l < 0 || l >= static_cast<int>(outputs.size()))
      throw config_error("fuse_with_dropout: layer index " + std::to_string(l) +
                         " out of range");
  Matrix s = gated_term(layer0.F, q);
  if (t > 0) {
    const double rescale = static_cast<double>(m) / static_cast<double>(t);
    s = add(s, scale(relation_sum(outputs, q, subset), rescale));
  }
  return s;
}

std::vector<double> classify(const Matrix& s, const ClassifierParams& cls, double slope) {
  const int n = s.rows();
  if (cls.sharing == HeadSharing::per_unit && static_cast<int>(cls.heads.size()) != n)
    throw dim_error("classify: " + std::to_string(cls.heads.size()) + " heads for " +
                    std::to_string(n) + " units");
  std::vector<double> phat(n);
  Matrix row_i(1, s.cols());
  for (int i = 0; i < n; ++i) {
    const ClassifierHead& head = cls.head_for(i);
    if (head.hidden_w.cols() != s.cols())
      throw dim_error("classify: head expects " + std::to_string(head.hidden_w.cols()) +
                      " inputs, got " + s.shape_str());
    for (int j = 0; j < s.cols(); ++j) row_i(0, j) = s(i, j);
    const Matrix hidden =
        leaky_relu(add(matmul(row_i, transpose(head.hidden_w)), head.hidden_b), slope);
    const Matrix logits = add(matmul(hidden, transpose(head.out_w)), head.out_b);
    const Matrix probs = softmax_rows(logits);
    phat[i] = probs(0, 1);  // index 1 is the occurrence class
  }
  return phat;
}

namespace {

std::vector<double> mean_scores(const std::vector<std::vector<double>>& per_layer) {
  const int n = static_cast<int>(per_layer[0].size());
  std::vector<double> acc(n, 0.0);
  for (const auto& scores : per_layer)
    for (int i = 0; i < n; ++i) acc[i] += scores[i];
  const double inv = 1.0 / per_layer.size();
  for (int i = 0; i < n; ++i) acc[i] *= inv;
  return acc;
}

}  // namespace

std::vector<double> forward(const FeatureSet& f, const ModelParams& params,
                            const ModelConfig& cfg,
                            const std::optional<std::vector<int>>& dropout_subset) {
  if (f.n() != cfg.n || f.dim() != cfg.d_l)
    throw dim_error("forward: features " + f.F.shape_str() + " do not match config " +
                    std::to_string(cfg.n) + "x" + std::to_string(cfg.d_l));
  if (dropout_subset && cfg.fusion != FusionKind::attention)
    throw config_error("forward: relation dropout applies to attention fusion only");
  const std::vector<Matrix> outputs = run_relation_module(f, params.layers, cfg);

  switch (cfg.fusion) {
    case FusionKind::attention: {
      const Matrix s = dropout_subset
                           ? fuse_with_dropout(f, outputs, params.fusion, *dropout_subset,
                                               cfg.m, cfg.t)
                           : fuse(f, outputs, params.fusion);
      return classify(s, params.classifier, cfg.leaky_slope);
    }
    case FusionKind::average: {
      Matrix s = f.F;
      for (const Matrix& r : outputs) s = add(s, r);
      return classify(scale(s, 1.0 / (cfg.m + 1)), params.classifier, cfg.leaky_slope);
    }
    case FusionKind::concat: {
      std::vector<const Matrix*> blocks;
      blocks.push_back(&f.F);
      for (const Matrix& r : outputs) blocks.push_back(&r);
      Matrix s(cfg.n, (cfg.m + 1) * cfg.d_l);
      int c0 = 0;
      for (const Matrix* b : blocks) {
        for (int i = 0; i < cfg.n; ++i)
          for (int j = 0; j < cfg.d_l; ++j) s(i, c0 + j) = (*b)(i, j);
        c0 += cfg.d_l;
      }
      return classify(s, params.classifier, cfg.leaky_slope);
    }
    case FusionKind::score_average: {
      std::vector<std::vector<double>> per_layer;
      per_layer.push_back(classify(f.F, params.classifier, cfg.leaky_slope));
      for (const Matrix& r : outputs)
        per_layer.push_back(classify(r, params.classifier, cfg.leaky_slope));
      return mean_scores(per_layer);
    }
  }
  throw config_error("forward: unknown fusion kind");
}

namespace {

Tape::Id classify_tape(Tape& t, Tape::Id s, const std::vector<std::vector<Tape::Id>>& head_ids,
                       const ClassifierParams& cls, double slope) {
  const int n = t.value(s).rows();
  std::vector<Tape::Id> probs;
  probs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto& ids = cls.sharing == HeadSharing::shared ? head_ids[0] : head_ids[i];
    const Tape::Id row = t.row(s, i);
    const Tape::Id hidden =
        t.leaky_relu(t.add(t.matmul(row, t.transpose(ids[0])), ids[1]), slope);
    const Tape::Id logits = t.add(t.matmul(hidden, t.transpose(ids[2])), ids[3]);
    probs.push_back(t.col(t.softmax_rows(logits), 1));
  }
  return t.vstack(probs);
}

}  // namespace

TapeForward forward_tape(Tape& t, const FeatureSet& f, const ModelParams& params,
                         const ModelConfig& cfg, const std::optional<DropoutPlan>& plan) {
  if (f.n() != cfg.n || f.dim() != cfg.d_l)
    throw dim_error("forward_tape: features " + f.F.shape_str() + " do not match config " +
                    std::to_string(cfg.n) + "x" + std::to_string(cfg.d_l));
  if (static_cast<int>(params.layers.size()) != cfg.m)
    throw config_error("forward_tape: expected " + std::to_string(cfg.m) + " layers, got " +
                       std::to_string(params.layers.size()));
  if (plan && cfg.fusion != FusionKind::attention)
    throw config_error("forward_tape: relation dropout applies to attention fusion only");
  if (plan) {
    if (cfg.t < 1 || cfg.t > cfg.m)
      throw config_error("forward_tape: t must lie in [1," + std::to_string(cfg.m) + "]");
    if (!plan->per_unit) {
      if (static_cast<int>(plan->shared.size()) != cfg.t)
        throw config_error("forward_tape: shared subset size " +
                           std::to_string(plan->shared.size()) + " does not match t=" +
                           std::to_string(cfg.t));
    } else {
      if (static_cast<int>(plan->unit_subsets.size()) != cfg.n)
        throw config_error("forward_tape: need one subset per unit");
      for (const auto& sub : plan->unit_subsets)
        if (static_cast<int>(sub.size()) != cfg.t)
          throw config_error("forward_tape: per-unit subset size does not match t=" +
                             std::to_string(cfg.t));
    }
  }

  TapeForward out;
  const Tape::Id f_id = t.leaf(f.F);

  std::vector<std::array<Tape::Id, 2>> layer_ids(params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    layer_ids[l][0] = t.leaf(params.layers[l].wq);
    layer_ids[l][1] = t.leaf(params.layers[l].wk);
    out.param_ids.push_back(layer_ids[l][0]);
    out.param_ids.push_back(layer_ids[l][1]);
  }
  Tape::Id q0_id = -1;
  if (!params.fusion.q0.empty()) {
    q0_id = t.leaf(params.fusion.q0);
    out.param_ids.push_back(q0_id);
  }
  std::vector<std::vector<Tape::Id>> head_ids(params.classifier.heads.size());
  for (size_t h = 0; h < params.classifier.heads.size(); ++h) {
    const auto& head = params.classifier.heads[h];
    head_ids[h] = {t.leaf(head.hidden_w), t.leaf(head.hidden_b), t.leaf(head.out_w),
                   t.leaf(head.out_b)};
    for (Tape::Id id : head_ids[h]) out.param_ids.push_back(id);
  }

  // Layers dropped by a shared-subset plan never contribute, so their graphs
  // are not built at all.
  std::vector<char> needed(params.layers.size(), 1);
  if (plan && !plan->per_unit) {
    std::fill(needed.begin(), needed.end(), 0);
    for (int l : plan->shared) needed[l] = 1;
  }

  std::vector<Tape::Id> relation(params.layers.size(), -1);
  for (size_t l = 0; l < params.layers.size(); ++l) {
    if (!needed[l]) continue;
    const double inv_scale =
        1.0 / std::sqrt(static_cast<double>(params.layers[l].wq.rows()));
    const Tape::Id q = t.matmul(f_id, t.transpose(layer_ids[l][0]));
    const Tape::Id k = t.matmul(f_id, t.transpose(layer_ids[l][1]));
    const Tape::Id logits = t.scale(t.matmul(q, t.transpose(k)), inv_scale);
    const Tape::Id mu = t.softmax_rows(t.leaky_relu(logits, cfg.leaky_slope));
    // top-k retention is piecewise constant; the mask enters as a constant
    const Matrix mask = topk_mask(t.value(mu), cfg.resolved_k());
    const Tape::Id masked = t.mul(mu, t.leaf(mask));
    relation[l] = t.leaky_relu(t.matmul(masked, f_id), cfg.leaky_slope);
  }

  auto gated = [&](Tape::Id r) { return t.row_scale(r, t.sigmoid(t.matmul(r, q0_id))); };

  Tape::Id s = -1;
  switch (cfg.fusion) {
    case FusionKind::attention: {
      const Tape::Id s0 = gated(f_id);
      if (cfg.m == 0) {
        s = s0;
        break;
      }
      if (!plan) {
        Tape::Id acc = -1;
        for (size_t l = 0; l < relation.size(); ++l) {
          const Tape::Id term = gated(relation[l]);
          acc = acc < 0 ? term : t.add(acc, term);
        }
        s = t.add(s0, acc);
      } else {
        const double rescale = static_cast<double>(cfg.m) / static_cast<double>(cfg.t);
        Tape::Id acc = -1;
        if (!plan->per_unit) {
          for (int l : plan->shared) {
            const Tape::Id term = gated(relation[l]);
            acc = acc < 0 ? term : t.add(acc, term);
          }
        } else {
          // per-unit retention folds into a 0/1 gate column per layer
          for (size_t l = 0; l < relation.size(); ++l) {
            Matrix gate(cfg.n, 1);
            for (int i = 0; i < cfg.n; ++i) {
              const auto& sub = plan->unit_subsets[i];
              gate(i, 0) =
                  std::find(sub.begin(), sub.end(), static_cast<int>(l)) != sub.end() ? 1.0 : 0.0;
            }
            const Tape::Id beta = t.sigmoid(t.matmul(relation[l], q0_id));
            const Tape::Id term = t.row_scale(relation[l], t.mul(beta, t.leaf(gate)));
            acc = acc < 0 ? term : t.add(acc, term);
          }
        }
        s = t.add(s0, t.scale(acc, rescale));
      }
      break;
    }
    case FusionKind::average: {
      Tape::Id acc = f_id;
      for (Tape::Id r : relation) acc = t.add(acc, r);
      s = t.scale(acc, 1.0 / (cfg.m + 1));
      break;
    }
    case FusionKind::concat: {
      std::vector<Tape::Id> blocks{f_id};
      for (Tape::Id r : relation) blocks.push_back(r);
      s = t.hconcat(blocks);
      break;
    }
    case FusionKind::score_average: {
      std::vector<Tape::Id> scores;
      scores.push_back(classify_tape(t, f_id, head_ids, params.classifier, cfg.leaky_slope));
      for (Tape::Id r : relation)
        scores.push_back(classify_tape(t, r, head_ids, params.classifier, cfg.leaky_slope));
      Tape::Id acc = scores[0];
      for (size_t i = 1; i < scores.size(); ++i) acc = t.add(acc, scores[i]);
      out.phat = t.scale(acc, 1.0 / (cfg.m + 1));
      return out;
    }
  }
  out.phat = classify_tape(t, s, head_ids, params.classifier, cfg.leaky_slope);
  return out;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw io_error("checkpoint: tensor '" + name + "' is not a nested array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols)
      throw io_error("checkpoint: tensor '" + name + "' has ragged rows");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  json doc;
  doc["format"] = "abrnet-checkpoint";
  doc["version"] = 1;
  doc["config"] = {{"n", cfg.n},
                   {"d_l", cfg.d_l},
                   {"d_m", cfg.d_m},
                   {"m", cfg.m},
                   {"k", cfg.resolved_k()},
                   {"t", cfg.t},
                   {"leaky_slope", cfg.leaky_slope},
                   {"classifier_sharing", to_string(cfg.sharing)},
                   {"fusion", to_string(cfg.fusion)}};
  json tensors = json::object();
  for (const auto& [name, mat] : named_tensors(params)) tensors[name] = matrix_to_json(*mat);
  doc["params"] = std::move(tensors);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("checkpoint: cannot write " + path);
  out << doc.dump(1) << "\n";
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("checkpoint: cannot read " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw io_error("checkpoint: invalid JSON in " + path + ": " + e.what());
  }
  if (doc.value("format", "") != "abrnet-checkpoint")
    throw io_error("checkpoint: " + path + " is not an abrnet checkpoint");

  const json& c = doc.at("config");
  ModelConfig cfg;
  try {
    cfg.n = c.at("n").get<int>();
    cfg.d_l = c.at("d_l").get<int>();
    cfg.d_m = c.at("d_m").get<int>();
    cfg.m = c.at("m").get<int>();
    cfg.k = c.at("k").get<int>();
    cfg.t = c.at("t").get<int>();
    cfg.leaky_slope = c.at("leaky_slope").get<double>();
    cfg.sharing = head_sharing_from_string(c.at("classifier_sharing").get<std::string>());
    cfg.fusion = fusion_from_string(c.at("fusion").get<std::string>());
  } catch (const json::exception& e) {
    throw io_error(std::string("checkpoint: bad config block: ") + e.what());
  }
  cfg.validate(false);

  ModelParams params;
  params.layers.resize(cfg.m);
  for (auto& layer : params.layers) {
    layer.wq = Matrix(cfg.d_m, cfg.d_l);
    layer.wk = Matrix(cfg.d_m, cfg.d_l);
  }
  if (cfg.fusion == FusionKind::attention) params.fusion.q0 = Matrix(cfg.d_l, 1);
  params.classifier.sharing = cfg.sharing;
  params.classifier.heads.resize(cfg.sharing == HeadSharing::shared ? 1 : cfg.n);
  const int in_dim = cfg.fusion == FusionKind::concat ? (cfg.m + 1) * cfg.d_l : cfg.d_l;
  for (auto& head : params.classifier.heads) {
    head.hidden_w = Matrix(kClassifierHidden, in_dim);
    head.hidden_b = Matrix(1, kClassifierHidden);
    head.out_w = Matrix(2, kClassifierHidden);
    head.out_b = Matrix(1, 2);
  }

  const json& tensors = doc.at("params");
  for (auto& [name, mat] : named_tensors(params)) {
    if (!tensors.contains(name)) throw io_error("checkpoint: missing tensor '" + name + "'");
    const Matrix loaded = matrix_from_json(tensors.at(name), name);
    if (!loaded.same_shape(*mat))
      throw io_error("checkpoint: tensor '" + name + "' has shape " + loaded.shape_str() +
                     ", expected " + mat->shape_str());
    *mat = loaded;
  }
  if (tensors.size() != named_tensors(params).size())
    throw io_error("checkpoint: unexpected extra tensors in " + path);
  return {cfg, std::move(params)};
}

}  // namespace abrnet
