#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "abrnet/matrix.hpp"
#include "abrnet/tape.hpp"

namespace abrnet {

// Per-sample dictionary of local unit features, one row per unit.
struct FeatureSet {
  Matrix F;  // n x d_l
  int n() const { return F.rows(); }
  int dim() const { return F.cols(); }
};

// One relation learning layer: query/key projections, both d_m x d_l.
struct RelationLayerParams {
  Matrix wq;
  Matrix wk;
};

// Fusion gate projection, d_l x 1. Shared by all layers and units.
struct FusionParams {
  Matrix q0;
};

// Two-layer per-unit classifier: hidden 64-wide, output 2-wide.
// hidden_w: 64 x in, hidden_b: 1 x 64, out_w: 2 x 64, out_b: 1 x 2.
struct ClassifierHead {
  Matrix hidden_w;
  Matrix hidden_b;
  Matrix out_w;
  Matrix out_b;
};

enum class HeadSharing { shared, per_unit };
enum class FusionKind { attention, average, concat, score_average };

std::string to_string(HeadSharing s);
std::string to_string(FusionKind f);
HeadSharing head_sharing_from_string(const std::string& s);
FusionKind fusion_from_string(const std::string& s);

struct ClassifierParams {
  HeadSharing sharing = HeadSharing::per_unit;
  std::vector<ClassifierHead> heads;  // size 1 when shared, else n
  const ClassifierHead& head_for(int unit) const {
    return sharing == HeadSharing::shared ? heads[0] : heads[unit];
  }
};

inline constexpr int kClassifierHidden = 64;

struct ModelConfig {
  int n = 0;
  int d_l = 512;
  int d_m = 256;
  int m = 4;
  int k = 0;  // 0 means ceil(n/2)
  int t = 2;
  double leaky_slope = 0.01;
  HeadSharing sharing = HeadSharing::per_unit;
  FusionKind fusion = FusionKind::attention;

  int resolved_k() const { return k > 0 ? k : (n + 1) / 2; }
  void validate(bool dropout_enabled) const;  // throws config_error
};

struct ModelParams {
  std::vector<RelationLayerParams> layers;
  FusionParams fusion;  // q0 empty unless the config uses attention fusion
  ClassifierParams classifier;
};

// Xavier-uniform weights, zero biases, drawn in named_tensors order from a
// single seeded stream.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Fixed enumeration of trainable tensors: wq[l], wk[l] per layer, q0 when
// present, then per-head cls.hidden.w/.b, cls.out.w/.b (suffixed .unit{i}
// for per-unit heads).
std::vector<std::pair<std::string, Matrix*>> named_tensors(ModelParams& params);
std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ModelParams& params);

// --- forward ops ---

// mu(i,j) = softmax_j( leaky_relu( (wq F_i)^T (wk F_j) / sqrt(d_m) ) )
Matrix relation_coefficients(const FeatureSet& f, const RelationLayerParams& layer,
                             double slope);

// 0/1 retention mask of the k largest entries per row; ties keep the lowest j.
Matrix topk_mask(const Matrix& mu, int k);

// R_i = leaky_relu( sum over retained j of mu(i,j) * F_j )
Matrix topk_aggregate(const FeatureSet& f, const Matrix& mu, int k, double slope);

// m independent layer outputs from the same dictionary.
std::vector<Matrix> run_relation_module(const FeatureSet& f,
                                        const std::vector<RelationLayerParams>& layers,
                                        const ModelConfig& cfg);

// beta_i = sigmoid(R_i . q0), one gate per unit.
std::vector<double> fusion_weights(const Matrix& r, const FusionParams& q);

// S_i = sum over l = 0..m of beta_i^l R_i^l, with R^0 the raw feature row.
Matrix fuse(const FeatureSet& layer0, const std::vector<Matrix>& outputs,
            const FusionParams& q);

// S_i = beta_i^0 F_i + (m/t) * sum over l in subset of beta_i^l R_i^l.
// Layer 0 is always retained and excluded from the rescale.
Matrix fuse_with_dropout(const FeatureSet& layer0, const std::vector<Matrix>& outputs,
                         const FusionParams& q, const std::vector<int>& subset, int m, int t);

// Occurrence probability per unit from the two-layer head.
std::vector<double> classify(const Matrix& s, const ClassifierParams& cls, double slope);

// Relation-layer retention for one training sample. Shared mode keeps one
// subset for every unit; per-unit mode draws a subset per unit.
struct DropoutPlan {
  bool per_unit = false;
  std::vector<int> shared;
  std::vector<std::vector<int>> unit_subsets;
};

// Full pipeline. A nullopt subset is eval mode (full fusion); a subset is
// train mode. Dropout subsets only apply to attention fusion.
std::vector<double> forward(const FeatureSet& f, const ModelParams& params,
                            const ModelConfig& cfg,
                            const std::optional<std::vector<int>>& dropout_subset = std::nullopt);

// Tape version of forward for training. `param_ids` is aligned with the
// named_tensors order; `phat` is an n x 1 node.
struct TapeForward {
  std::vector<Tape::Id> param_ids;
  Tape::Id phat;
};
TapeForward forward_tape(Tape& tape, const FeatureSet& f, const ModelParams& params,
                         const ModelConfig& cfg, const std::optional<DropoutPlan>& plan);

// --- checkpoint ---

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace abrnet
