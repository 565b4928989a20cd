#include "abrnet/train.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "abrnet/errors.hpp"
#include "abrnet/tape.hpp"

namespace abrnet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lr0 < 0.0) throw config_error("train: lr0 must be >= 0, got " + std::to_string(lr0));
  if (momentum < 0.0 || momentum >= 1.0)
    throw config_error("train: momentum must lie in [0,1), got " + std::to_string(momentum));
  if (weight_decay < 0.0)
    throw config_error("train: weight_decay must be >= 0, got " + std::to_string(weight_decay));
  if (lr_halve_every < 1)
    throw config_error("train: lr_halve_every must be >= 1, got " +
                       std::to_string(lr_halve_every));
  if (epochs < 0) throw config_error("train: epochs must be >= 0");
  if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
  if (loss.lambda < 0.0) throw config_error("train: lambda must be >= 0");
  model.validate(dropout_enabled);
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw config_error("lr_at: negative epoch");
  // exact halving: lr0 * 2^-(epoch / halve_every)
  return std::ldexp(cfg.lr0, -(epoch / cfg.lr_halve_every));
}

void sgd_step(ModelParams& params, const std::vector<Matrix>& grads, SgdState& state,
              const TrainConfig& cfg, int epoch) {
  auto tensors = named_tensors(params);
  if (grads.size() != tensors.size())
    throw dim_error("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                    std::to_string(tensors.size()) + " tensors");
  if (state.velocity.empty()) {
    state.velocity.reserve(tensors.size());
    for (const auto& [name, mat] : tensors) state.velocity.emplace_back(mat->rows(), mat->cols());
  }
  if (state.velocity.size() != tensors.size())
    throw dim_error("sgd_step: optimizer state does not match parameter count");

  const double lr = lr_at(cfg, epoch);
  const double mu = cfg.momentum;
  const double wd = cfg.weight_decay;
  for (size_t i = 0; i < tensors.size(); ++i) {
    Matrix& theta = *tensors[i].second;
    const Matrix& grad = grads[i];
    Matrix& vel = state.velocity[i];
    if (!grad.same_shape(theta) || !vel.same_shape(theta))
      throw dim_error("sgd_step: shape mismatch for tensor '" + tensors[i].first + "' (" +
                      grad.shape_str() + " vs " + theta.shape_str() + ")");
    for (int e = 0; e < theta.size(); ++e) {
      const double g = grad[e] + wd * theta[e];
      vel[e] = mu * vel[e] + g;
      theta[e] -= lr * (g + mu * vel[e]);
    }
  }
}

std::vector<int> sample_dropout_subset(Rng& rng, int m, int t) {
  if (t < 1 || m < 1 || t > m)
    throw config_error("sample_dropout_subset: need 1 <= t <= m, got t=" + std::to_string(t) +
                       ", m=" + std::to_string(m));
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < t; ++i) {
    std::uniform_int_distribution<int> pick(i, m - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(t);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

struct SampleSlot {
  double cross = 0.0;
  double aur = 0.0;
  double joint = 0.0;
  std::vector<Matrix> grads;
};

bool params_finite(const ModelParams& params) {
  for (const auto& [name, mat] : named_tensors(params))
    if (!all_finite(*mat)) return false;
  return true;
}

int resolve_threads(int requested) {
  if (requested == 1) return 1;
  if (requested > 1) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg_in) {
  if (data.samples() == 0) throw config_error("train: dataset is empty");
  TrainConfig cfg = cfg_in;
  if (cfg.model.n == 0) cfg.model.n = data.n;
  if (cfg.model.d_l == 0) cfg.model.d_l = data.d_l;
  cfg.validate();
  if (cfg.model.n != data.n || cfg.model.d_l != data.d_l)
    throw config_error("train: model is " + std::to_string(cfg.model.n) + " units x " +
                       std::to_string(cfg.model.d_l) + " dims but dataset is " +
                       std::to_string(data.n) + " x " + std::to_string(data.d_l));

  TrainResult result;
  const LabelBatch labels = data.label_batch();
  result.weights = balance_weights(labels);
  result.stats = relation_stats(labels);
  result.params = init_params(cfg.model, cfg.seed);

  SgdState state;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const int threads = resolve_threads(cfg.threads);
  const bool use_dropout = cfg.dropout_enabled && cfg.model.m > 0;

  std::vector<int> perm(data.samples());
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    const int batches = (data.samples() + cfg.batch_size - 1) / cfg.batch_size;

    for (int b = 0; b < batches; ++b) {
      const int begin = b * cfg.batch_size;
      const int count = std::min(cfg.batch_size, data.samples() - begin);

      // subsets are drawn serially up front so the RNG stream is independent
      // of how the batch is parallelized
      std::vector<std::optional<DropoutPlan>> plans(count);
      if (use_dropout) {
        for (int i = 0; i < count; ++i) {
          DropoutPlan plan;
          plan.per_unit = cfg.per_unit_dropout;
          if (plan.per_unit) {
            plan.unit_subsets.reserve(cfg.model.n);
            for (int u = 0; u < cfg.model.n; ++u)
              plan.unit_subsets.push_back(sample_dropout_subset(rng, cfg.model.m, cfg.model.t));
          } else {
            plan.shared = sample_dropout_subset(rng, cfg.model.m, cfg.model.t);
          }
          plans[i] = std::move(plan);
        }
      }

      std::vector<SampleSlot> slots(count);
      auto eval_sample = [&](int i) {
        const int s = perm[begin + i];
        FeatureSet fs{data.features[s]};
        Tape tape;
        const TapeForward fwd = forward_tape(tape, fs, result.params, cfg.model, plans[i]);
        const LossNodes ln =
            joint_loss_tape(tape, fwd.phat, data.labels[s], result.stats, result.weights,
                            cfg.loss);
        tape.backward(ln.joint);
        SampleSlot& slot = slots[i];
        slot.cross = tape.scalar(ln.cross);
        slot.aur = tape.scalar(ln.aur);
        slot.joint = tape.scalar(ln.joint);
        slot.grads.reserve(fwd.param_ids.size());
        for (Tape::Id id : fwd.param_ids) slot.grads.push_back(tape.grad(id));
      };

      if (threads == 1 || count == 1) {
        for (int i = 0; i < count; ++i) eval_sample(i);
      } else {
        std::atomic<int> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&]() {
          while (true) {
            const int i = next.fetch_add(1);
            if (i >= count) break;
            try {
              eval_sample(i);
            } catch (...) {
              std::lock_guard<std::mutex> lock(error_mutex);
              if (!first_error) first_error = std::current_exception();
              return;
            }
          }
        };
        std::vector<std::thread> pool;
        const int nw = std::min(threads, count);
        pool.reserve(nw);
        for (int w = 0; w < nw; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
      }

      // fixed-order reduction: slot 0, 1, ... regardless of thread count
      const double inv = 1.0 / count;
      std::vector<Matrix> gsum = std::move(slots[0].grads);
      double cross = slots[0].cross, aur = slots[0].aur, joint = slots[0].joint;
      for (int i = 1; i < count; ++i) {
        for (size_t j = 0; j < gsum.size(); ++j) {
          const Matrix& g = slots[i].grads[j];
          for (int e = 0; e < gsum[j].size(); ++e) gsum[j][e] += g[e];
        }
        cross += slots[i].cross;
        aur += slots[i].aur;
        joint += slots[i].joint;
      }
      cross *= inv;
      aur *= inv;
      joint *= inv;
      for (auto& g : gsum)
        for (int e = 0; e < g.size(); ++e) g[e] *= inv;

      bool finite = std::isfinite(joint) && std::isfinite(cross) && std::isfinite(aur);
      for (const auto& g : gsum)
        if (finite && !all_finite(g)) finite = false;
      if (!finite) {
        result.diverged = true;
        result.divergence_note = "non-finite loss/gradient in epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(b);
        break;
      }

      const ModelParams backup = result.params;
      sgd_step(result.params, gsum, state, cfg, epoch);
      if (!params_finite(result.params)) {
        result.params = backup;
        result.diverged = true;
        result.divergence_note = "non-finite parameters after update in epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(b);
        break;
      }

      result.trace.push_back({epoch, b, cross, aur, cross + cfg.loss.lambda * aur,
                              lr_at(cfg, epoch)});
    }
  }
  return result;
}

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

void save_trace(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("trace: cannot write " + path);
  std::string buf = "epoch,batch,l_cross,l_aur,l_total,lr\n";
  for (const TraceRow& row : trace) {
    buf += std::to_string(row.epoch);
    buf += ',';
    buf += std::to_string(row.batch);
    buf += ',';
    append_double(buf, row.l_cross);
    buf += ',';
    append_double(buf, row.l_aur);
    buf += ',';
    append_double(buf, row.l_total);
    buf += ',';
    append_double(buf, row.lr);
    buf += '\n';
  }
  out << buf;
  if (!out) throw io_error("trace: write failed for " + path);
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(where + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok) throw config_error(where + " has unknown field '" + key + "'");
  }
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  json doc;
  doc["lr0"] = cfg.lr0;
  doc["momentum"] = cfg.momentum;
  doc["weight_decay"] = cfg.weight_decay;
  doc["lr_halve_every"] = cfg.lr_halve_every;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["seed"] = cfg.seed;
  doc["dropout"] = cfg.dropout_enabled;
  doc["per_unit_dropout"] = cfg.per_unit_dropout;
  doc["model"] = {{"n", cfg.model.n},
                  {"d_l", cfg.model.d_l},
                  {"d_m", cfg.model.d_m},
                  {"m", cfg.model.m},
                  {"k", cfg.model.k},
                  {"t", cfg.model.t},
                  {"leaky_slope", cfg.model.leaky_slope},
                  {"classifier_sharing", to_string(cfg.model.sharing)},
                  {"fusion", to_string(cfg.model.fusion)}};
  doc["loss"] = {{"lambda", cfg.loss.lambda},
                 {"p_pos", cfg.loss.p_pos},
                 {"p_neg", cfg.loss.p_neg},
                 {"exclude_diagonal", cfg.loss.exclude_diagonal}};
  return doc.dump(1);
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw config_error("config must be a JSON object");
  // a run manifest embeds the config under "config"
  if (doc.contains("config") && doc.at("config").is_object()) doc = doc.at("config");

  reject_unknown(doc,
                 {"lr0", "momentum", "weight_decay", "lr_halve_every", "epochs", "batch_size",
                  "seed", "dropout", "per_unit_dropout", "model", "loss"},
                 "config");
  TrainConfig cfg;
  cfg.model.n = 0;    // resolved from the dataset unless given explicitly
  cfg.model.d_l = 0;
  take(doc, "lr0", cfg.lr0, "config");
  take(doc, "momentum", cfg.momentum, "config");
  take(doc, "weight_decay", cfg.weight_decay, "config");
  take(doc, "lr_halve_every", cfg.lr_halve_every, "config");
  take(doc, "epochs", cfg.epochs, "config");
  take(doc, "batch_size", cfg.batch_size, "config");
  take(doc, "seed", cfg.seed, "config");
  take(doc, "dropout", cfg.dropout_enabled, "config");
  take(doc, "per_unit_dropout", cfg.per_unit_dropout, "config");

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(
        m, {"n", "d_l", "d_m", "m", "k", "t", "leaky_slope", "classifier_sharing", "fusion"},
        "config.model");
    take(m, "n", cfg.model.n, "config.model");
    take(m, "d_l", cfg.model.d_l, "config.model");
    take(m, "d_m", cfg.model.d_m, "config.model");
    take(m, "m", cfg.model.m, "config.model");
    take(m, "k", cfg.model.k, "config.model");
    take(m, "t", cfg.model.t, "config.model");
    take(m, "leaky_slope", cfg.model.leaky_slope, "config.model");
    if (m.contains("classifier_sharing"))
      cfg.model.sharing = head_sharing_from_string(m.at("classifier_sharing").get<std::string>());
    if (m.contains("fusion"))
      cfg.model.fusion = fusion_from_string(m.at("fusion").get<std::string>());
  }
  if (doc.contains("loss")) {
    const json& l = doc.at("loss");
    reject_unknown(l, {"lambda", "p_pos", "p_neg", "exclude_diagonal"}, "config.loss");
    take(l, "lambda", cfg.loss.lambda, "config.loss");
    take(l, "p_pos", cfg.loss.p_pos, "config.loss");
    take(l, "p_neg", cfg.loss.p_neg, "config.loss");
    take(l, "exclude_diagonal", cfg.loss.exclude_diagonal, "config.loss");
  }
  return cfg;
}

}  // namespace abrnet
