#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "abrnet/dataset.hpp"
#include "abrnet/errors.hpp"
#include "abrnet/eval.hpp"
#include "abrnet/grad_check.hpp"
#include "abrnet/synthetic.hpp"
#include "abrnet/train.hpp"
#include "abrnet/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitStats = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitGradCheck = 5;

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int env_threads() {
  const char* raw = std::getenv("ABRNET_THREADS");
  if (raw == nullptr || *raw == '\0') return 0;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v < 1)
    throw abrnet::config_error(std::string("ABRNET_THREADS must be a positive integer, got '") +
                               raw + "'");
  return static_cast<int>(v);
}

// Exclusive ownership of an output directory for the duration of a run.
class Lockfile {
 public:
  explicit Lockfile(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw abrnet::io_error("output directory " + dir.string() +
                             " is locked by another run (remove " + path_.string() +
                             " if stale)");
    ::close(fd);
  }
  ~Lockfile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  Lockfile(const Lockfile&) = delete;
  Lockfile& operator=(const Lockfile&) = delete;

 private:
  fs::path path_;
};

json matrix_json(const abrnet::Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw abrnet::io_error("cannot write " + path.string());
  out << text;
  if (!out) throw abrnet::io_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw abrnet::io_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> empirical_rates(const abrnet::Dataset& d) {
  std::vector<double> rates(d.n, 0.0);
  for (int s = 0; s < d.samples(); ++s)
    for (int u = 0; u < d.n; ++u) rates[u] += d.labels[s][u];
  for (int u = 0; u < d.n; ++u) rates[u] /= d.samples();
  return rates;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_path,
                 const std::string& test_out, int test_samples) {
  abrnet::SyntheticSpec spec = abrnet::load_synthetic_spec(spec_path);
  if (test_samples < 0) throw abrnet::config_error("--test-samples must be >= 0");
  if (!test_out.empty() && test_samples == 0)
    throw abrnet::config_error("--test-out needs --test-samples > 0");
  if (test_out.empty() && test_samples > 0)
    throw abrnet::config_error("--test-samples needs --test-out");

  const int train_samples = spec.samples;
  spec.samples += test_samples;
  const abrnet::Dataset all = abrnet::generate_synthetic(spec);
  const abrnet::Dataset train_set =
      test_samples > 0 ? abrnet::slice(all, 0, train_samples) : all;
  abrnet::save_dataset(out_path, train_set);
  if (test_samples > 0)
    abrnet::save_dataset(test_out, abrnet::slice(all, train_samples, spec.samples));

  std::printf("wrote %s: n=%d d_l=%d samples=%d clusters=%zu\n", out_path.c_str(),
              train_set.n, train_set.d_l, train_set.samples(), spec.clusters.size());
  const std::vector<double> rates = empirical_rates(train_set);
  std::printf("empirical rates:");
  for (double r : rates) std::printf(" %.4f", r);
  std::printf("\n");
  if (test_samples > 0)
    std::printf("wrote %s: samples=%d (same anchors)\n", test_out.c_str(), test_samples);
  return kExitOk;
}

int cmd_stats(const std::string& data_path, const std::string& out_path) {
  const abrnet::Dataset data = abrnet::load_dataset(data_path);
  const abrnet::LabelBatch labels = data.label_batch();
  const abrnet::RelationStats stats = abrnet::relation_stats(labels);
  const abrnet::BalanceWeights weights = abrnet::balance_weights(labels);

  json doc;
  doc["r"] = matrix_json(stats.r_mat);
  doc["a"] = matrix_json(stats.a_mat);
  doc["rates"] = weights.rates;
  doc["weights"] = weights.w;
  if (!out_path.empty()) write_text(out_path, doc.dump(1) + "\n");

  const int n = stats.units();
  int best_i = -1, best_j = -1, worst_i = -1, worst_j = -1;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (best_i < 0 || stats.a_mat(i, j) > stats.a_mat(best_i, best_j)) {
        best_i = i;
        best_j = j;
      }
      if (worst_i < 0 || stats.a_mat(i, j) < stats.a_mat(worst_i, worst_j)) {
        worst_i = i;
        worst_j = j;
      }
    }
  std::printf("samples=%lld units=%d\n", stats.samples, n);
  if (best_i >= 0) {
    std::printf("strongest positive pair: (%d,%d) a=%+.4f\n", best_i + 1, best_j + 1,
                stats.a_mat(best_i, best_j));
    std::printf("strongest negative pair: (%d,%d) a=%+.4f\n", worst_i + 1, worst_j + 1,
                stats.a_mat(worst_i, worst_j));
  }
  if (!out_path.empty()) std::printf("wrote %s\n", out_path.c_str());
  return kExitOk;
}

struct TrainFlags {
  std::string config_path, data_path, out_dir;
  int m = -1, k = -1, t = -1, epochs = -1, batch_size = -1, d_m = -1;
  double lambda = -1.0, p_pos = 0.0, p_neg = 0.0, lr0 = -1.0;
  bool has_p_pos = false, has_p_neg = false;
  int dropout = -1;  // -1 unset, 0 off, 1 on
  std::optional<std::uint64_t> seed;
  std::string fusion;
};

int cmd_train(const TrainFlags& f) {
  abrnet::TrainConfig cfg;
  cfg.model.n = 0;    // resolved from the dataset unless a config pins them
  cfg.model.d_l = 0;
  if (!f.config_path.empty())
    cfg = abrnet::train_config_from_json_text(read_text(f.config_path));

  if (f.m >= 0) cfg.model.m = f.m;
  if (f.k >= 0) cfg.model.k = f.k;
  if (f.t >= 0) cfg.model.t = f.t;
  if (f.d_m >= 0) cfg.model.d_m = f.d_m;
  if (f.lambda >= 0.0) cfg.loss.lambda = f.lambda;
  if (f.has_p_pos) cfg.loss.p_pos = f.p_pos;
  if (f.has_p_neg) cfg.loss.p_neg = f.p_neg;
  if (f.epochs >= 0) cfg.epochs = f.epochs;
  if (f.batch_size >= 0) cfg.batch_size = f.batch_size;
  if (f.lr0 >= 0.0) cfg.lr0 = f.lr0;
  if (f.seed) cfg.seed = *f.seed;
  if (f.dropout >= 0) cfg.dropout_enabled = f.dropout == 1;
  if (!f.fusion.empty()) cfg.model.fusion = abrnet::fusion_from_string(f.fusion);

  const abrnet::Dataset data = abrnet::load_dataset(f.data_path);
  if (cfg.model.n == 0) cfg.model.n = data.n;
  if (cfg.model.d_l == 0) cfg.model.d_l = data.d_l;

  if (cfg.dropout_enabled && cfg.model.m == 0) {
    std::fprintf(stderr, "warning: m=0 leaves no relation layers; dropout disabled\n");
    cfg.dropout_enabled = false;
  }
  if (cfg.dropout_enabled && cfg.model.fusion != abrnet::FusionKind::attention) {
    std::fprintf(stderr, "warning: relation dropout applies to attention fusion only; disabled\n");
    cfg.dropout_enabled = false;
  }
  cfg.threads = env_threads();
  cfg.validate();

  const fs::path out_dir(f.out_dir);
  fs::create_directories(out_dir);
  Lockfile lock(out_dir);

  const fs::path checkpoint_path = out_dir / "checkpoint.json";
  const fs::path trace_path = out_dir / "trace.csv";
  const fs::path stats_path = out_dir / "stats.json";
  const fs::path manifest_path = out_dir / "manifest.json";

  json manifest;
  manifest["format"] = "abrnet-manifest";
  manifest["version"] = abrnet::kVersion;
  manifest["created"] = iso_timestamp();
  manifest["command"] = "train";
  manifest["seed"] = cfg.seed;
  manifest["threads"] = cfg.threads;
  manifest["dataset"] = fs::absolute(f.data_path).string();
  manifest["outputs"] = {{"checkpoint", checkpoint_path.string()},
                         {"trace", trace_path.string()},
                         {"stats", stats_path.string()}};
  manifest["config"] = json::parse(abrnet::train_config_to_json(cfg));
  write_text(manifest_path, manifest.dump(1) + "\n");

  const abrnet::TrainResult result = abrnet::train(data, cfg);

  abrnet::save_trace(trace_path.string(), result.trace);
  json stats_doc;
  stats_doc["r"] = matrix_json(result.stats.r_mat);
  stats_doc["a"] = matrix_json(result.stats.a_mat);
  stats_doc["rates"] = result.weights.rates;
  stats_doc["weights"] = result.weights.w;
  write_text(stats_path, stats_doc.dump(1) + "\n");
  abrnet::save_checkpoint(checkpoint_path.string(), cfg.model, result.params);

  if (result.diverged) {
    std::fprintf(stderr, "training diverged: %s\n", result.divergence_note.c_str());
    std::fprintf(stderr, "kept last finite state; partial trace in %s\n",
                 trace_path.string().c_str());
    return kExitDiverged;
  }

  // per-epoch means for a readable summary
  int shown_epoch = -1;
  double total = 0.0, lr = 0.0;
  int rows = 0;
  auto flush = [&]() {
    if (rows > 0)
      std::printf("epoch %d: mean l_total=%.6f lr=%g (%d batches)\n", shown_epoch, total / rows,
                  lr, rows);
  };
  for (const auto& row : result.trace) {
    if (row.epoch != shown_epoch) {
      flush();
      shown_epoch = row.epoch;
      total = 0.0;
      rows = 0;
    }
    total += row.l_total;
    lr = row.lr;
    ++rows;
  }
  flush();
  std::printf("wrote %s\n", checkpoint_path.string().c_str());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& out_path, double threshold) {
  auto [cfg, params] = abrnet::load_checkpoint(checkpoint_path);
  const abrnet::Dataset data = abrnet::load_dataset(data_path);
  const abrnet::EvalReport rep = abrnet::evaluate(data, params, cfg, threshold);

  std::printf("%-6s %8s %8s %8s %8s %8s\n", "unit", "F1", "TP", "FP", "FN", "TN");
  for (int u = 0; u < rep.units(); ++u)
    std::printf("%-6d %8.4f %8lld %8lld %8lld %8lld\n", u + 1, rep.f1[u], rep.tp[u], rep.fp[u],
                rep.fn[u], rep.tn[u]);
  std::printf("%-6s %8.4f\n", "avg", rep.avg_f1);

  json doc;
  doc["f1"] = rep.f1;
  doc["avg_f1"] = rep.avg_f1;
  doc["tp"] = rep.tp;
  doc["fp"] = rep.fp;
  doc["fn"] = rep.fn;
  doc["tn"] = rep.tn;
  doc["threshold"] = threshold;
  doc["samples"] = rep.samples;
  std::printf("%s\n", doc.dump().c_str());
  if (!out_path.empty()) {
    write_text(out_path, doc.dump(1) + "\n");
    std::printf("wrote %s\n", out_path.c_str());
  }
  return kExitOk;
}

int cmd_grad_check(int n, int d_l, int d_m, int m, int k, int t, std::uint64_t seed, double h,
                   double tol, double corrupt) {
  abrnet::ModelConfig model;
  model.n = n;
  model.d_l = d_l;
  model.d_m = d_m;
  model.m = m;
  model.k = k;
  model.t = t;
  abrnet::LossConfig loss;
  const abrnet::GradCheckReport report =
      abrnet::grad_check(model, loss, seed, h, tol, corrupt);

  for (const auto& entry : report.entries)
    std::printf("%-18s max rel err %.3e\n", entry.tensor.c_str(), entry.max_rel_err);
  std::printf("worst %.3e (tolerance %.1e)\n", report.worst, report.tolerance);
  if (!report.passed) {
    std::printf("FAILED tensors:");
    for (const auto& name : report.failing) std::printf(" %s", name.c_str());
    std::printf("\n");
    return kExitGradCheck;
  }
  std::printf("all gradients match\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-based relation network for multi-label classification"};
  app.set_version_flag("--version", abrnet::kVersion);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset from a spec");
  std::string gen_spec, gen_out, gen_test_out;
  int gen_test_samples = 0;
  gen->add_option("--spec", gen_spec, "spec JSON path")->required();
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--test-out", gen_test_out,
                  "optional held-out CSV drawn with the same feature anchors");
  gen->add_option("--test-samples", gen_test_samples, "held-out sample count");

  // stats
  auto* st = app.add_subcommand("stats", "relation statistics and balance weights");
  std::string st_data, st_out;
  st->add_option("--data", st_data, "dataset CSV path")->required();
  st->add_option("--out", st_out, "output JSON path");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  TrainFlags tf;
  tr->add_option("--config", tf.config_path, "config JSON (or a previous manifest)");
  tr->add_option("--data", tf.data_path, "training CSV path")->required();
  tr->add_option("--out", tf.out_dir, "output directory")->required();
  tr->add_option("--m", tf.m, "relation layers");
  tr->add_option("--k", tf.k, "top-k neighbors (0: ceil(n/2))");
  tr->add_option("--t", tf.t, "retained layers under dropout");
  tr->add_option("--d-m", tf.d_m, "attention projection width");
  tr->add_option("--lambda", tf.lambda, "relation-loss weight");
  auto* ppos = tr->add_option("--p-pos", tf.p_pos, "positive-pair threshold");
  auto* pneg = tr->add_option("--p-neg", tf.p_neg, "negative-pair threshold");
  tr->add_option("--epochs", tf.epochs, "training epochs");
  tr->add_option("--batch-size", tf.batch_size, "mini-batch size");
  tr->add_option("--lr0", tf.lr0, "initial learning rate");
  std::uint64_t tf_seed = 0;
  auto* seed_opt = tr->add_option("--seed", tf_seed, "RNG seed");
  bool drop_on = false, drop_off = false;
  auto* drop_on_opt = tr->add_flag("--dropout", drop_on, "enable relation dropout");
  tr->add_flag("--no-dropout", drop_off, "disable relation dropout")->excludes(drop_on_opt);
  tr->add_option("--fusion", tf.fusion, "attention|avg|concat|score-avg")
      ->check(CLI::IsMember({"attention", "avg", "concat", "score-avg"}));

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out;
  double ev_threshold = 0.5;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON path")->required();
  ev->add_option("--data", ev_data, "dataset CSV path")->required();
  ev->add_option("--out", ev_out, "report JSON path");
  ev->add_option("--threshold", ev_threshold, "decision threshold");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "verify gradients against finite differences");
  int gc_n = 4, gc_dl = 8, gc_dm = 4, gc_m = 4, gc_k = 2, gc_t = 2;
  std::uint64_t gc_seed = 3;
  double gc_h = 1e-5, gc_tol = 1e-4, gc_corrupt = 0.0;
  gc->add_option("--n", gc_n, "units");
  gc->add_option("--d-l", gc_dl, "feature width");
  gc->add_option("--d-m", gc_dm, "projection width");
  gc->add_option("--m", gc_m, "relation layers");
  gc->add_option("--k", gc_k, "top-k neighbors (0: ceil(n/2))");
  gc->add_option("--t", gc_t, "retained layers");
  gc->add_option("--seed", gc_seed, "RNG seed");
  gc->add_option("--step", gc_h, "finite-difference step");
  gc->add_option("--tol", gc_tol, "max relative error");
  gc->add_option("--corrupt", gc_corrupt, "")->group("");  // negative-control hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_spec, gen_out, gen_test_out, gen_test_samples);
    if (st->parsed()) return cmd_stats(st_data, st_out);
    if (tr->parsed()) {
      tf.has_p_pos = ppos->count() > 0;
      tf.has_p_neg = pneg->count() > 0;
      if (seed_opt->count() > 0) tf.seed = tf_seed;
      if (drop_on) tf.dropout = 1;
      if (drop_off) tf.dropout = 0;
      return cmd_train(tf);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_threshold);
    if (gc->parsed())
      return cmd_grad_check(gc_n, gc_dl, gc_dm, gc_m, gc_k, gc_t, gc_seed, gc_h, gc_tol,
                            gc_corrupt);
  } catch (const abrnet::stats_error& e) {
    std::fprintf(stderr, "statistics error: %s\n", e.what());
    return kExitStats;
  } catch (const abrnet::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}
