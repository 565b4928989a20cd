#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

std::string cli_binary() {
  const char* bin = std::getenv("ABRNET_CLI");
  REQUIRE_MESSAGE(bin != nullptr, "ABRNET_CLI must point at the abrnet binary");
  return bin;
}

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  const std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + cli_binary() + " " +
                          args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, got);
  const int rc = pclose(pipe);
  result.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  return result;
}

// fresh scratch directory per test-file run
const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = "/tmp/abrnet_cli_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = work_dir() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  return lines;
}

// shared fixture: a small dataset most train/eval tests reuse
const fs::path& toy_csv() {
  static const fs::path path = [] {
    const fs::path spec = work_dir() / "toy_spec.json";
    write_file(spec, R"({"n": 2, "d_l": 8, "samples": 120, "seed": 5, "noise": 0.3,
                         "clusters": [{"rates": [0.45, 0.55]}]})");
    const fs::path csv = work_dir() / "toy.csv";
    const CliResult r =
        run_cli("gen-data --spec " + spec.string() + " --out " + csv.string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    return csv;
  }();
  return path;
}

std::string train_toy(const fs::path& out_dir, const std::string& extra = "",
                      const std::string& env_prefix = "") {
  std::string args = "train --data " + toy_csv().string() + " --out " + out_dir.string() +
                     " --d-m 4 --m 2 --t 1 " + extra;
  if (extra.find("--epochs") == std::string::npos) args += " --epochs 2";
  const CliResult r = run_cli(args, env_prefix);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  return r.output;
}

}  // namespace

TEST_CASE("cli: no arguments prints usage and fails as an input error") {
  const CliResult r = run_cli("");
  CHECK(r.code == 2);
  const CliResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.output.find("gen-data") != std::string::npos);
  CHECK(help.output.find("grad-check") != std::string::npos);
}

TEST_CASE("cli: gen-data") {
  SUBCASE("writes header plus one row per sample") {
    const fs::path spec = work_dir() / "gen_spec.json";
    write_file(spec, R"({"n": 3, "d_l": 4, "samples": 50, "seed": 7,
                         "clusters": [{}]})");
    const fs::path out = work_dir() / "gen_out.csv";
    const CliResult r = run_cli("gen-data --spec " + spec.string() + " --out " + out.string());
    CHECK(r.code == 0);
    const std::string text = read_file(out);
    CHECK(count_lines(text) == 51);
    CHECK(text.rfind("sample_id,cluster,", 0) == 0);
    CHECK(r.output.find("empirical rates") != std::string::npos);
  }
  SUBCASE("identical spec and seed give identical bytes") {
    const fs::path spec = work_dir() / "gen_spec2.json";
    write_file(spec, R"({"n": 2, "d_l": 5, "samples": 30, "seed": 11, "clusters": [{}]})");
    const fs::path a = work_dir() / "gen_a.csv";
    const fs::path b = work_dir() / "gen_b.csv";
    REQUIRE(run_cli("gen-data --spec " + spec.string() + " --out " + a.string()).code == 0);
    REQUIRE(run_cli("gen-data --spec " + spec.string() + " --out " + b.string()).code == 0);
    CHECK(read_file(a) == read_file(b));
  }
  SUBCASE("held-out split extends the training draw") {
    const fs::path spec = work_dir() / "gen_spec3.json";
    write_file(spec, R"({"n": 2, "d_l": 4, "samples": 40, "seed": 13, "clusters": [{}]})");
    const fs::path train_csv = work_dir() / "gen_train.csv";
    const fs::path test_csv = work_dir() / "gen_test.csv";
    const CliResult r = run_cli("gen-data --spec " + spec.string() + " --out " +
                                train_csv.string() + " --test-out " + test_csv.string() +
                                " --test-samples 10");
    CHECK(r.code == 0);
    CHECK(count_lines(read_file(train_csv)) == 41);
    CHECK(count_lines(read_file(test_csv)) == 11);
  }
  SUBCASE("a non-PSD correlation is refused with the repaired matrix") {
    const fs::path spec = work_dir() / "gen_bad_corr.json";
    write_file(spec, R"({"n": 3, "d_l": 4, "samples": 10, "seed": 1, "clusters": [
      {"correlation": [[1.0, 0.95, -0.95], [0.95, 1.0, 0.95], [-0.95, 0.95, 1.0]]}]})");
    const CliResult r =
        run_cli("gen-data --spec " + spec.string() + " --out " + (work_dir() / "x.csv").string());
    CHECK(r.code == 2);
    CHECK(r.output.find("not positive semidefinite") != std::string::npos);
    CHECK(r.output.find("nearest PSD") != std::string::npos);
  }
  SUBCASE("malformed specs name the field") {
    const fs::path spec = work_dir() / "gen_bad_field.json";
    write_file(spec, R"({"n": 2, "d_l": 4, "seed": 1, "clusters": [{}]})");
    const CliResult r =
        run_cli("gen-data --spec " + spec.string() + " --out " + (work_dir() / "x.csv").string());
    CHECK(r.code == 2);
    CHECK(r.output.find("samples") != std::string::npos);

    write_file(spec, R"({"n": 2, "d_l": 4, "samples": 5, "seed": 1, "clusters": [{}],
                         "noize": 0.5})");
    const CliResult r2 =
        run_cli("gen-data --spec " + spec.string() + " --out " + (work_dir() / "x.csv").string());
    CHECK(r2.code == 2);
    CHECK(r2.output.find("noize") != std::string::npos);
  }
  SUBCASE("a missing spec file is an input error") {
    const CliResult r = run_cli("gen-data --spec /tmp/abrnet_no_such_spec.json --out " +
                                (work_dir() / "x.csv").string());
    CHECK(r.code == 2);
  }
}

TEST_CASE("cli: stats") {
  SUBCASE("a hand-written table yields the exact implication score") {
    // unit 1 always carries unit 2 -> a(1,2) = 1
    const fs::path csv = work_dir() / "stats_hand.csv";
    write_file(csv,
               "sample_id,cluster,label_1,label_2,f_1_1,f_2_1\n"
               "0,0,1,1,0.5,0.5\n"
               "1,0,1,1,0.5,0.5\n"
               "2,0,0,1,0.5,0.5\n"
               "3,0,0,0,0.5,0.5\n");
    const fs::path out = work_dir() / "stats_hand.json";
    const CliResult r = run_cli("stats --data " + csv.string() + " --out " + out.string());
    CHECK(r.code == 0);
    const nlohmann::json doc = nlohmann::json::parse(read_file(out));
    REQUIRE(doc.contains("r"));
    REQUIRE(doc.contains("a"));
    REQUIRE(doc.contains("rates"));
    REQUIRE(doc.contains("weights"));
    CHECK(doc.size() == 4);
    CHECK(doc["a"][0][1].get<double>() == 1.0);
    CHECK(doc["r"][0][1].get<double>() == 0.25);
    CHECK(doc["rates"][0].get<double>() == 0.5);
    const double w0 = doc["weights"][0].get<double>();
    const double w1 = doc["weights"][1].get<double>();
    CHECK(w0 + w1 == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("independent units stay near zero at scale") {
    const fs::path spec = work_dir() / "stats_indep_spec.json";
    write_file(spec, R"({"n": 3, "d_l": 2, "samples": 10000, "seed": 19, "clusters": [{}]})");
    const fs::path csv = work_dir() / "stats_indep.csv";
    REQUIRE(run_cli("gen-data --spec " + spec.string() + " --out " + csv.string()).code == 0);
    const fs::path out = work_dir() / "stats_indep.json";
    REQUIRE(run_cli("stats --data " + csv.string() + " --out " + out.string()).code == 0);
    const nlohmann::json doc = nlohmann::json::parse(read_file(out));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        // lift stays near zero; the association score collapses to either ~0
        // (no lift) or the bare conditional ~P(y_j) when the lift drifts positive
        const double r = doc["r"][i][j].get<double>();
        const double a = doc["a"][i][j].get<double>();
        CHECK(std::abs(r) < 0.05);
        const double rate_j = doc["rates"][j].get<double>();
        CHECK((r > 0.0 ? std::abs(a - rate_j) : std::abs(a)) < 0.1);
      }
  }
  SUBCASE("a unit that never occurs is a statistics error") {
    const fs::path csv = work_dir() / "stats_zero.csv";
    write_file(csv,
               "sample_id,cluster,label_1,label_2,f_1_1,f_2_1\n"
               "0,0,1,0,0.5,0.5\n"
               "1,0,1,0,0.5,0.5\n");
    const CliResult r = run_cli("stats --data " + csv.string());
    CHECK(r.code == 3);
    CHECK(r.output.find("unit 2") != std::string::npos);
  }
  SUBCASE("an empty file is an input error") {
    const fs::path csv = work_dir() / "stats_empty.csv";
    write_file(csv, "");
    CHECK(run_cli("stats --data " + csv.string()).code == 2);
  }
}

TEST_CASE("cli: train") {
  SUBCASE("a run produces all four artifacts and per-epoch summaries") {
    const fs::path out = fresh_dir("train_basic");
    const std::string output = train_toy(out);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "trace.csv"));
    CHECK(fs::exists(out / "stats.json"));
    CHECK(fs::exists(out / "checkpoint.json"));
    CHECK_FALSE(fs::exists(out / ".lock"));  // released on exit
    CHECK(output.find("epoch 0:") != std::string::npos);
    CHECK(output.find("epoch 1:") != std::string::npos);

    // the manifest records the resolved configuration
    const nlohmann::json manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
    CHECK(manifest["format"] == "abrnet-manifest");
    CHECK(manifest["config"]["model"]["n"] == 2);
    CHECK(manifest["config"]["model"]["d_l"] == 8);
    CHECK(manifest["config"]["epochs"] == 2);
  }
  SUBCASE("the trace follows the learning-rate schedule") {
    const fs::path out = fresh_dir("train_trace");
    train_toy(out, "--epochs 3");
    std::istringstream in(read_file(out / "trace.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,batch,l_cross,l_aur,l_total,lr");
    while (std::getline(in, line)) {
      const size_t last = line.rfind(',');
      const std::string lr = line.substr(last + 1);
      if (line.rfind("2,", 0) == 0)
        CHECK(lr == "0.005");
      else
        CHECK(lr == "0.01");
    }
  }
  SUBCASE("lambda zero writes a trace whose totals equal the cross entropy") {
    const fs::path out = fresh_dir("train_lambda0");
    train_toy(out, "--lambda 0");
    std::istringstream in(read_file(out / "trace.csv"));
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
      // columns: epoch,batch,l_cross,l_aur,l_total,lr
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cols.push_back(cell);
      REQUIRE(cols.size() == 6);
      CHECK(cols[2] == cols[4]);
      ++rows;
    }
    CHECK(rows > 0);
  }
  SUBCASE("no relation layers disables dropout with a warning") {
    const fs::path out = fresh_dir("train_m0");
    const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " +
                                out.string() + " --epochs 1 --m 0");
    CHECK(r.code == 0);
    CHECK(r.output.find("dropout disabled") != std::string::npos);
    CHECK(read_file(out / "checkpoint.json").find("wq[0]") == std::string::npos);
  }
  SUBCASE("single-threaded runs are bitwise reproducible") {
    const fs::path a = fresh_dir("train_det_a");
    const fs::path b = fresh_dir("train_det_b");
    train_toy(a, "--seed 3", "ABRNET_THREADS=1");
    train_toy(b, "--seed 3", "ABRNET_THREADS=1");
    CHECK(read_file(a / "checkpoint.json") == read_file(b / "checkpoint.json"));
    CHECK(read_file(a / "trace.csv") == read_file(b / "trace.csv"));
    CHECK(read_file(a / "stats.json") == read_file(b / "stats.json"));
  }
  SUBCASE("the parallel path reproduces the serial arithmetic") {
    const fs::path a = fresh_dir("train_par_a");
    const fs::path b = fresh_dir("train_par_b");
    train_toy(a, "--seed 6", "ABRNET_THREADS=1");
    train_toy(b, "--seed 6", "ABRNET_THREADS=4");
    CHECK(read_file(a / "checkpoint.json") == read_file(b / "checkpoint.json"));
    CHECK(read_file(a / "trace.csv") == read_file(b / "trace.csv"));
  }
  SUBCASE("a manifest can be replayed as the config") {
    const fs::path a = fresh_dir("train_replay_a");
    const fs::path b = fresh_dir("train_replay_b");
    train_toy(a, "--seed 9", "ABRNET_THREADS=1");
    const CliResult r = run_cli("train --config " + (a / "manifest.json").string() +
                                    " --data " + toy_csv().string() + " --out " + b.string(),
                                "ABRNET_THREADS=1");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(read_file(a / "checkpoint.json") == read_file(b / "checkpoint.json"));
    CHECK(read_file(a / "trace.csv") == read_file(b / "trace.csv"));
  }
  SUBCASE("a diverging run exits with the divergence code but keeps artifacts") {
    const fs::path out = fresh_dir("train_diverge");
    const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " +
                                out.string() + " --epochs 2 --d-m 4 --m 2 --t 1 --lr0 1e308");
    CHECK(r.code == 4);
    CHECK(r.output.find("diverged") != std::string::npos);
    CHECK(fs::exists(out / "checkpoint.json"));
    CHECK(fs::exists(out / "trace.csv"));
  }
  SUBCASE("a locked output directory is refused") {
    const fs::path out = fresh_dir("train_locked");
    write_file(out / ".lock", "");
    const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " +
                                out.string() + " --epochs 1");
    CHECK(r.code == 2);
    CHECK(r.output.find("locked") != std::string::npos);
  }
  SUBCASE("alternative fusion heads train but exclude relation dropout") {
    for (const std::string fusion : {"avg", "concat", "score-avg"}) {
      const fs::path out = fresh_dir("train_fusion_" + fusion);
      const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " +
                                  out.string() + " --epochs 1 --d-m 4 --m 2 --fusion " + fusion);
      const std::string context = fusion + ": " + r.output;
      CHECK_MESSAGE(r.code == 0, context);
      CHECK(r.output.find("attention fusion only") != std::string::npos);
      CHECK(fs::exists(out / "checkpoint.json"));
    }
  }
  SUBCASE("an unknown fusion name is rejected by the parser") {
    const fs::path out = fresh_dir("train_bad_fusion");
    const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " +
                                out.string() + " --fusion mean");
    CHECK(r.code == 2);
  }
  SUBCASE("a bad thread override fails before any work") {
    const fs::path out = fresh_dir("train_bad_threads");
    const CliResult r = run_cli("train --data " + toy_csv().string() + " --out " + out.string(),
                                "ABRNET_THREADS=abc");
    CHECK(r.code == 2);
    CHECK(r.output.find("ABRNET_THREADS") != std::string::npos);
  }
}

TEST_CASE("cli: eval") {
  // train one small model for all eval subcases
  static const fs::path run_dir = [] {
    const fs::path d = fresh_dir("eval_model");
    train_toy(d, "--seed 14");
    return d;
  }();
  const std::string ckpt = (run_dir / "checkpoint.json").string();

  SUBCASE("reports a table, a JSON line and an optional file") {
    const fs::path out = work_dir() / "eval_report.json";
    const CliResult r = run_cli("eval --checkpoint " + ckpt + " --data " +
                                toy_csv().string() + " --out " + out.string());
    CHECK(r.code == 0);
    CHECK(r.output.find("unit") != std::string::npos);
    CHECK(r.output.find("avg") != std::string::npos);
    const nlohmann::json doc = nlohmann::json::parse(read_file(out));
    const double avg = doc["avg_f1"].get<double>();
    CHECK(avg >= 0.0);
    CHECK(avg <= 1.0);
    CHECK(doc["samples"].get<int>() == 120);
    CHECK(doc["tp"].size() == 2);
  }
  SUBCASE("evaluation is deterministic") {
    const CliResult a = run_cli("eval --checkpoint " + ckpt + " --data " + toy_csv().string());
    const CliResult b = run_cli("eval --checkpoint " + ckpt + " --data " + toy_csv().string());
    CHECK(a.code == 0);
    CHECK(a.output == b.output);
  }
  SUBCASE("a dataset with the wrong width is refused") {
    const fs::path spec = work_dir() / "eval_wrong_spec.json";
    write_file(spec, R"({"n": 2, "d_l": 4, "samples": 10, "seed": 2, "clusters": [{}]})");
    const fs::path csv = work_dir() / "eval_wrong.csv";
    REQUIRE(run_cli("gen-data --spec " + spec.string() + " --out " + csv.string()).code == 0);
    const CliResult r = run_cli("eval --checkpoint " + ckpt + " --data " + csv.string());
    CHECK(r.code == 2);
  }
  SUBCASE("a missing checkpoint is an input error") {
    const CliResult r =
        run_cli("eval --checkpoint /tmp/abrnet_nope.json --data " + toy_csv().string());
    CHECK(r.code == 2);
  }
}

TEST_CASE("cli: grad-check") {
  SUBCASE("the default configuration passes within tolerance") {
    const CliResult r = run_cli("grad-check");
    CHECK_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("all gradients match") != std::string::npos);
    CHECK(r.output.find("wq[0]") != std::string::npos);
    CHECK(r.output.find("q0") != std::string::npos);
  }
  SUBCASE("an injected gradient corruption is detected and named") {
    const CliResult r = run_cli("grad-check --corrupt 1.0");
    CHECK(r.code == 5);
    CHECK(r.output.find("FAILED tensors:") != std::string::npos);
    CHECK(r.output.find("wq[0]") != std::string::npos);
  }
  SUBCASE("without relation layers only the gate and heads are checked") {
    const CliResult r = run_cli("grad-check --m 0 --k 2");
    CHECK_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("wq") == std::string::npos);
    CHECK(r.output.find("q0") != std::string::npos);
  }
  SUBCASE("a bad step size is an input error") {
    CHECK(run_cli("grad-check --step 0").code == 2);
  }
}
