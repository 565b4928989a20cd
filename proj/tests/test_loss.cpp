#include <doctest.h>

#include <cmath>
#include <vector>

#include "abrnet/errors.hpp"
#include "abrnet/finite_diff.hpp"
#include "abrnet/loss.hpp"
#include "abrnet/rng.hpp"

using namespace abrnet;

namespace {

BalanceWeights uniform_weights(int n) {
  BalanceWeights w;
  w.rates.assign(n, 0.5);
  w.w.assign(n, 1.0 / n);
  return w;
}

LabelBatch random_labels(Rng& rng, int samples, int units) {
  // rejection keeps every unit occurring at least once so stats are defined
  for (;;) {
    LabelBatch batch(samples, units);
    std::vector<bool> seen(units, false);
    for (int s = 0; s < samples; ++s)
      for (int u = 0; u < units; ++u) {
        const int v = uniform(rng, 0.0, 1.0) < 0.4 ? 1 : 0;
        batch.set(s, u, v);
        if (v) seen[u] = true;
      }
    bool ok = true;
    for (bool b : seen) ok = ok && b;
    if (ok) return batch;
  }
}

// Independent recount of the relation statistics, written as directly as
// possible: conditional probabilities from scratch per pair.
void brute_force_stats(const LabelBatch& labels, Matrix& r_out, Matrix& a_out) {
  const int n = labels.units();
  const int s = labels.samples();
  r_out = Matrix(n, n);
  a_out = Matrix(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int count_i = 0, count_j = 0, count_ij = 0;
      for (int k = 0; k < s; ++k) {
        count_i += labels.at(k, i);
        count_j += labels.at(k, j);
        count_ij += labels.at(k, i) & labels.at(k, j);
      }
      const double p_j = static_cast<double>(count_j) / s;
      const double cond = static_cast<double>(count_ij) / count_i;
      r_out(i, j) = cond - p_j;
      a_out(i, j) = r_out(i, j) > 0.0 ? cond : cond / p_j - 1.0;
    }
  }
}

}  // namespace

TEST_CASE("balance weights") {
  SUBCASE("rates 0.25/0.75 invert to weights 0.75/0.25 exactly") {
    // unit 0 occurs once in four samples, unit 1 three times
    const LabelBatch labels = LabelBatch::from_rows({{1, 1}, {0, 1}, {0, 1}, {0, 0}});
    const BalanceWeights bw = balance_weights(labels);
    CHECK(bw.rates[0] == 0.25);
    CHECK(bw.rates[1] == 0.75);
    CHECK(bw.w[0] == 0.75);
    CHECK(bw.w[1] == 0.25);
    CHECK(bw.floored.empty());
  }
  SUBCASE("weights always sum to one") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      const int s = 1 + static_cast<int>(uniform(rng, 0.0, 1.0) * 40);
      const int n = 1 + static_cast<int>(uniform(rng, 0.0, 1.0) * 7);
      const BalanceWeights bw = balance_weights(random_labels(rng, s, n));
      double total = 0.0;
      for (double w : bw.w) total += w;
      CHECK(std::abs(total - 1.0) < 1e-12);
      for (double w : bw.w) CHECK(w > 0.0);
    }
  }
  SUBCASE("a never-occurring unit gets the rate floor and is reported") {
    const LabelBatch labels = LabelBatch::from_rows({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
    const BalanceWeights bw = balance_weights(labels);
    CHECK(bw.rates[1] == 1.0 / 8.0);  // 1/(2*samples)
    REQUIRE(bw.floored.size() == 1);
    CHECK(bw.floored[0] == 1);
    CHECK(bw.w[0] + bw.w[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(bw.w[1] > bw.w[0]);  // rarer unit weighs more
  }
  SUBCASE("rarer units always weigh more") {
    const LabelBatch labels =
        LabelBatch::from_rows({{1, 1, 1}, {1, 1, 0}, {1, 0, 0}, {1, 1, 1}, {1, 0, 0}});
    const BalanceWeights bw = balance_weights(labels);
    CHECK(bw.w[0] < bw.w[1]);
    CHECK(bw.w[1] < bw.w[2]);
  }
  SUBCASE("empty batch is rejected") {
    CHECK_THROWS_AS(balance_weights(LabelBatch(0, 3)), error);
  }
}

TEST_CASE("weighted cross entropy") {
  SUBCASE("single unit at phat 0.5 costs ln 2") {
    const double loss = weighted_cross_entropy({0.5}, {1}, uniform_weights(1));
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(weighted_cross_entropy({0.5}, {0}, uniform_weights(1)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("matches the formula term by term") {
    const std::vector<double> phat{0.9, 0.2, 0.6};
    const std::vector<int> p{1, 0, 1};
    BalanceWeights w;
    w.rates = {0.5, 0.25, 0.25};
    w.w = {0.2, 0.3, 0.5};
    const double expected =
        -(0.2 * std::log(0.9) + 0.3 * std::log(0.8) + 0.5 * std::log(0.6));
    CHECK(weighted_cross_entropy(phat, p, w) == doctest::Approx(expected).epsilon(1e-15));
  }
  SUBCASE("clamp keeps saturated predictions finite") {
    const BalanceWeights w = uniform_weights(2);
    const double loss = weighted_cross_entropy({0.0, 1.0}, {1, 0}, w);
    CHECK(std::isfinite(loss));
    // both units are maximally wrong: each contributes -0.5*log(1e-7)
    CHECK(loss == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-9));
    // perfectly right saturation costs nearly nothing
    CHECK(weighted_cross_entropy({1.0, 0.0}, {1, 0}, w) < 1e-6);
  }
  SUBCASE("size mismatch is rejected") {
    CHECK_THROWS_AS(weighted_cross_entropy({0.5, 0.5}, {1}, uniform_weights(2)), dim_error);
    CHECK_THROWS_AS(weighted_cross_entropy({0.5}, {1}, uniform_weights(2)), dim_error);
  }
}

TEST_CASE("relation statistics") {
  SUBCASE("perfect implication gives a = 1") {
    // unit 1 always carries unit 2: P(y2|y1) = 1, P(y2) = 3/4, r = 1/4 > 0
    const LabelBatch labels = LabelBatch::from_rows({{1, 1}, {1, 1}, {0, 1}, {0, 0}});
    const RelationStats st = relation_stats(labels);
    CHECK(st.r_mat(0, 1) == 0.25);
    CHECK(st.a_mat(0, 1) == 1.0);
  }
  SUBCASE("perfect exclusion gives a = -1") {
    // units never co-occur: P(y2|y1) = 0, ratio - 1 = -1
    const LabelBatch labels = LabelBatch::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    const RelationStats st = relation_stats(labels);
    CHECK(st.r_mat(0, 1) == -0.5);
    CHECK(st.a_mat(0, 1) == -1.0);
    CHECK(st.a_mat(1, 0) == -1.0);
  }
  SUBCASE("independent units give r = a = 0") {
    const LabelBatch labels = LabelBatch::from_rows({{1, 1}, {1, 0}, {0, 1}, {0, 0}});
    const RelationStats st = relation_stats(labels);
    CHECK(st.r_mat(0, 1) == 0.0);
    CHECK(st.a_mat(0, 1) == 0.0);
    CHECK(st.r_mat(1, 0) == 0.0);
    CHECK(st.a_mat(1, 0) == 0.0);
  }
  SUBCASE("diagonal is self-implication") {
    const LabelBatch labels = LabelBatch::from_rows({{1, 0}, {0, 1}, {1, 1}});
    const RelationStats st = relation_stats(labels);
    // P(y_i|y_i) = 1 and P(y_i) < 1, so r > 0 and a = 1
    CHECK(st.a_mat(0, 0) == 1.0);
    CHECK(st.a_mat(1, 1) == 1.0);
  }
  SUBCASE("a unit that never occurs is named in the error") {
    const LabelBatch labels = LabelBatch::from_rows({{1, 0, 1}, {1, 0, 0}});
    try {
      relation_stats(labels);
      FAIL("expected stats_error");
    } catch (const stats_error& e) {
      CHECK(std::string(e.what()).find("unit 2") != std::string::npos);
    }
  }
  SUBCASE("matches an independent recount on random tables") {
    Rng rng(22);
    for (int trial = 0; trial < 30; ++trial) {
      const int s = 2 + static_cast<int>(uniform(rng, 0.0, 1.0) * 62);
      const int n = 1 + static_cast<int>(uniform(rng, 0.0, 1.0) * 7);
      const LabelBatch labels = random_labels(rng, s, n);
      const RelationStats st = relation_stats(labels);
      Matrix r_ref, a_ref;
      brute_force_stats(labels, r_ref, a_ref);
      CHECK(max_abs_diff(st.r_mat, r_ref) < 1e-12);
      CHECK(max_abs_diff(st.a_mat, a_ref) < 1e-12);
    }
  }
}

TEST_CASE("pairwise hinge covers every branch") {
  LossConfig cfg;  // p_pos = 0.5, p_neg = -0.7

  // strong positive association
  CHECK(aur_pair_loss(0.8, 0.2, 0.3, 1, 1, cfg) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(aur_pair_loss(0.8, 0.9, 0.8, 1, 1, cfg) == 0.0);  // hinge saturated
  CHECK(aur_pair_loss(0.8, 0.2, 0.3, 1, 0, cfg) == 0.0);
  CHECK(aur_pair_loss(0.8, 0.2, 0.3, 0, 1, cfg) == 0.0);
  CHECK(aur_pair_loss(0.8, 0.2, 0.3, 0, 0, cfg) == 0.0);

  // strong negative association
  CHECK(aur_pair_loss(-0.9, 0.3, 0.4, 1, 0, cfg) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(aur_pair_loss(-0.9, 0.95, 0.01, 1, 0, cfg) == 0.0);  // hinge saturated
  CHECK(aur_pair_loss(-0.9, 0.3, 0.4, 1, 1, cfg) == 0.0);
  CHECK(aur_pair_loss(-0.9, 0.3, 0.4, 0, 1, cfg) == 0.0);
  CHECK(aur_pair_loss(-0.9, 0.3, 0.4, 0, 0, cfg) == 0.0);

  // weak association never activates, labels regardless
  CHECK(aur_pair_loss(0.0, 0.1, 0.1, 1, 1, cfg) == 0.0);
  CHECK(aur_pair_loss(0.0, 0.1, 0.1, 1, 0, cfg) == 0.0);

  // thresholds are strict
  CHECK(aur_pair_loss(0.5, 0.0, 0.0, 1, 1, cfg) == 0.0);
  CHECK(aur_pair_loss(-0.7, 0.0, 1.0, 1, 0, cfg) == 0.0);
}

TEST_CASE("relation penalty over a sample") {
  LossConfig cfg;

  SUBCASE("terms are weighted by the first unit's weight") {
    RelationStats st;
    st.r_mat = Matrix(2, 2);
    st.a_mat = Matrix(2, 2);
    st.a_mat(0, 1) = 0.9;  // only (0,1) activates
    BalanceWeights w;
    w.rates = {0.5, 0.5};
    w.w = {0.7, 0.3};
    const std::vector<double> phat{0.2, 0.3};
    const std::vector<int> p{1, 1};
    // diagonal a's are zero here so only the (0,1) term fires
    const double expected = 0.7 * (2.0 * 0.9 - 0.2 - 0.3);
    CHECK(aur_loss(phat, p, st, w, cfg) == doctest::Approx(expected).epsilon(1e-15));
  }
  SUBCASE("diagonal participates unless excluded") {
    RelationStats st;
    st.r_mat = Matrix(1, 1);
    st.a_mat = Matrix(1, 1);
    st.a_mat(0, 0) = 1.0;
    BalanceWeights w = uniform_weights(1);
    const double with_diag = aur_loss({0.2}, {1}, st, w, cfg);
    CHECK(with_diag == doctest::Approx(2.0 - 0.4).epsilon(1e-15));
    cfg.exclude_diagonal = true;
    CHECK(aur_loss({0.2}, {1}, st, w, cfg) == 0.0);
  }
  SUBCASE("ordered pairs are summed independently") {
    RelationStats st;
    st.r_mat = Matrix(2, 2);
    st.a_mat = Matrix(2, 2);
    st.a_mat(0, 1) = 0.8;
    st.a_mat(1, 0) = -0.95;
    BalanceWeights w;
    w.rates = {0.5, 0.5};
    w.w = {0.5, 0.5};
    // p = (1,1) activates only the positive (0,1) branch
    const std::vector<double> phat{0.1, 0.2};
    const double expected = 0.5 * (1.6 - 0.3);
    CHECK(aur_loss(phat, {1, 1}, st, w, cfg) == doctest::Approx(expected).epsilon(1e-15));
    // p = (0,1): pair (1,0) has p_i=1, p_j=0 and a < p_neg
    const double expected2 = 0.5 * (0.1 - 0.2 + 0.95);
    CHECK(aur_loss(phat, {0, 1}, st, w, cfg) == doctest::Approx(expected2).epsilon(1e-15));
  }
}

TEST_CASE("joint loss composition") {
  Rng rng(23);
  const LabelBatch labels = random_labels(rng, 40, 4);
  const RelationStats st = relation_stats(labels);
  const BalanceWeights w = balance_weights(labels);
  const std::vector<double> phat{0.9, 0.1, 0.4, 0.7};
  const std::vector<int> p{1, 0, 1, 1};

  SUBCASE("lambda 0 reduces to the cross entropy bitwise") {
    LossConfig cfg;
    cfg.lambda = 0.0;
    CHECK(joint_loss(phat, p, st, w, cfg) == weighted_cross_entropy(phat, p, w));
  }
  SUBCASE("lambda scales the penalty linearly") {
    LossConfig cfg;
    const double ce = weighted_cross_entropy(phat, p, w);
    const double pen = aur_loss(phat, p, st, w, cfg);
    CHECK(joint_loss(phat, p, st, w, cfg) == doctest::Approx(ce + 0.1 * pen).epsilon(1e-15));
    cfg.lambda = 0.35;
    CHECK(joint_loss(phat, p, st, w, cfg) ==
          doctest::Approx(ce + 0.35 * pen).epsilon(1e-15));
  }
}

TEST_CASE("tape loss agrees with the plain loss bitwise") {
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(uniform(rng, 0.0, 1.0) * 6);
    const LabelBatch labels = random_labels(rng, 30, n);
    const RelationStats st = relation_stats(labels);
    const BalanceWeights w = balance_weights(labels);
    LossConfig cfg;
    cfg.exclude_diagonal = trial % 2 == 1;

    Matrix phat_col(n, 1);
    std::vector<double> phat(n);
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) {
      phat[i] = 0.02 + 0.96 * uniform(rng, 0.0, 1.0);
      phat_col(i, 0) = phat[i];
      p[i] = uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 0;
    }

    Tape tape;
    const Tape::Id x = tape.leaf(phat_col);
    const LossNodes nodes = joint_loss_tape(tape, x, p, st, w, cfg);
    CHECK(tape.scalar(nodes.cross) == weighted_cross_entropy(phat, p, w));
    CHECK(tape.scalar(nodes.aur) == aur_loss(phat, p, st, w, cfg));
    CHECK(tape.scalar(nodes.joint) == joint_loss(phat, p, st, w, cfg));
  }
}

TEST_CASE("tape loss gradient matches finite differences") {
  // Fixed statistics with comfortable hinge margins so the finite-difference
  // probe never crosses a kink or the probability clamp.
  RelationStats st;
  st.r_mat = Matrix(3, 3);
  st.a_mat = Matrix(3, 3);
  st.a_mat(0, 1) = 0.9;   // active positive branch for p=(1,1,*)
  st.a_mat(1, 0) = 0.8;   // saturated positive branch
  st.a_mat(0, 2) = -0.95; // active negative branch for p=(1,*,0)
  st.a_mat(2, 0) = -0.9;  // inactive: p_2 = 0
  BalanceWeights w;
  w.rates = {0.5, 0.5, 0.5};
  w.w = {0.5, 0.3, 0.2};
  LossConfig cfg;
  const std::vector<int> p{1, 1, 0};
  const Matrix at = Matrix::from_rows({{0.3}, {0.4}, {0.6}});
  // margins: pos(0,1): 1.8-0.7 = 1.1 active; pos(1,0): 1.6-0.7 active too;
  // neg(0,2): 0.6-0.3+0.95 active. all |args| >> fd step.

  Tape tape;
  const Tape::Id x = tape.leaf(at);
  const LossNodes nodes = joint_loss_tape(tape, x, p, st, w, cfg);
  tape.backward(nodes.joint);

  const Matrix numeric = finite_diff_grad(
      [&](const Matrix& probe) {
        std::vector<double> ph(3);
        for (int i = 0; i < 3; ++i) ph[i] = probe(i, 0);
        return joint_loss(ph, p, st, w, cfg);
      },
      at);
  for (int i = 0; i < 3; ++i)
    CHECK(tape.grad(x)(i, 0) == doctest::Approx(numeric(i, 0)).epsilon(1e-7));
}

TEST_CASE("active hinges push probabilities the right way") {
  RelationStats st;
  st.r_mat = Matrix(2, 2);
  st.a_mat = Matrix(2, 2);
  st.a_mat(0, 1) = 0.9;
  const BalanceWeights w = uniform_weights(2);
  LossConfig cfg;
  cfg.exclude_diagonal = true;

  // raising either probability cannot increase the active positive hinge
  double prev = aur_loss({0.1, 0.1}, {1, 1}, st, w, cfg);
  for (double q = 0.2; q < 0.95; q += 0.1) {
    const double cur = aur_loss({q, 0.1}, {1, 1}, st, w, cfg);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}
