#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmfuse/losses.hpp"
#include "mmfuse/oracles.hpp"
#include "test_util.hpp"

using namespace mmfuse;
using namespace mmfuse::testutil;

namespace {

Matrix random_logprobs(int T, int V, std::mt19937_64& rng) {
  ad::Tape t;
  return t.val(ad::log_softmax_rows(t.constant(random_matrix(T, V, rng))));
}

std::vector<int> random_target(int L, int V, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> sym(1, V - 1);
  std::vector<int> target(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) target[static_cast<std::size_t>(i)] = sym(rng);
  return target;
}

Matrix random_unit_rows(int n, int d, std::mt19937_64& rng) {
  Matrix m = random_matrix(n, d, rng);
  for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

}  // namespace

TEST_CASE("classifier probabilities: uniform, biased, simplex") {
  const int d = 4;
  ClassifierParams zero{Param(Matrix::Zero(2 * d, 4), "w"), Param(Matrix::Zero(1, 4), "b")};
  std::mt19937_64 rng(50);
  const Matrix A = random_matrix(5, d, rng);
  const Matrix fused = random_matrix(3, d, rng);

  const Eigen::Vector4d uniform = classify(zero, A, fused);
  for (int i = 0; i < 4; ++i) CHECK(uniform(i) == doctest::Approx(0.25).epsilon(1e-12));

  ClassifierParams biased{Param(Matrix::Zero(2 * d, 4), "w"), Param(Matrix::Zero(1, 4), "b")};
  biased.b.v(0, 0) = 10.0;
  const Eigen::Vector4d skew = classify(biased, A, fused);
  CHECK(skew(0) == doctest::Approx(0.99986).epsilon(1e-4));

  ClassifierParams randp{random_param(2 * d, 4, rng, "w"), random_param(1, 4, rng, "b")};
  const Eigen::Vector4d y = classify(randp, A, fused);
  CHECK(y.sum() == doctest::Approx(1.0).epsilon(1e-9));
  for (int i = 0; i < 4; ++i) CHECK(y(i) > 0.0);
}

TEST_CASE("cross entropy frozen values") {
  const Eigen::Vector4d uniform(0.25, 0.25, 0.25, 0.25);
  CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  const Eigen::Vector4d perfect(0.0, 1.0, 0.0, 0.0);
  CHECK(cross_entropy(perfect, 1) == doctest::Approx(0.0));
  const Eigen::Vector4d skewed(0.7, 0.1, 0.1, 0.1);
  CHECK(cross_entropy(skewed, 0) == doctest::Approx(0.356675).epsilon(1e-5));
}

TEST_CASE("ctc head produces normalized log-probabilities") {
  const int d = 3, V = 5;
  CtcHeadParams zero{Param(Matrix::Zero(d, V), "w"), Param(Matrix::Zero(1, V), "b"), "ABCD"};
  std::mt19937_64 rng(51);
  const Matrix A = random_matrix(4, d, rng);
  const Matrix lp = ctc_log_probs(zero, A);
  for (int i = 0; i < lp.rows(); ++i)
    for (int j = 0; j < V; ++j) CHECK(lp(i, j) == doctest::Approx(std::log(0.2)).epsilon(1e-12));

  CtcHeadParams randp{random_param(d, V, rng, "w"), random_param(1, V, rng, "b"), "ABCD"};
  const Matrix lp2 = ctc_log_probs(randp, A);
  for (int i = 0; i < lp2.rows(); ++i)
    CHECK(lp2.row(i).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-9));

  // Hand-set 1 x d instance against direct arithmetic, V = 2.
  CtcHeadParams tiny{Param(Matrix::Zero(d, 2), "w"), Param(Matrix::Zero(1, 2), "b"), "A"};
  tiny.w.v << 1.0, -1.0, 0.5, 0.25, -0.75, 2.0;
  tiny.b.v << 0.1, -0.2;
  Matrix a1(1, d);
  a1 << 0.3, -1.2, 0.8;
  const double z0 = a1.row(0).dot(tiny.w.v.col(0)) + 0.1;
  const double z1 = a1.row(0).dot(tiny.w.v.col(1)) - 0.2;
  const double lse = std::max(z0, z1) + std::log1p(std::exp(-std::abs(z0 - z1)));
  const Matrix got = ctc_log_probs(tiny, a1);
  CHECK(got(0, 0) == doctest::Approx(z0 - lse).epsilon(1e-12));
  CHECK(got(0, 1) == doctest::Approx(z1 - lse).epsilon(1e-12));
}

TEST_CASE("ctc loss on single-frame and two-frame uniform instances") {
  Matrix lp1(1, 3);
  lp1.setConstant(std::log(1.0 / 3.0));
  CHECK(ctc_loss(lp1, {1}) == doctest::Approx(std::log(3.0)).epsilon(1e-9));  // 1.0986

  // Two frames, target "A": alignments (A,A), (A,-), (-,A); total 3/9.
  Matrix lp2(2, 3);
  lp2.setConstant(std::log(1.0 / 3.0));
  CHECK(ctc_loss(lp2, {1}) == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("ctc loss agrees with exhaustive enumeration") {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 40; ++trial) {
    const int V = 3 + static_cast<int>(rng() % 3);   // 3..5
    const int L = 1 + static_cast<int>(rng() % 3);   // 1..3
    std::vector<int> target = random_target(L, V, rng);
    int repeats = 0;
    for (std::size_t i = 1; i < target.size(); ++i)
      if (target[i] == target[i - 1]) ++repeats;
    const int T = L + repeats + static_cast<int>(rng() % 3);  // feasible
    const Matrix lp = random_logprobs(T, V, rng);
    const double dp = ctc_loss(lp, target);
    const double brute = ctc_bruteforce(lp.array().exp().matrix(), target);
    CHECK(std::abs(dp - brute) / std::max(1.0, std::abs(brute)) < 1e-10);
  }

  // The spec's J'=4, target "AB" case explicitly.
  const Matrix lp = random_logprobs(4, 3, rng);
  const std::vector<int> ab{1, 2};
  const double dp = ctc_loss(lp, ab);
  const double brute = ctc_bruteforce(lp.array().exp().matrix(), ab);
  CHECK(std::abs(dp - brute) < 1e-10 * std::max(1.0, std::abs(brute)));
}

TEST_CASE("ctc infeasible and vocabulary errors") {
  std::mt19937_64 rng(53);
  Matrix lp = random_logprobs(2, 3, rng);
  CHECK_THROWS_AS(ctc_loss(lp, {1, 2, 1}), InfeasibleError);       // L=3 > T=2
  CHECK_THROWS_AS(ctc_loss(lp, {1, 1}), InfeasibleError);          // repeat needs 3 frames
  CHECK_THROWS_AS(ctc_loss(lp, {3}), VocabError);                  // symbol outside V
  CHECK_THROWS_AS(ctc_loss(lp, {0}), VocabError);                  // blank cannot be a target
}

TEST_CASE("raising a used symbol's frame probability never raises the loss") {
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 20; ++trial) {
    const int V = 4, L = 2, T = 4;
    const std::vector<int> target = random_target(L, V, rng);
    Matrix lp = random_logprobs(T, V, rng);
    const double base = ctc_loss(lp, target);
    const int t = static_cast<int>(rng() % T);
    const int sym = target[rng() % target.size()];
    Matrix bumped = lp;
    bumped(t, sym) += 1e-3;  // directional bump of that symbol's log-probability
    CHECK(ctc_loss(bumped, target) <= base + 1e-12);
  }
}

TEST_CASE("scl degenerate batches") {
  LossConfig cfg;
  std::mt19937_64 rng(55);
  const Matrix two = random_unit_rows(2, 4, rng);
  CHECK(scl_loss(two, {0, 1}, cfg) == 0.0);  // no positives anywhere
  CHECK(scl_loss(two, {2, 2}, cfg) == doctest::Approx(0.0).epsilon(1e-12));  // lone candidate
  CHECK_THROWS_AS(scl_loss(random_unit_rows(1, 4, rng), {0}, cfg), ConfigError);
}

TEST_CASE("scl matches the brute-force oracle") {
  LossConfig cfg;
  cfg.tau = 0.1;
  std::mt19937_64 rng(56);
  const Matrix reps = random_unit_rows(3, 6, rng);
  const std::vector<int> labels{0, 0, 1};
  CHECK(scl_loss(reps, labels, cfg) == doctest::Approx(scl_bruteforce(reps, labels, cfg)).epsilon(1e-10));

  for (int trial = 0; trial < 30; ++trial) {
    const int S = 2 + static_cast<int>(rng() % 10);
    Matrix r = random_matrix(S, 5, rng);
    std::vector<int> l(static_cast<std::size_t>(S));
    for (auto& x : l) x = static_cast<int>(rng() % 4);
    const double a = scl_loss(r, l, cfg);
    const double b = scl_bruteforce(r, l, cfg);
    CHECK(std::abs(a - b) < 1e-10 * std::max(1.0, std::abs(b)));
    CHECK(a >= -1e-12);
  }

  // exclude_self = false keeps the diagonal in both softmax and positives.
  LossConfig incl = cfg;
  incl.exclude_self = false;
  const double a = scl_loss(reps, labels, incl);
  CHECK(a == doctest::Approx(scl_bruteforce(reps, labels, incl)).epsilon(1e-10));
}

TEST_CASE("scl is invariant to simultaneous row and label permutation") {
  LossConfig cfg;
  std::mt19937_64 rng(57);
  const Matrix reps = random_matrix(5, 4, rng);
  const std::vector<int> labels{0, 1, 0, 2, 1};
  const std::vector<int> perm{3, 1, 4, 0, 2};
  Matrix reps_p(5, 4);
  std::vector<int> labels_p(5);
  for (int i = 0; i < 5; ++i) {
    reps_p.row(i) = reps.row(perm[static_cast<std::size_t>(i)]);
    labels_p[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(scl_loss(reps, labels, cfg) == doctest::Approx(scl_loss(reps_p, labels_p, cfg)).epsilon(1e-12));
}

TEST_CASE("acl frozen values and oracle agreement") {
  LossConfig cfg;
  cfg.tau = 0.1;
  std::mt19937_64 rng(58);

  // S=1: softmax over a single candidate.
  CHECK(acl_loss(random_unit_rows(1, 4, rng), random_unit_rows(1, 4, rng) * 0 +
                     Matrix::Ones(1, 4) / 2.0, cfg) == doctest::Approx(0.0));

  // Orthonormal S=2 with reps == reps_aug: loss = ln(1 + e^{-10}).
  Matrix ortho(2, 2);
  ortho << 1.0, 0.0, 0.0, 1.0;
  CHECK(acl_loss(ortho, ortho, cfg) == doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));

  for (int trial = 0; trial < 30; ++trial) {
    const int S = 1 + static_cast<int>(rng() % 8);
    const Matrix r = random_matrix(S, 5, rng);
    const Matrix ra = random_matrix(S, 5, rng);
    const double a = acl_loss(r, ra, cfg);
    const double b = acl_bruteforce(r, ra, cfg);
    CHECK(std::abs(a - b) < 1e-10 * std::max(1.0, std::abs(b)));
    CHECK(a >= 0.0);
  }

  CHECK_THROWS_AS(acl_loss(random_matrix(3, 4, rng), random_matrix(2, 4, rng), cfg), ShapeError);
}

TEST_CASE("acl sharpens toward zero as temperature drops") {
  LossConfig hot, cold;
  hot.tau = 1.0;
  cold.tau = 0.01;
  std::mt19937_64 rng(59);
  const Matrix reps = random_unit_rows(6, 8, rng);
  CHECK(acl_loss(reps, reps, cold) < acl_loss(reps, reps, hot));
}

TEST_CASE("acl is invariant to simultaneous row permutation") {
  LossConfig cfg;
  std::mt19937_64 rng(60);
  const Matrix r = random_matrix(4, 5, rng);
  const Matrix ra = random_matrix(4, 5, rng);
  const std::vector<int> perm{2, 0, 3, 1};
  Matrix rp(4, 5), rap(4, 5);
  for (int i = 0; i < 4; ++i) {
    rp.row(i) = r.row(perm[static_cast<std::size_t>(i)]);
    rap.row(i) = ra.row(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(acl_loss(r, ra, cfg) == doctest::Approx(acl_loss(rp, rap, cfg)).epsilon(1e-12));
}

TEST_CASE("total loss combines components with the configured weights") {
  LossConfig cfg;  // alpha = beta = gamma = 0.1
  CHECK(total_loss(1.0, 2.0, 3.0, 4.0, cfg) == doctest::Approx(1.9).epsilon(1e-12));

  LossConfig ce_only;
  ce_only.alpha = ce_only.beta = ce_only.gamma = 0.0;
  CHECK(total_loss(1.25, 99.0, 99.0, 99.0, ce_only) == doctest::Approx(1.25));

  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 0.0, 0.0, cfg), DivergenceError);
  LossConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(total_loss(1.0, 1.0, 1.0, 1.0, bad), ConfigError);
}

TEST_CASE("loss gradients through the graph match finite differences") {
  std::mt19937_64 rng(61);
  const int d = 3, V = 4;
  Param reps_p(random_matrix(4, d, rng), "reps");
  Param reps_aug_p(random_matrix(4, d, rng), "reps_aug");
  Param logits_p(random_matrix(5, V, rng), "logits");
  const std::vector<int> labels{0, 1, 0, 1};
  const std::vector<int> target{1, 3};
  LossConfig cfg;
  cfg.tau = 0.2;

  auto f = [&] {
    ad::Tape t;
    ad::Var scl = scl_loss_node(t, t.param(reps_p), labels, cfg);
    ad::Var acl = acl_loss_node(t, t.param(reps_p), t.param(reps_aug_p), cfg);
    ad::Var ctc = ad::ctc_loss_node(ad::log_softmax_rows(t.param(logits_p)), target);
    ad::Var total = ad::add(ad::add(ad::scale(scl, 0.5), ad::scale(acl, 0.25)), ad::scale(ctc, 0.1));
    t.backward(total);
    return t.val(total)(0, 0);
  };
  CHECK(max_rel_error(f, {&reps_p, &reps_aug_p, &logits_p}, 1e-5) < 1e-6);
}
