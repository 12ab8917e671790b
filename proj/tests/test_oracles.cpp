#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmfuse/oracles.hpp"
#include "test_util.hpp"

using namespace mmfuse;
using namespace mmfuse::testutil;

TEST_CASE("ctc oracle on the single-alignment case") {
  Matrix probs(1, 3);
  probs.setConstant(1.0 / 3.0);
  CHECK(ctc_bruteforce(probs, {1}) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("ctc oracle signals infeasibility when the target cannot fit") {
  Matrix probs(1, 3);
  probs.setConstant(1.0 / 3.0);
  CHECK_THROWS_AS(ctc_bruteforce(probs, {1, 2}), InfeasibleError);
  CHECK_THROWS_AS(ctc_bruteforce(probs, {0}), VocabError);
}

TEST_CASE("ctc oracle enforces its enumeration bound") {
  Matrix probs(30, 5);
  probs.setConstant(0.2);
  CHECK_THROWS_AS(ctc_bruteforce(probs, {1}), OracleSizeError);
}

TEST_CASE("contrastive oracles handle the degenerate batches") {
  LossConfig cfg;
  std::mt19937_64 rng(70);
  Matrix two = random_matrix(2, 4, rng);
  CHECK(scl_bruteforce(two, {0, 1}, cfg) == 0.0);
  Matrix one = random_matrix(1, 4, rng);
  CHECK(acl_bruteforce(one, one, cfg) == doctest::Approx(0.0));
}

TEST_CASE("finite differences on a quadratic calibration function") {
  Param theta(Matrix::Constant(1, 1, 3.0), "theta");
  auto f = [&] {
    ad::Tape t;
    ad::Var x = t.param(theta);
    ad::Var y = ad::hadamard(x, x);
    t.backward(y);
    return t.val(y)(0, 0);
  };
  const GradCheckReport report = finite_diff_check(f, {&theta}, 1e-3, 1e-4);
  REQUIRE(report.entries.size() == 1);
  CHECK(report.passed());
  CHECK(report.entries[0].max_rel_error < 1e-10);
  // Analytic derivative of theta^2 at 3 is 6.
  CHECK(theta.g.size() == 1);
}

TEST_CASE("a corrupted gradient is flagged with the tensor name") {
  std::mt19937_64 rng(71);
  Param a(random_matrix(2, 2, rng), "fine");
  Param b(random_matrix(2, 2, rng), "corrupted");
  const Matrix w = random_matrix(2, 2, rng);
  auto f = [&] {
    ad::Tape t;
    ad::Var prod = ad::hadamard(t.param(a), t.param(b));
    ad::Var s = ad::sum_weighted(prod, w);
    t.backward(s);
    b.g *= 2.0;  // deliberately corrupt the analytic gradient
    return t.val(s)(0, 0);
  };
  const GradCheckReport report = finite_diff_check(f, {&a, &b}, 1e-5, 1e-4);
  CHECK(!report.passed());
  CHECK(report.worst_tensor() == "corrupted");
  for (const auto& e : report.entries)
    if (e.name == "fine") CHECK(e.max_rel_error < 1e-4);
}

TEST_CASE("coordinate sampling still covers every tensor") {
  std::mt19937_64 rng(72);
  Param big(random_matrix(6, 6, rng), "big");
  const Matrix w = random_matrix(6, 6, rng);
  auto f = [&] {
    ad::Tape t;
    ad::Var s = ad::sum_weighted(ad::gelu(t.param(big)), w);
    t.backward(s);
    return t.val(s)(0, 0);
  };
  const GradCheckReport report = finite_diff_check(f, {&big}, 1e-5, 1e-4, 5);
  REQUIRE(report.entries.size() == 1);
  CHECK(report.entries[0].coords_checked == 5);
  CHECK(report.passed());
}

TEST_CASE("non-finite evaluations abort the check with a location") {
  Param p(Matrix::Constant(1, 1, 1.0), "edge");
  auto f = [&] {
    ad::Tape t;
    ad::Var x = t.param(p);
    t.backward(x);
    return p.v(0, 0) > 1.0 ? std::numeric_limits<double>::quiet_NaN() : p.v(0, 0);
  };
  CHECK_THROWS_AS(finite_diff_check(f, {&p}, 1e-3, 1e-4), NumericError);
}

TEST_CASE("oracle loops agree with themselves under permutation") {
  LossConfig cfg;
  cfg.tau = 0.3;
  std::mt19937_64 rng(73);
  const Matrix reps = random_matrix(5, 4, rng);
  const std::vector<int> labels{0, 1, 1, 2, 0};
  const double base = scl_bruteforce(reps, labels, cfg);
  Matrix perm_reps(5, 4);
  std::vector<int> perm_labels(5);
  const std::vector<int> perm{4, 2, 0, 1, 3};
  for (int i = 0; i < 5; ++i) {
    perm_reps.row(i) = reps.row(perm[static_cast<std::size_t>(i)]);
    perm_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  CHECK(scl_bruteforce(perm_reps, perm_labels, cfg) == doctest::Approx(base).epsilon(1e-12));
}
