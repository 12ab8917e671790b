#include "mmfuse/checks.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>

#include "mmfuse/model.hpp"
#include "mmfuse/oracles.hpp"
#include "mmfuse/trainer.hpp"

namespace mmfuse {

using namespace ad;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

Matrix random_logprobs(int T, int V, std::mt19937_64& rng) {
  Tape t;
  return t.val(log_softmax_rows(t.constant(random_matrix(T, V, rng, 1.5))));
}

}  // namespace

CheckResult check_ctc_oracle_agreement(int instances, int max_frames, int max_target_len,
                                       int max_vocab, double tolerance, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "ctc-dp-vs-enumeration";
  r.threshold = tolerance;
  std::mt19937_64 rng(seed);

  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const int V = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_vocab - 1));
    const int L = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_target_len));
    std::vector<int> target(static_cast<std::size_t>(L));
    for (auto& s : target) s = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(V - 1));
    int repeats = 0;
    for (std::size_t k = 1; k < target.size(); ++k)
      if (target[k] == target[k - 1]) ++repeats;
    const int min_T = L + repeats;
    if (min_T > max_frames) {
      --i;
      continue;
    }
    const int T = min_T + static_cast<int>(rng() % static_cast<std::uint64_t>(max_frames - min_T + 1));
    const Matrix lp = random_logprobs(T, V, rng);
    const double dp = ctc_loss(lp, target);
    const double brute = ctc_bruteforce(lp.array().exp().matrix(), target);
    worst = std::max(worst, std::abs(dp - brute) / std::max(1.0, std::abs(brute)));
  }
  r.observed = worst;
  r.passed = worst < tolerance;
  r.note = std::to_string(instances) + " instances";
  r.seconds = elapsed(start);
  return r;
}

CheckResult check_contrastive_oracle_agreement(int batches, int max_batch, double tolerance,
                                               std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "contrastive-vs-bruteforce";
  r.threshold = tolerance;
  std::mt19937_64 rng(seed);
  LossConfig cfg;
  cfg.tau = 0.1;

  double worst = 0.0;
  for (int b = 0; b < batches; ++b) {
    const int S = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_batch - 1));
    const int d = 3 + static_cast<int>(rng() % 6);
    const Matrix reps = random_matrix(S, d, rng);
    const Matrix reps_aug = random_matrix(S, d, rng);
    std::vector<int> labels(static_cast<std::size_t>(S));
    for (auto& l : labels) l = static_cast<int>(rng() % 4);

    const double scl_diff = std::abs(scl_loss(reps, labels, cfg) - scl_bruteforce(reps, labels, cfg));
    const double acl_diff = std::abs(acl_loss(reps, reps_aug, cfg) - acl_bruteforce(reps, reps_aug, cfg));
    worst = std::max({worst, scl_diff, acl_diff});
  }

  // Degenerate cases: no positives anywhere and a single-row ACL batch.
  std::mt19937_64 rng2(seed + 1);
  const Matrix pair = random_matrix(2, 4, rng2);
  worst = std::max(worst, std::abs(scl_loss(pair, {0, 1}, cfg)));
  const Matrix single = random_matrix(1, 4, rng2);
  worst = std::max(worst, std::abs(acl_loss(single, single, cfg)));

  r.observed = worst;
  r.passed = worst < tolerance;
  r.note = std::to_string(batches) + " batches + degenerates";
  r.seconds = elapsed(start);
  return r;
}

CheckResult check_full_gradient(int d, double tolerance, bool corrupt_gradient, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = corrupt_gradient ? "gradient-fd (negative control)" : "gradient-fd-full-forward";
  r.threshold = tolerance;

  GeneratorConfig g;
  g.n_utterances = 8;
  g.n_sessions = 2;
  g.n_speakers = 2;
  g.d_a = 4;
  g.seed = seed;
  g.min_tokens = 2;
  g.max_tokens = 2;
  g.frames_per_char = 2;
  auto [dataset, info] = generate_synthetic_dataset(g);

  ModelConfig mc;
  mc.d = d;
  mc.d_a = g.d_a;
  mc.heads = 2;
  mc.s_layers = 1;
  mc.t_layers = 1;
  mc.conv_kernel = 3;
  mc.conv_stride = 2;
  mc.vocab_tokens = static_cast<int>(info.lexicon.size());
  mc.charset = generator_charset();
  mc.dropout = 0.0;
  mc.seed = seed + 1;
  Model model = make_model(mc);

  LossConfig loss;
  loss.alpha = loss.beta = loss.gamma = 0.1;

  // A 3-sample batch with jittered copies standing in for the second view.
  const std::vector<int> batch{0, 1, 2};
  std::vector<Utterance> views;
  {
    std::mt19937_64 vrng(seed + 2);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int idx : batch) {
      Utterance v = dataset.utterances[static_cast<std::size_t>(idx)];
      for (Eigen::Index i = 0; i < v.speech.rows(); ++i)
        for (Eigen::Index j = 0; j < v.speech.cols(); ++j) v.speech(i, j) += static_cast<float>(jitter(vrng));
      views.push_back(std::move(v));
    }
  }

  auto f = [&] {
    Tape t;
    ForwardOptions opt;
    opt.want_ctc = true;
    std::vector<Var> logits_rows, pooled_rows, pooled_aug_rows;
    std::vector<int> labels;
    Var ctc_sum{};
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const Utterance& u = dataset.utterances[static_cast<std::size_t>(batch[k])];
      ForwardNodes fn = model_forward(t, model, u, opt);
      logits_rows.push_back(fn.logits);
      pooled_rows.push_back(fn.fusion.pooled);
      labels.push_back(map_label(u.raw_label));
      Var c = ctc_loss_node(fn.ctc_logprobs, transcript_to_target(u.transcript, mc.charset));
      ctc_sum = (k == 0) ? c : add(ctc_sum, c);

      ForwardOptions aug_opt;
      aug_opt.want_ctc = false;
      pooled_aug_rows.push_back(model_forward(t, model, views[k], aug_opt).fusion.pooled);
    }
    Var ce = nll_rows(log_softmax_rows(concat_rows(logits_rows)), labels);
    Var ctc = scale(ctc_sum, 1.0 / static_cast<double>(batch.size()));
    Var scl = scl_loss_node(t, concat_rows(pooled_rows), labels, loss);
    Var acl = acl_loss_node(t, concat_rows(pooled_rows), concat_rows(pooled_aug_rows), loss);
    Var total = add(add(ce, scale(ctc, loss.alpha)), add(scale(scl, loss.beta), scale(acl, loss.gamma)));
    t.backward(total);
    if (corrupt_gradient) model.ctc_head.w.g *= 2.0;
    return t.val(total)(0, 0);
  };

  const GradCheckReport report = finite_diff_check(f, model.parameters(), 1e-5, tolerance, 0, seed);
  r.observed = report.worst();
  r.passed = corrupt_gradient ? !report.passed() : report.passed();
  r.note = corrupt_gradient ? ("flagged tensor: " + report.worst_tensor())
                            : ("worst tensor: " + report.worst_tensor());
  r.seconds = elapsed(start);
  return r;
}

CheckResult check_structural_invariants(int passes, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r;
  r.name = "structural-invariants";
  r.threshold = 0.5;  // violations must stay at zero
  std::mt19937_64 rng(seed);

  int violations = 0;
  Model model;
  ModelConfig mc;
  for (int p = 0; p < passes; ++p) {
    if (p % 100 == 0) {
      const int pick = static_cast<int>(rng() % 3);
      mc = ModelConfig{};
      mc.d = pick == 0 ? 4 : (pick == 1 ? 8 : 6);
      mc.heads = pick == 2 ? 3 : 2;
      mc.d_a = 4;
      mc.s_layers = 1;
      mc.t_layers = 1;
      mc.conv_kernel = 3;
      mc.conv_stride = 2;
      mc.vocab_tokens = 12;
      mc.charset = "ABC ";
      mc.dropout = 0.0;
      mc.seed = seed + static_cast<std::uint64_t>(p);
      model = make_model(mc);
    }

    Utterance u;
    u.id = "chk";
    const int J = mc.conv_stride + static_cast<int>(rng() % 38);
    u.speech = random_matrix(J, mc.d_a, rng).cast<float>();
    const int M = 1 + static_cast<int>(rng() % 6);
    u.tokens.resize(static_cast<std::size_t>(M));
    for (auto& tok : u.tokens) tok = static_cast<int>(rng() % static_cast<std::uint64_t>(mc.vocab_tokens));
    u.transcript = "AB";
    u.raw_label = RawLabel::Happy;
    u.session_id = 1;

    Tape t;
    std::vector<Matrix> attn;
    ForwardOptions opt;
    opt.attention_probs = &attn;
    opt.want_ctc = false;
    const ForwardNodes f = model_forward(t, model, u, opt);

    const int Jp = downsampled_len(J, mc.conv_stride);
    if (t.val(f.fusion.P).rows() != Jp || t.val(f.fusion.P).cols() != mc.d) ++violations;
    if (t.val(f.fusion.R).rows() != M || t.val(f.fusion.R).cols() != mc.d) ++violations;
    if (t.val(f.fusion.q_raw).rows() != M) ++violations;
    if (t.val(f.fusion.fused).rows() != M || t.val(f.fusion.fused).cols() != mc.d) ++violations;
    if (t.val(f.fusion.pooled).cols() != 2 * mc.d) ++violations;

    for (const Matrix& pr : attn)
      for (Eigen::Index i = 0; i < pr.rows(); ++i) {
        if (pr.row(i).minCoeff() < 0.0) ++violations;
        if (std::abs(pr.row(i).sum() - 1.0) > 1e-6) ++violations;
      }

    const Matrix& gate = t.val(f.fusion.gate);
    if (!(gate.array() > 0.0).all() || !(gate.array() < 1.0).all()) ++violations;

    Tape t2;
    const Matrix probs = t2.val(softmax_rows(t2.constant(t.val(f.logits))));
    if (std::abs(probs.row(0).sum() - 1.0) > 1e-6) ++violations;
    if (probs.row(0).minCoeff() <= 0.0) ++violations;
  }

  r.observed = violations;
  r.passed = violations == 0;
  r.note = std::to_string(passes) + " randomized forwards";
  r.seconds = elapsed(start);
  return r;
}

std::vector<CheckResult> run_check_suite(const std::string& level, bool negative_control) {
  if (level != "fast" && level != "full") throw ConfigError("check: level must be fast or full");
  const bool full = level == "full";

  std::vector<CheckResult> results;
  results.push_back(full ? check_ctc_oracle_agreement(200, 8, 4, 5, 1e-8, 101)
                         : check_ctc_oracle_agreement(60, 6, 3, 4, 1e-8, 101));
  results.push_back(full ? check_contrastive_oracle_agreement(100, 16, 1e-10, 202)
                         : check_contrastive_oracle_agreement(50, 12, 1e-10, 202));
  results.push_back(check_full_gradient(full ? 6 : 4, 1e-4, negative_control, 303));
  results.push_back(check_structural_invariants(full ? 1000 : 200, 404));
  return results;
}

void print_check_table(const std::vector<CheckResult>& results, std::ostream& os) {
  os << std::left << std::setw(36) << "check" << std::setw(8) << "status" << std::setw(14) << "observed"
     << std::setw(14) << "threshold" << std::setw(10) << "seconds" << "note\n";
  for (const auto& r : results) {
    os << std::left << std::setw(36) << r.name << std::setw(8) << (r.passed ? "PASS" : "FAIL")
       << std::setw(14) << std::setprecision(3) << std::scientific << r.observed << std::setw(14)
       << r.threshold << std::setw(10) << std::fixed << std::setprecision(2) << r.seconds << r.note
       << "\n";
    os.unsetf(std::ios::floatfield);
  }
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace mmfuse
