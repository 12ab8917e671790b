#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmfuse/trainer.hpp"
#include "test_util.hpp"

using namespace mmfuse;

namespace {

struct Fixture {
  Dataset dataset;
  SyntheticInfo info;
  ModelConfig model_cfg;
  AugmentContext aug;
};

Fixture small_fixture(int n_utts = 32, int sessions = 2, std::uint64_t seed = 11) {
  Fixture f;
  GeneratorConfig g;
  g.n_utterances = n_utts;
  g.n_sessions = sessions;
  g.n_speakers = 4;
  g.d_a = 8;
  g.seed = seed;
  g.min_tokens = 3;
  g.max_tokens = 4;
  auto [d, info] = generate_synthetic_dataset(g);
  f.dataset = std::move(d);
  f.info = std::move(info);

  f.model_cfg.d = 8;
  f.model_cfg.d_a = 8;
  f.model_cfg.heads = 2;
  f.model_cfg.s_layers = 1;
  f.model_cfg.t_layers = 0;
  f.model_cfg.conv_kernel = 3;
  f.model_cfg.conv_stride = 2;
  f.model_cfg.vocab_tokens = static_cast<int>(f.info.lexicon.size());
  f.model_cfg.charset = generator_charset();
  f.model_cfg.dropout = 0.0;
  f.model_cfg.seed = 7;

  f.aug.config.text_mode = TextAugMode::TokenDropout;
  f.aug.config.token_dropout_p = 0.15;
  f.aug.config.speech_mode = SpeechAugMode::SpeakerShift;
  for (int k : f.info.class_keyword) f.aug.config.protected_tokens.insert(k);
  f.aug.pool = build_speaker_pool(f.dataset, &f.info);
  f.aug.lexicon = f.info.lexicon;
  return f;
}

std::vector<int> all_indices(const Dataset& d) {
  std::vector<int> idx(d.utterances.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

std::vector<Matrix> snapshot(Model& m) {
  std::vector<Matrix> out;
  for (Param* p : m.parameters()) out.push_back(p->v);
  return out;
}

double params_distance(Model& a, Model& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    worst = std::max(worst, (pa[i]->v - pb[i]->v).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Fixture f = small_fixture(16);
  Model m = make_model(f.model_cfg);
  const auto before = snapshot(m);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.accum_steps = 2;
  train_model(m, f.dataset, all_indices(f.dataset), tc, &f.aug);
  const auto after = snapshot(m);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("gradient accumulation equals one large batch") {
  Fixture f = small_fixture(16);

  TrainConfig small;
  small.batch_size = 4;
  small.accum_steps = 4;
  small.epochs = 1;
  small.dropout = 0.0;
  small.seed = 3;
  // Contrastive terms are batch-structured, so exact equivalence is defined
  // for the sample-decomposable losses only.
  small.loss.beta = 0.0;
  small.loss.gamma = 0.0;
  small.loss.alpha = 0.1;

  TrainConfig big = small;
  big.batch_size = 16;
  big.accum_steps = 1;

  Model m1 = make_model(f.model_cfg);
  Model m2 = make_model(f.model_cfg);
  const auto h1 = train_model(m1, f.dataset, all_indices(f.dataset), small, nullptr);
  const auto h2 = train_model(m2, f.dataset, all_indices(f.dataset), big, nullptr);
  CHECK(h1.steps_per_epoch[0] == 1);
  CHECK(h2.steps_per_epoch[0] == 1);
  CHECK(params_distance(m1, m2) < 1e-9);
}

TEST_CASE("cross-entropy-only training descends over the first epochs") {
  Fixture f = small_fixture(32);
  Model m = make_model(f.model_cfg);
  TrainConfig tc;
  tc.preset = Preset::CeOnly;
  tc.epochs = 5;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.accum_steps = 1;
  tc.seed = 5;
  const TrainHistory h = train_model(m, f.dataset, all_indices(f.dataset), tc, nullptr);
  REQUIRE(h.epochs.size() == 5);
  for (std::size_t e = 1; e < h.epochs.size(); ++e) CHECK(h.epochs[e].total < h.epochs[e - 1].total);
  // ce_only leaves the auxiliary columns at zero.
  for (const auto& s : h.epochs) {
    CHECK(s.ctc == 0.0);
    CHECK(s.scl == 0.0);
    CHECK(s.acl == 0.0);
  }
}

TEST_CASE("metrics arithmetic matches hand-counted examples") {
  // predictions == labels
  const Metrics perfect = metrics_from_predictions({0, 1, 2, 3}, {0, 1, 2, 3});
  CHECK(perfect.weighted_accuracy == 1.0);
  CHECK(perfect.unweighted_accuracy == 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(perfect.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == (i == j ? 1 : 0));

  // labels (0,0,1,1), predictions (0,1,1,1): WA 0.75, UA (0.5 + 1.0)/2.
  const Metrics hand = metrics_from_predictions({0, 0, 1, 1}, {0, 1, 1, 1});
  CHECK(hand.weighted_accuracy == doctest::Approx(0.75));
  CHECK(hand.unweighted_accuracy == doctest::Approx(0.75));
  CHECK(hand.confusion[0][0] == 1);
  CHECK(hand.confusion[0][1] == 1);
  CHECK(hand.confusion[1][1] == 2);

  // Constant class-2 predictor on a balanced set: WA = UA = 0.25.
  const Metrics constant = metrics_from_predictions({0, 1, 2, 3, 0, 1, 2, 3}, {2, 2, 2, 2, 2, 2, 2, 2});
  CHECK(constant.weighted_accuracy == doctest::Approx(0.25));
  CHECK(constant.unweighted_accuracy == doctest::Approx(0.25));
  CHECK(constant.total() == 8);

  CHECK_THROWS_AS(metrics_from_predictions({}, {}), EvalError);
}

TEST_CASE("evaluate refuses an empty slice") {
  Fixture f = small_fixture(16);
  Model m = make_model(f.model_cfg);
  CHECK_THROWS_AS(evaluate_model(m, f.dataset, {}), EvalError);
}

TEST_CASE("frozen text encoder receives zero updates") {
  Fixture f = small_fixture(16);
  f.model_cfg.text_frozen = true;
  f.model_cfg.t_layers = 1;
  Model m = make_model(f.model_cfg);
  const Matrix emb_before = m.text.embedding.v;
  const Matrix layer_before = m.text.layers[0].ff1_w.v;
  const Matrix cls_before = m.classifier.w.v;

  TrainConfig tc;
  tc.epochs = 3;  // >= 10 optimizer steps at batch 4 / accum 1 on 16 samples
  tc.batch_size = 4;
  tc.accum_steps = 1;
  train_model(m, f.dataset, all_indices(f.dataset), tc, &f.aug);

  CHECK(m.text.embedding.v == emb_before);
  CHECK(m.text.layers[0].ff1_w.v == layer_before);
  CHECK(m.classifier.w.v != cls_before);  // the rest of the model did move
}

TEST_CASE("optimizer steps per epoch equal ceil(batches / accum)") {
  Fixture f = small_fixture(20, 2, 13);
  Model m = make_model(f.model_cfg);
  TrainConfig tc;
  tc.batch_size = 3;  // 20 samples -> 7 micro-batches
  tc.accum_steps = 2;
  tc.epochs = 2;
  tc.preset = Preset::CeOnly;
  const TrainHistory h = train_model(m, f.dataset, all_indices(f.dataset), tc, nullptr);
  for (long s : h.steps_per_epoch) CHECK(s == 4);  // ceil(7 / 2)
}

TEST_CASE("NaN parameters surface as a divergence error with context") {
  Fixture f = small_fixture(8);
  Model m = make_model(f.model_cfg);
  m.classifier.w.v(0, 0) = std::nan("");
  TrainConfig tc;
  tc.epochs = 1;
  tc.preset = Preset::CeOnly;
  try {
    train_model(m, f.dataset, all_indices(f.dataset), tc, nullptr);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("contrastive losses demand batches of at least 2") {
  TrainConfig tc;
  tc.batch_size = 1;
  CHECK_THROWS_AS(validate_train_config(tc), ConfigError);
  tc.preset = Preset::CeOnly;
  CHECK_NOTHROW(validate_train_config(tc));
}

TEST_CASE("two identical runs produce bit-identical histories and parameters") {
  Fixture f = small_fixture(16);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 77;
  tc.batch_size = 4;
  tc.accum_steps = 2;

  Model m1 = make_model(f.model_cfg);
  Model m2 = make_model(f.model_cfg);
  const TrainHistory h1 = train_model(m1, f.dataset, all_indices(f.dataset), tc, &f.aug);
  const TrainHistory h2 = train_model(m2, f.dataset, all_indices(f.dataset), tc, &f.aug);

  REQUIRE(h1.epochs.size() == h2.epochs.size());
  for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
    CHECK(h1.epochs[e].ce == h2.epochs[e].ce);
    CHECK(h1.epochs[e].ctc == h2.epochs[e].ctc);
    CHECK(h1.epochs[e].scl == h2.epochs[e].scl);
    CHECK(h1.epochs[e].acl == h2.epochs[e].acl);
    CHECK(h1.epochs[e].total == h2.epochs[e].total);
  }
  CHECK(params_distance(m1, m2) == 0.0);
}

TEST_CASE("cross-validation trains one fold per session without leakage") {
  Fixture f = small_fixture(24, 2, 21);
  TrainConfig tc;
  tc.epochs = 1;
  tc.preset = Preset::CeOnly;
  const CvResult cv = cross_validate(f.dataset, f.model_cfg, tc, nullptr);
  REQUIRE(cv.folds.size() == 2);
  CHECK(cv.folds[0].test_session == 1);
  CHECK(cv.folds[1].test_session == 2);
  CHECK(cv.mean_weighted_accuracy ==
        doctest::Approx((cv.folds[0].metrics.weighted_accuracy + cv.folds[1].metrics.weighted_accuracy) / 2.0));

  // The test slice of each fold holds exactly the held-out session's samples.
  for (const auto& fold : cv.folds) {
    long expected = 0;
    for (const auto& u : f.dataset.utterances)
      if (u.session_id == fold.test_session) ++expected;
    CHECK(fold.metrics.total() == expected);
  }

  // Train/test index sets are disjoint by construction.
  const auto train_idx = indices_of_sessions(f.dataset, {1});
  const auto test_idx = indices_of_sessions(f.dataset, {2});
  for (int i : train_idx)
    CHECK(std::find(test_idx.begin(), test_idx.end(), i) == test_idx.end());
}

TEST_CASE("presets zero the advertised loss weights") {
  LossConfig base;
  base.alpha = base.beta = base.gamma = 0.1;
  CHECK(apply_preset(base, Preset::WoCtc).alpha == 0.0);
  CHECK(apply_preset(base, Preset::WoCtc).beta == 0.1);
  CHECK(apply_preset(base, Preset::WoScl).beta == 0.0);
  CHECK(apply_preset(base, Preset::WoAcl).gamma == 0.0);
  const LossConfig ce = apply_preset(base, Preset::CeOnly);
  CHECK(ce.alpha == 0.0);
  CHECK(ce.beta == 0.0);
  CHECK(ce.gamma == 0.0);
  CHECK(parse_preset("wo_ctc") == Preset::WoCtc);
  CHECK_THROWS_AS(parse_preset("nope"), ConfigError);
}

TEST_CASE("infeasible CTC targets are caught before training") {
  Fixture f = small_fixture(8);
  f.model_cfg.conv_stride = 64;  // downsampled length shorter than any target
  Model m = make_model(f.model_cfg);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_model(m, f.dataset, all_indices(f.dataset), tc, &f.aug), InfeasibleError);
}
