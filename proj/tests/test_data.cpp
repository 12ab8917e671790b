#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "mmfuse/data.hpp"

using namespace mmfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  fs::path p = fs::temp_directory_path() / ("mmfuse_" + tag + "_" + std::to_string(rng()));
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Single-feature rule: predict the class whose keyword token is present,
// class 0 when none is. Kept independent of the generator internals.
int keyword_stump(const Utterance& u, const SyntheticInfo& info) {
  for (int c = 0; c < kNumClasses; ++c)
    for (int tok : u.tokens)
      if (tok == info.class_keyword[static_cast<std::size_t>(c)]) return c;
  return 0;
}

}  // namespace

TEST_CASE("label mapping follows the canonical class order") {
  CHECK(map_label(RawLabel::Excited) == 0);  // merged into Happy
  CHECK(map_label(RawLabel::Happy) == 0);
  CHECK(map_label(RawLabel::Angry) == 1);
  CHECK(map_label(RawLabel::Neutral) == 2);
  CHECK(map_label(RawLabel::Sad) == 3);
  CHECK_THROWS_AS(parse_label("Bored"), SchemaError);
  // Post-mapping label set is exactly {0,1,2,3}.
  for (RawLabel l : {RawLabel::Happy, RawLabel::Angry, RawLabel::Neutral, RawLabel::Sad, RawLabel::Excited}) {
    const int c = map_label(l);
    CHECK(c >= 0);
    CHECK(c < 4);
  }
}

TEST_CASE("generator is deterministic and balanced") {
  GeneratorConfig cfg;
  cfg.n_utterances = 60;
  cfg.seed = 7;
  auto [d1, info1] = generate_synthetic_dataset(cfg);
  auto [d2, info2] = generate_synthetic_dataset(cfg);
  CHECK(d1 == d2);

  // Byte-identical on disk too.
  const fs::path a = temp_dir("gen_a"), b = temp_dir("gen_b");
  write_dataset(d1, a);
  write_dataset(d2, b);
  CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
  CHECK(slurp(a / "blobs" / "utt_00000.bin") == slurp(b / "blobs" / "utt_00000.bin"));

  std::array<int, 4> counts{};
  for (const auto& u : d1.utterances) ++counts[static_cast<std::size_t>(map_label(u.raw_label))];
  for (int c = 0; c < 4; ++c) CHECK(counts[static_cast<std::size_t>(c)] == 15);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("strength 1.0 puts the class keyword in every utterance") {
  GeneratorConfig cfg;
  cfg.n_utterances = 80;
  cfg.class_signal_strength = 1.0;
  auto [d, info] = generate_synthetic_dataset(cfg);
  for (const auto& u : d.utterances) {
    const int cls = map_label(u.raw_label);
    const int kw = info.class_keyword[static_cast<std::size_t>(cls)];
    CHECK(std::count(u.tokens.begin(), u.tokens.end(), kw) >= 1);
  }
}

TEST_CASE("keyword stump classifier clears 80% at strength 0.9") {
  GeneratorConfig cfg;
  cfg.n_utterances = 200;
  cfg.class_signal_strength = 0.9;
  auto [d, info] = generate_synthetic_dataset(cfg);
  int correct = 0;
  for (const auto& u : d.utterances)
    if (keyword_stump(u, info) == map_label(u.raw_label)) ++correct;
  CHECK(static_cast<double>(correct) / 200.0 > 0.8);
}

TEST_CASE("generator rejects bad configs") {
  GeneratorConfig cfg;
  cfg.d_a = 3;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg = GeneratorConfig{};
  cfg.n_utterances = 19;  // < 4 * 5 sessions
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg = GeneratorConfig{};
  cfg.n_sessions = 1;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
}

TEST_CASE("dataset round-trips bit-exactly") {
  GeneratorConfig cfg;
  cfg.n_utterances = 20;
  cfg.n_sessions = 2;
  cfg.n_speakers = 4;
  auto [d, info] = generate_synthetic_dataset(cfg);
  const fs::path dir = temp_dir("roundtrip");
  write_dataset(d, dir);
  const Dataset back = read_dataset(dir);
  CHECK(back == d);
  fs::remove_all(dir);
}

TEST_CASE("truncated blob raises a parse error naming the utterance") {
  GeneratorConfig cfg;
  cfg.n_utterances = 8;
  cfg.n_sessions = 2;
  cfg.n_speakers = 2;
  auto [d, info] = generate_synthetic_dataset(cfg);
  const fs::path dir = temp_dir("trunc");
  write_dataset(d, dir);
  const fs::path blob = dir / "blobs" / "utt_00003.bin";
  const auto sz = fs::file_size(blob);
  fs::resize_file(blob, sz - 1);
  try {
    read_dataset(dir);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("utt_00003") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing blob raises a distinct error naming the utterance") {
  GeneratorConfig cfg;
  cfg.n_utterances = 8;
  cfg.n_sessions = 2;
  cfg.n_speakers = 2;
  auto [d, info] = generate_synthetic_dataset(cfg);
  const fs::path dir = temp_dir("missing");
  write_dataset(d, dir);
  fs::remove(dir / "blobs" / "utt_00005.bin");
  try {
    read_dataset(dir);
    FAIL("expected MissingBlobError");
  } catch (const MissingBlobError& e) {
    CHECK(std::string(e.what()).find("utt_00005") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupt magic raises a parse error") {
  const fs::path dir = temp_dir("magic");
  MatrixF m(2, 3);
  m.setConstant(1.0f);
  write_matrix_blob(dir / "x.bin", m);
  {
    std::fstream f(dir / "x.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XX", 2);
  }
  CHECK_THROWS_AS(read_matrix_blob(dir / "x.bin"), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("oversized blob payload raises a dimension mismatch") {
  const fs::path dir = temp_dir("dims");
  MatrixF m(2, 3);
  m.setConstant(2.0f);
  write_matrix_blob(dir / "x.bin", m);
  {
    std::ofstream f(dir / "x.bin", std::ios::app | std::ios::binary);
    const float extra = 0.0f;
    f.write(reinterpret_cast<const char*>(&extra), sizeof(extra));
  }
  CHECK_THROWS_AS(read_matrix_blob(dir / "x.bin"), ShapeError);
  fs::remove_all(dir);
}

TEST_CASE("fold plan leaves one session out per fold") {
  GeneratorConfig cfg;
  cfg.n_utterances = 40;
  auto [d, info] = generate_synthetic_dataset(cfg);  // 5 sessions
  const FoldPlan plan = make_folds(d, 5);
  REQUIRE(plan.folds.size() == 5);
  // Fold testing session 3 trains on {1,2,4,5}.
  const Fold& f3 = plan.folds[2];
  CHECK(f3.test_session == 3);
  CHECK(f3.train_sessions == std::vector<int>{1, 2, 4, 5});

  // Test sessions across folds partition the session set.
  std::vector<int> tests;
  for (const auto& f : plan.folds) {
    tests.push_back(f.test_session);
    for (int s : f.train_sessions) CHECK(s != f.test_session);
    CHECK(f.train_sessions.size() == 4);
  }
  std::sort(tests.begin(), tests.end());
  CHECK(tests == d.distinct_sessions());

  CHECK_THROWS_AS(make_folds(d, 4), ConfigError);
}

TEST_CASE("two-session fold plan") {
  GeneratorConfig cfg;
  cfg.n_utterances = 16;
  cfg.n_sessions = 2;
  cfg.n_speakers = 2;
  auto [d, info] = generate_synthetic_dataset(cfg);
  const FoldPlan plan = make_folds(d, 2);
  REQUIRE(plan.folds.size() == 2);
  CHECK(plan.folds[0].test_session == 1);
  CHECK(plan.folds[0].train_sessions == std::vector<int>{2});
  CHECK(plan.folds[1].test_session == 2);
  CHECK(plan.folds[1].train_sessions == std::vector<int>{1});
}

TEST_CASE("vocab file round-trip and CTC target mapping") {
  const fs::path dir = temp_dir("vocab");
  write_vocab_file(dir / "vocab.txt", generator_charset());
  CHECK(read_vocab_file(dir / "vocab.txt") == generator_charset());

  const auto target = transcript_to_target("AB A", generator_charset());
  CHECK(target == std::vector<int>{1, 2, 27, 1});  // space is charset index 26 -> target 27
  CHECK_THROWS_AS(transcript_to_target("a", generator_charset()), VocabError);
  fs::remove_all(dir);
}

TEST_CASE("generator sidecar reproduces speaker offsets") {
  GeneratorConfig cfg;
  cfg.n_utterances = 24;
  cfg.n_sessions = 2;
  cfg.n_speakers = 4;
  cfg.seed = 99;
  auto [d, info] = generate_synthetic_dataset(cfg);
  const fs::path dir = temp_dir("sidecar");
  write_generator_sidecar(cfg, dir);
  const auto cfg2 = read_generator_sidecar(dir);
  REQUIRE(cfg2.has_value());
  const SyntheticInfo info2 = synthetic_info_for(*cfg2);
  REQUIRE(info2.speaker_offsets.size() == info.speaker_offsets.size());
  for (std::size_t s = 0; s < info.speaker_offsets.size(); ++s)
    CHECK(info2.speaker_offsets[s] == info.speaker_offsets[s]);
  const fs::path empty = temp_dir("nosidecar");
  CHECK(read_generator_sidecar(empty) == std::nullopt);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("transcripts stay uppercase with spaces only") {
  GeneratorConfig cfg;
  cfg.n_utterances = 40;
  auto [d, info] = generate_synthetic_dataset(cfg);
  for (const auto& u : d.utterances) {
    for (char c : u.transcript) CHECK(((c >= 'A' && c <= 'Z') || c == ' '));
    CHECK_NOTHROW(transcript_to_target(u.transcript, generator_charset()));
  }
}
