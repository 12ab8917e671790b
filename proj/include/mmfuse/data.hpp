#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

enum class RawLabel { Happy, Angry, Neutral, Sad, Excited };

constexpr int kNumClasses = 4;

// Canonical class order: Happy=0, Angry=1, Neutral=2, Sad=3.
// Excited folds into Happy.
int map_label(RawLabel raw);
RawLabel parse_label(const std::string& s);
std::string label_name(RawLabel l);
std::string class_name(int class_index);

// One sample: speech feature frames (time-major J x d_a), token ids, the
// character transcript used as CTC target, label, speaker and session.
struct Utterance {
  std::string id;
  MatrixF speech;
  std::vector<int> tokens;
  std::string transcript;
  RawLabel raw_label = RawLabel::Neutral;
  int speaker_id = 0;
  int session_id = 0;

  bool operator==(const Utterance& o) const;
};

struct Dataset {
  std::vector<Utterance> utterances;

  bool operator==(const Dataset& o) const = default;
  int feature_width() const;
  std::vector<int> distinct_sessions() const;  // sorted ascending
};

// Throws SchemaError when any utterance violates the schema invariants.
void validate_dataset(const Dataset& d);

// --- synthetic corpus ------------------------------------------------------

struct GeneratorConfig {
  int n_utterances = 200;
  int n_speakers = 10;
  int n_sessions = 5;
  int d_a = 16;
  double class_signal_strength = 0.9;
  std::uint64_t seed = 7;

  int min_tokens = 4;
  int max_tokens = 7;
  double noise_sigma = 0.25;
  double speaker_offset_scale = 0.5;
  double template_amp = 1.0;
  int frames_per_char = 3;
};

// Ground truth behind a synthetic dataset: the lexicon, which token marks
// each class, and the per-speaker additive offsets.
struct SyntheticInfo {
  std::vector<std::string> lexicon;             // index == token id
  std::array<int, kNumClasses> class_keyword;   // token id per class
  std::vector<Eigen::VectorXf> speaker_offsets; // by speaker id, length d_a
};

// The fixed generator lexicon (4 class keywords followed by fillers).
const std::vector<std::string>& generator_lexicon();
const std::string& generator_charset();  // CTC charset, blank not included

// Pure function of the config: identical config -> identical dataset.
std::pair<Dataset, SyntheticInfo> generate_synthetic_dataset(const GeneratorConfig& cfg);

// Rebuilds speaker offsets and keyword ids without regenerating utterances.
SyntheticInfo synthetic_info_for(const GeneratorConfig& cfg);

// --- on-disk formats -------------------------------------------------------

// Feature blob: 8-byte magic, u32 rows, u32 cols (little endian), then
// rows*cols float32 little-endian values in row-major order.
void write_matrix_blob(const std::filesystem::path& path, const MatrixF& m);
MatrixF read_matrix_blob(const std::filesystem::path& path);

// Writes manifest.jsonl + blobs/<id>.bin (+ vocab.txt) under `dir`.
// Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

void write_generator_sidecar(const GeneratorConfig& cfg, const std::filesystem::path& dir);
std::optional<GeneratorConfig> read_generator_sidecar(const std::filesystem::path& dir);

// Vocabulary file: one character per line; blank is implicit at index 0.
void write_vocab_file(const std::filesystem::path& path, const std::string& charset);
std::string read_vocab_file(const std::filesystem::path& path);

// transcript characters -> CTC target indices (charset position + 1).
std::vector<int> transcript_to_target(const std::string& transcript, const std::string& charset);

// --- cross-validation folds -------------------------------------------------

struct Fold {
  std::vector<int> train_sessions;
  int test_session = 0;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// Leave-one-session-out: fold i tests on the i-th distinct session.
// k must equal the number of distinct sessions.
FoldPlan make_folds(const Dataset& d, int k);

}  // namespace mmfuse
