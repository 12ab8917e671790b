#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"

namespace mmfuse {

// Deterministic stand-ins for the second (text', speech') view consumed by
// augmented contrastive learning. Real augmentation pipelines plug in through
// the precomputed-pair manifest.

enum class TextAugMode { LexiconParaphrase, TokenDropout, Precomputed };
enum class SpeechAugMode { SpeakerShift, GaussianJitter, Precomputed };

TextAugMode parse_text_aug_mode(const std::string& s);
SpeechAugMode parse_speech_aug_mode(const std::string& s);

struct AugmentConfig {
  TextAugMode text_mode = TextAugMode::TokenDropout;
  SpeechAugMode speech_mode = SpeechAugMode::SpeakerShift;
  std::map<int, int> paraphrase_table;  // token id -> synonym token id
  double token_dropout_p = 0.15;        // must stay < 0.5
  double jitter_sigma = 0.0;
  double resample_factor = 1.0;         // time-axis stretch for speech'
  std::uint64_t seed = 3;
  std::set<int> protected_tokens;       // class keywords, never touched
  bool force_same_speaker = false;      // identity-speaker escape hatch for tests
};

// Rejects dropout >= 0.5 and paraphrase entries touching protected tokens.
void validate_augment_config(const AugmentConfig& cfg);

// Speaker ground truth used by the speaker_shift mode. With empty offsets
// (real features, no generator sidecar) a random constant offset is added
// instead of an exact swap.
struct SpeakerPool {
  std::vector<Eigen::VectorXf> offsets;               // by speaker id; may be empty
  std::map<int, std::vector<int>> speakers_by_class;  // class index -> speaker ids seen with it
  double random_offset_scale = 0.5;
};

SpeakerPool build_speaker_pool(const Dataset& d, const SyntheticInfo* info);

std::vector<int> augment_text(const std::vector<int>& tokens, const AugmentConfig& cfg,
                              std::mt19937_64& rng);

MatrixF augment_speech(const MatrixF& frames, int source_speaker, int class_index,
                       const SpeakerPool& pool, const AugmentConfig& cfg, std::mt19937_64& rng);

// Per-utterance rng stream: a pure function of (seed, epoch, utterance id),
// so augmentation order never matters.
std::mt19937_64 augment_rng(const AugmentConfig& cfg, std::uint64_t epoch, const std::string& id);

// Full second view of one utterance. Lexicon (when available) rebuilds the
// transcript after token edits; labels are never touched.
Utterance augment_utterance(const Utterance& u, const AugmentConfig& cfg, const SpeakerPool& pool,
                            const std::vector<std::string>* lexicon, std::uint64_t epoch);

// Pair manifest: JSON lines {id, features_aug, tokens_aug, transcript_aug};
// every base utterance must be covered exactly once.
std::map<std::string, Utterance> load_precomputed_pairs(const std::filesystem::path& manifest_path,
                                                        const Dataset& base);
std::filesystem::path write_precomputed_pairs(const std::map<std::string, Utterance>& pairs,
                                              const std::filesystem::path& dir);

// Everything the trainer needs to produce augmented views.
struct AugmentContext {
  AugmentConfig config;
  SpeakerPool pool;
  std::vector<std::string> lexicon;               // empty when unknown
  std::map<std::string, Utterance> precomputed;   // used by the precomputed modes

  Utterance view_of(const Utterance& u, std::uint64_t epoch) const;
};

}  // namespace mmfuse
