#include "mmfuse/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace mmfuse {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

TextAugMode parse_text_aug_mode(const std::string& s) {
  if (s == "lexicon_paraphrase") return TextAugMode::LexiconParaphrase;
  if (s == "token_dropout") return TextAugMode::TokenDropout;
  if (s == "precomputed") return TextAugMode::Precomputed;
  throw ConfigError("unknown text augmentation mode: " + s);
}

SpeechAugMode parse_speech_aug_mode(const std::string& s) {
  if (s == "speaker_shift") return SpeechAugMode::SpeakerShift;
  if (s == "gaussian_jitter") return SpeechAugMode::GaussianJitter;
  if (s == "precomputed") return SpeechAugMode::Precomputed;
  throw ConfigError("unknown speech augmentation mode: " + s);
}

void validate_augment_config(const AugmentConfig& cfg) {
  if (cfg.token_dropout_p < 0.0 || cfg.token_dropout_p >= 0.5)
    throw ConfigError("augment: token dropout probability must be in [0, 0.5)");
  if (cfg.jitter_sigma < 0.0) throw ConfigError("augment: jitter_sigma must be non-negative");
  if (cfg.resample_factor <= 0.0) throw ConfigError("augment: resample_factor must be positive");
  // The synonym map must stay label-neutral: no keyword may be remapped,
  // and nothing may be remapped onto a keyword.
  for (const auto& [from, to] : cfg.paraphrase_table) {
    if (cfg.protected_tokens.count(from) || cfg.protected_tokens.count(to))
      throw ConfigError("augment: paraphrase table touches a protected keyword token");
  }
}

SpeakerPool build_speaker_pool(const Dataset& d, const SyntheticInfo* info) {
  SpeakerPool pool;
  if (info) pool.offsets = info->speaker_offsets;
  for (const auto& u : d.utterances) {
    auto& v = pool.speakers_by_class[map_label(u.raw_label)];
    if (std::find(v.begin(), v.end(), u.speaker_id) == v.end()) v.push_back(u.speaker_id);
  }
  for (auto& [cls, v] : pool.speakers_by_class) std::sort(v.begin(), v.end());
  return pool;
}

std::vector<int> augment_text(const std::vector<int>& tokens, const AugmentConfig& cfg,
                              std::mt19937_64& rng) {
  validate_augment_config(cfg);
  switch (cfg.text_mode) {
    case TextAugMode::LexiconParaphrase: {
      std::vector<int> out = tokens;
      for (int& tok : out) {
        if (cfg.protected_tokens.count(tok)) continue;
        const auto it = cfg.paraphrase_table.find(tok);
        if (it != cfg.paraphrase_table.end()) tok = it->second;
      }
      return out;
    }
    case TextAugMode::TokenDropout: {
      if (cfg.token_dropout_p == 0.0) return tokens;
      // Cap removals at a quarter of the sequence so the length change stays
      // within the +-25% contract; protected keywords always survive.
      const int max_drops = static_cast<int>(tokens.size()) / 4;
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      std::vector<int> out;
      out.reserve(tokens.size());
      int drops = 0;
      for (int tok : tokens) {
        const bool droppable = !cfg.protected_tokens.count(tok) && drops < max_drops &&
                               static_cast<int>(tokens.size()) - drops > 1;
        if (droppable && coin(rng) < cfg.token_dropout_p) {
          ++drops;
          continue;
        }
        out.push_back(tok);
      }
      return out;
    }
    case TextAugMode::Precomputed:
      return tokens;  // pairing handled by the context
  }
  throw ConfigError("augment_text: unhandled mode");
}

MatrixF augment_speech(const MatrixF& frames, int source_speaker, int class_index,
                       const SpeakerPool& pool, const AugmentConfig& cfg, std::mt19937_64& rng) {
  validate_augment_config(cfg);
  MatrixF out = frames;

  switch (cfg.speech_mode) {
    case SpeechAugMode::SpeakerShift: {
      if (!pool.offsets.empty()) {
        // Exact additive offset swap against the generator ground truth.
        std::vector<int> candidates;
        const auto it = pool.speakers_by_class.find(class_index);
        if (it != pool.speakers_by_class.end()) candidates = it->second;
        if (candidates.empty())
          for (int s = 0; s < static_cast<int>(pool.offsets.size()); ++s) candidates.push_back(s);
        if (!cfg.force_same_speaker)
          candidates.erase(std::remove(candidates.begin(), candidates.end(), source_speaker),
                           candidates.end());
        if (candidates.empty()) throw AugmentError("speaker_shift: need at least 2 speakers in the pool");
        const int target = cfg.force_same_speaker
                               ? source_speaker
                               : candidates[rng() % candidates.size()];
        if (source_speaker < 0 || source_speaker >= static_cast<int>(pool.offsets.size()))
          throw AugmentError("speaker_shift: unknown source speaker " + std::to_string(source_speaker));
        const Eigen::VectorXf delta =
            pool.offsets[static_cast<std::size_t>(target)] - pool.offsets[static_cast<std::size_t>(source_speaker)];
        out.rowwise() += delta.transpose();
      } else {
        // Real features: no ground-truth offsets, add a random constant one.
        std::normal_distribution<double> dist(0.0, pool.random_offset_scale);
        Eigen::RowVectorXf off(frames.cols());
        for (Eigen::Index j = 0; j < frames.cols(); ++j) off(j) = static_cast<float>(dist(rng));
        if (!cfg.force_same_speaker) out.rowwise() += off;
      }
      break;
    }
    case SpeechAugMode::GaussianJitter:
      break;  // jitter applied below
    case SpeechAugMode::Precomputed:
      return frames;  // pairing handled by the context
  }

  if (cfg.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += static_cast<float>(noise(rng));
  }

  if (cfg.resample_factor != 1.0) {
    const int new_rows = std::max(1, static_cast<int>(std::lround(out.rows() * cfg.resample_factor)));
    MatrixF resampled(new_rows, out.cols());
    for (int r = 0; r < new_rows; ++r) {
      const double src = std::min(static_cast<double>(out.rows() - 1), r / cfg.resample_factor);
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(static_cast<int>(out.rows()) - 1, lo + 1);
      const float frac = static_cast<float>(src - lo);
      resampled.row(r) = (1.0f - frac) * out.row(lo) + frac * out.row(hi);
    }
    out = std::move(resampled);
  }
  return out;
}

std::mt19937_64 augment_rng(const AugmentConfig& cfg, std::uint64_t epoch, const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the utterance id
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{cfg.seed, epoch, h};
  return std::mt19937_64(seq);
}

namespace {

std::string transcript_from_tokens(const std::vector<int>& tokens, const std::vector<std::string>& lexicon) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= static_cast<int>(lexicon.size()))
      throw VocabError("augment: token id outside lexicon while rebuilding transcript");
    if (i) out += ' ';
    out += lexicon[static_cast<std::size_t>(tokens[i])];
  }
  return out;
}

}  // namespace

Utterance augment_utterance(const Utterance& u, const AugmentConfig& cfg, const SpeakerPool& pool,
                            const std::vector<std::string>* lexicon, std::uint64_t epoch) {
  std::mt19937_64 rng = augment_rng(cfg, epoch, u.id);
  Utterance out = u;
  out.tokens = augment_text(u.tokens, cfg, rng);
  if (lexicon && !lexicon->empty() && out.tokens != u.tokens)
    out.transcript = transcript_from_tokens(out.tokens, *lexicon);
  out.speech = augment_speech(u.speech, u.speaker_id, map_label(u.raw_label), pool, cfg, rng);
  return out;
}

std::map<std::string, Utterance> load_precomputed_pairs(const fs::path& manifest_path,
                                                        const Dataset& base) {
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw IoError("cannot open pair manifest: " + manifest_path.string());
  const fs::path dir = manifest_path.parent_path();

  std::map<std::string, const Utterance*> base_by_id;
  for (const auto& u : base.utterances) base_by_id[u.id] = &u;

  std::map<std::string, Utterance> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("pair manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    std::string id;
    try {
      id = j.at("id").get<std::string>();
      const auto base_it = base_by_id.find(id);
      if (base_it == base_by_id.end())
        throw AugmentError("pair manifest names unknown utterance id: " + id);
      if (pairs.count(id)) throw AugmentError("pair manifest lists utterance twice: " + id);
      Utterance aug = *base_it->second;
      aug.tokens = j.at("tokens_aug").get<std::vector<int>>();
      aug.transcript = j.at("transcript_aug").get<std::string>();
      aug.speech = read_matrix_blob(dir / j.at("features_aug").get<std::string>());
      if (aug.speech.cols() != base_it->second->speech.cols())
        throw ShapeError("pair for " + id + ": feature width " + std::to_string(aug.speech.cols()) +
                         " does not match base width " + std::to_string(base_it->second->speech.cols()));
      pairs.emplace(id, std::move(aug));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("pair manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  std::string missing;
  for (const auto& u : base.utterances) {
    if (!pairs.count(u.id)) {
      if (!missing.empty()) missing += ", ";
      missing += u.id;
    }
  }
  if (!missing.empty()) throw AugmentError("pair manifest is missing augmented views for: " + missing);
  return pairs;
}

fs::path write_precomputed_pairs(const std::map<std::string, Utterance>& pairs, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "blobs_aug", ec);
  if (ec) throw IoError("cannot create pair directory: " + dir.string());
  const fs::path manifest = dir / "pairs.jsonl";
  std::ofstream os(manifest, std::ios::binary);
  if (!os) throw IoError("cannot write pair manifest: " + manifest.string());
  for (const auto& [id, u] : pairs) {
    const std::string rel = "blobs_aug/" + id + ".bin";
    write_matrix_blob(dir / rel, u.speech);
    ordered_json j;
    j["id"] = id;
    j["features_aug"] = rel;
    j["tokens_aug"] = u.tokens;
    j["transcript_aug"] = u.transcript;
    os << j.dump() << "\n";
  }
  return manifest;
}

Utterance AugmentContext::view_of(const Utterance& u, std::uint64_t epoch) const {
  const bool text_pre = config.text_mode == TextAugMode::Precomputed;
  const bool speech_pre = config.speech_mode == SpeechAugMode::Precomputed;
  if (text_pre || speech_pre) {
    const auto it = precomputed.find(u.id);
    if (it == precomputed.end())
      throw AugmentError("no precomputed pair loaded for utterance " + u.id);
    if (text_pre && speech_pre) return it->second;
    Utterance out = augment_utterance(u, config, pool, lexicon.empty() ? nullptr : &lexicon, epoch);
    if (text_pre) {
      out.tokens = it->second.tokens;
      out.transcript = it->second.transcript;
    }
    if (speech_pre) out.speech = it->second.speech;
    return out;
  }
  return augment_utterance(u, config, pool, lexicon.empty() ? nullptr : &lexicon, epoch);
}

}  // namespace mmfuse
