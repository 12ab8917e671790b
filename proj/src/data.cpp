#include "mmfuse/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mmfuse {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int map_label(RawLabel raw) {
  switch (raw) {
    case RawLabel::Happy:
    case RawLabel::Excited:
      return 0;
    case RawLabel::Angry:
      return 1;
    case RawLabel::Neutral:
      return 2;
    case RawLabel::Sad:
      return 3;
  }
  throw SchemaError("map_label: unknown raw label value");
}

RawLabel parse_label(const std::string& s) {
  if (s == "Happy") return RawLabel::Happy;
  if (s == "Angry") return RawLabel::Angry;
  if (s == "Neutral") return RawLabel::Neutral;
  if (s == "Sad") return RawLabel::Sad;
  if (s == "Excited") return RawLabel::Excited;
  throw SchemaError("unknown emotion label: '" + s + "'");
}

std::string label_name(RawLabel l) {
  switch (l) {
    case RawLabel::Happy: return "Happy";
    case RawLabel::Angry: return "Angry";
    case RawLabel::Neutral: return "Neutral";
    case RawLabel::Sad: return "Sad";
    case RawLabel::Excited: return "Excited";
  }
  return "?";
}

std::string class_name(int class_index) {
  static const char* names[kNumClasses] = {"Happy", "Angry", "Neutral", "Sad"};
  if (class_index < 0 || class_index >= kNumClasses) throw SchemaError("class index out of range");
  return names[class_index];
}

bool Utterance::operator==(const Utterance& o) const {
  if (id != o.id || tokens != o.tokens || transcript != o.transcript || raw_label != o.raw_label ||
      speaker_id != o.speaker_id || session_id != o.session_id)
    return false;
  if (speech.rows() != o.speech.rows() || speech.cols() != o.speech.cols()) return false;
  return std::memcmp(speech.data(), o.speech.data(), sizeof(float) * speech.size()) == 0;
}

int Dataset::feature_width() const {
  return utterances.empty() ? 0 : static_cast<int>(utterances.front().speech.cols());
}

std::vector<int> Dataset::distinct_sessions() const {
  std::set<int> s;
  for (const auto& u : utterances) s.insert(u.session_id);
  return {s.begin(), s.end()};
}

void validate_dataset(const Dataset& d) {
  std::set<std::string> ids;
  for (const auto& u : d.utterances) {
    if (u.id.empty()) throw SchemaError("utterance with empty id");
    if (!ids.insert(u.id).second) throw SchemaError("duplicate utterance id: " + u.id);
    if (u.speech.rows() < 1) throw SchemaError(u.id + ": speech must have at least one frame");
    if (u.tokens.empty()) throw SchemaError(u.id + ": token sequence is empty");
    if (u.transcript.empty()) throw SchemaError(u.id + ": transcript is empty");
    if (u.session_id < 1) throw SchemaError(u.id + ": session id must be >= 1");
    if (!u.speech.allFinite()) throw SchemaError(u.id + ": non-finite feature values");
  }
}

// --- synthetic corpus ------------------------------------------------------

namespace {

// 4 class keywords first, then fillers. No word contains a doubled letter,
// which keeps CTC targets free of forced blank insertions.
const std::vector<std::string> kLexicon = {
    "JOY",   "RAGE",  "CALM",  "GLUM",   // keywords for classes 0..3
    "THE",   "AND",   "WITH",  "TIME",  "DAY",   "NIGHT", "HOUSE", "RIVER",
    "STONE", "CLOUD", "PAPER", "LIGHT", "SOUND", "WORD",  "VOICE", "TABLE",
    "NORTH", "SEVEN", "WATER", "MUSIC", "ROAD",  "FIELD", "POINT", "HEART",
    "MIND",  "WORLD", "BIRD",  "LAKE",  "WIND",  "SNOW",  "RAIN",  "DUSK"};

const std::string kCharset = "ABCDEFGHIJKLMNOPQRSTUVWXYZ ";

constexpr char kBlobMagic[8] = {'M', 'M', 'F', 'U', 'S', 'E', 'B', '1'};

std::string join_words(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += kLexicon[static_cast<std::size_t>(tokens[i])];
  }
  return out;
}

void check_generator_config(const GeneratorConfig& cfg) {
  if (cfg.n_sessions < 2) throw ConfigError("generator: n_sessions must be >= 2");
  if (cfg.n_speakers < 2) throw ConfigError("generator: n_speakers must be >= 2");
  if (cfg.d_a < 4) throw ConfigError("generator: d_a must be >= 4");
  if (cfg.n_utterances < 4 * cfg.n_sessions)
    throw ConfigError("generator: n_utterances must be >= 4 * n_sessions");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw ConfigError("generator: bad token count range");
  if (cfg.class_signal_strength < 0.0 || cfg.class_signal_strength > 1.0)
    throw ConfigError("generator: class_signal_strength must be in [0,1]");
  if (cfg.frames_per_char < 1) throw ConfigError("generator: frames_per_char must be >= 1");
}

}  // namespace

const std::vector<std::string>& generator_lexicon() { return kLexicon; }
const std::string& generator_charset() { return kCharset; }

SyntheticInfo synthetic_info_for(const GeneratorConfig& cfg) {
  check_generator_config(cfg);
  SyntheticInfo info;
  info.lexicon = kLexicon;
  info.class_keyword = {0, 1, 2, 3};
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> offset(0.0, cfg.speaker_offset_scale);
  info.speaker_offsets.resize(static_cast<std::size_t>(cfg.n_speakers));
  for (int s = 0; s < cfg.n_speakers; ++s) {
    Eigen::VectorXf v(cfg.d_a);
    for (int f = 0; f < cfg.d_a; ++f) v(f) = static_cast<float>(offset(rng));
    info.speaker_offsets[static_cast<std::size_t>(s)] = v;
  }
  return info;
}

std::pair<Dataset, SyntheticInfo> generate_synthetic_dataset(const GeneratorConfig& cfg) {
  check_generator_config(cfg);
  SyntheticInfo info = synthetic_info_for(cfg);

  // Separate stream for utterance content so info stays a prefix function
  // of the seed.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> n_tok(cfg.min_tokens, cfg.max_tokens);
  std::uniform_int_distribution<int> filler(kNumClasses, static_cast<int>(kLexicon.size()) - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  // Speakers cover sessions round-robin; a session owns the speakers
  // congruent to it. When there are fewer speakers than sessions the mapping
  // falls back to a global rotation.
  const bool session_bound_speakers = cfg.n_speakers >= cfg.n_sessions;
  std::vector<int> session_speaker_cursor(static_cast<std::size_t>(cfg.n_sessions), 0);

  Dataset ds;
  ds.utterances.reserve(static_cast<std::size_t>(cfg.n_utterances));
  for (int i = 0; i < cfg.n_utterances; ++i) {
    Utterance u;
    {
      std::ostringstream name;
      name << "utt_" << std::setw(5) << std::setfill('0') << i;
      u.id = name.str();
    }
    const int session_idx = i % cfg.n_sessions;
    u.session_id = session_idx + 1;
    const int cls = (i / cfg.n_sessions) % kNumClasses;
    u.raw_label = static_cast<RawLabel>(cls);
    // Excited shows up as an alias of Happy now and then, the way the source
    // corpora mix them.
    if (cls == 0 && (i / (cfg.n_sessions * kNumClasses)) % 3 == 1) u.raw_label = RawLabel::Excited;

    if (session_bound_speakers) {
      std::vector<int> owners;
      for (int s = 0; s < cfg.n_speakers; ++s)
        if (s % cfg.n_sessions == session_idx) owners.push_back(s);
      int& cursor = session_speaker_cursor[static_cast<std::size_t>(session_idx)];
      u.speaker_id = owners[static_cast<std::size_t>(cursor % static_cast<int>(owners.size()))];
      ++cursor;
    } else {
      u.speaker_id = i % cfg.n_speakers;
    }

    const int m = n_tok(rng);
    u.tokens.resize(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) u.tokens[static_cast<std::size_t>(k)] = filler(rng);
    const bool insert_keyword = coin(rng) < cfg.class_signal_strength;
    const int kw_pos = std::uniform_int_distribution<int>(0, m - 1)(rng);
    if (insert_keyword)
      u.tokens[static_cast<std::size_t>(kw_pos)] = info.class_keyword[static_cast<std::size_t>(cls)];
    u.transcript = join_words(u.tokens);

    const int chars = static_cast<int>(u.transcript.size());
    const int frames = cfg.frames_per_char * (chars + 2);
    u.speech.resize(frames, cfg.d_a);
    const Eigen::VectorXf& off = info.speaker_offsets[static_cast<std::size_t>(u.speaker_id)];
    const double freq = cls + 1;
    const double phase = cls * M_PI / 4.0;
    for (int t = 0; t < frames; ++t) {
      const double mod = 1.0 + 0.3 * std::sin(2.0 * M_PI * t / 24.0);
      for (int f = 0; f < cfg.d_a; ++f) {
        const double tmpl = cfg.template_amp * std::sin(2.0 * M_PI * freq * (f + 1) / cfg.d_a + phase);
        u.speech(t, f) = static_cast<float>(tmpl * mod + off(f) + noise(rng));
      }
    }
    ds.utterances.push_back(std::move(u));
  }
  validate_dataset(ds);
  return {std::move(ds), std::move(info)};
}

// --- blob IO ----------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("blob: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(std::endian::native == std::endian::little, "blob IO assumes a little-endian host");

}  // namespace

void write_matrix_blob(const fs::path& path, const MatrixF& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kBlobMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::RowVectorXf row = m.row(i);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.cols())));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

MatrixF read_matrix_blob(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingBlobError("missing blob: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kBlobMagic, 8) != 0)
    throw ParseError("corrupt blob header: " + path.string());
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  if (rows == 0 || cols == 0) throw ShapeError("blob declares empty dimensions: " + path.string());
  MatrixF m(rows, cols);
  std::vector<float> row(cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(sizeof(float) * cols));
    if (!is)
      throw ParseError("blob truncated (expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " float32): " + path.string());
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = row[j];
  }
  // Trailing bytes mean the header dims do not describe the payload.
  is.peek();
  if (!is.eof()) throw ShapeError("blob payload larger than declared dims: " + path.string());
  return m;
}

// --- dataset IO ---------------------------------------------------------------

fs::path write_dataset(const Dataset& d, const fs::path& dir) {
  validate_dataset(d);
  std::error_code ec;
  fs::create_directories(dir / "blobs", ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir.string());

  const fs::path manifest = dir / "manifest.jsonl";
  std::ofstream os(manifest, std::ios::binary);
  if (!os) throw IoError("cannot open manifest for writing: " + manifest.string());
  for (const auto& u : d.utterances) {
    const std::string rel = "blobs/" + u.id + ".bin";
    write_matrix_blob(dir / rel, u.speech);
    ordered_json j;
    j["id"] = u.id;
    j["label"] = label_name(u.raw_label);
    j["speaker"] = u.speaker_id;
    j["session"] = u.session_id;
    j["features"] = rel;
    j["tokens"] = u.tokens;
    j["transcript"] = u.transcript;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("manifest write failed: " + manifest.string());
  return manifest;
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream is(manifest, std::ios::binary);
  if (!is) throw IoError("cannot open manifest: " + manifest.string());

  Dataset d;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    Utterance u;
    try {
      u.id = j.at("id").get<std::string>();
      u.raw_label = parse_label(j.at("label").get<std::string>());
      u.speaker_id = j.at("speaker").get<int>();
      u.session_id = j.at("session").get<int>();
      u.tokens = j.at("tokens").get<std::vector<int>>();
      u.transcript = j.at("transcript").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string rel = j.at("features").get<std::string>();
    try {
      u.speech = read_matrix_blob(dir / rel);
    } catch (const MissingBlobError& e) {
      throw MissingBlobError(std::string(e.what()) + " (utterance " + u.id + ")");
    } catch (const ParseError& e) {
      throw ParseError(std::string(e.what()) + " (utterance " + u.id + ")");
    } catch (const ShapeError& e) {
      throw ShapeError(std::string(e.what()) + " (utterance " + u.id + ")");
    }
    d.utterances.push_back(std::move(u));
  }
  validate_dataset(d);
  const int width = d.feature_width();
  for (const auto& u : d.utterances)
    if (u.speech.cols() != width)
      throw ShapeError("feature width mismatch at utterance " + u.id + ": " +
                       std::to_string(u.speech.cols()) + " != " + std::to_string(width));
  return d;
}

void write_generator_sidecar(const GeneratorConfig& cfg, const fs::path& dir) {
  ordered_json j;
  j["n_utterances"] = cfg.n_utterances;
  j["n_speakers"] = cfg.n_speakers;
  j["n_sessions"] = cfg.n_sessions;
  j["d_a"] = cfg.d_a;
  j["class_signal_strength"] = cfg.class_signal_strength;
  j["seed"] = cfg.seed;
  j["min_tokens"] = cfg.min_tokens;
  j["max_tokens"] = cfg.max_tokens;
  j["noise_sigma"] = cfg.noise_sigma;
  j["speaker_offset_scale"] = cfg.speaker_offset_scale;
  j["template_amp"] = cfg.template_amp;
  j["frames_per_char"] = cfg.frames_per_char;
  std::ofstream os(dir / "generator.json", std::ios::binary);
  if (!os) throw IoError("cannot write generator sidecar in " + dir.string());
  os << j.dump(2) << "\n";
}

std::optional<GeneratorConfig> read_generator_sidecar(const fs::path& dir) {
  const fs::path p = dir / "generator.json";
  std::ifstream is(p, std::ios::binary);
  if (!is) return std::nullopt;
  ordered_json j;
  try {
    is >> j;
    GeneratorConfig cfg;
    cfg.n_utterances = j.at("n_utterances").get<int>();
    cfg.n_speakers = j.at("n_speakers").get<int>();
    cfg.n_sessions = j.at("n_sessions").get<int>();
    cfg.d_a = j.at("d_a").get<int>();
    cfg.class_signal_strength = j.at("class_signal_strength").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.min_tokens = j.at("min_tokens").get<int>();
    cfg.max_tokens = j.at("max_tokens").get<int>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.speaker_offset_scale = j.at("speaker_offset_scale").get<double>();
    cfg.template_amp = j.at("template_amp").get<double>();
    cfg.frames_per_char = j.at("frames_per_char").get<int>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("generator sidecar " + p.string() + ": " + e.what());
  }
}

void write_vocab_file(const fs::path& path, const std::string& charset) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocab file: " + path.string());
  for (char c : charset) os << c << "\n";
}

std::string read_vocab_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open vocab file: " + path.string());
  std::string charset, line;
  while (std::getline(is, line)) {
    if (line.size() != 1) throw ParseError("vocab file line must hold exactly one character: " + path.string());
    charset += line[0];
  }
  if (charset.empty()) throw ParseError("vocab file is empty: " + path.string());
  return charset;
}

std::vector<int> transcript_to_target(const std::string& transcript, const std::string& charset) {
  std::vector<int> out;
  out.reserve(transcript.size());
  for (char c : transcript) {
    const auto pos = charset.find(c);
    if (pos == std::string::npos)
      throw VocabError(std::string("transcript character not in vocabulary: '") + c + "'");
    out.push_back(static_cast<int>(pos) + 1);  // 0 is the blank
  }
  return out;
}

FoldPlan make_folds(const Dataset& d, int k) {
  const std::vector<int> sessions = d.distinct_sessions();
  if (static_cast<int>(sessions.size()) != k)
    throw ConfigError("make_folds: k=" + std::to_string(k) + " but dataset has " +
                      std::to_string(sessions.size()) + " distinct sessions");
  FoldPlan plan;
  for (int i = 0; i < k; ++i) {
    Fold f;
    f.test_session = sessions[static_cast<std::size_t>(i)];
    for (int j = 0; j < k; ++j)
      if (j != i) f.train_sessions.push_back(sessions[static_cast<std::size_t>(j)]);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

}  // namespace mmfuse
