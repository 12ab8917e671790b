#include "mmfuse/model.hpp"

#include <cmath>
#include <random>

namespace mmfuse {

using namespace ad;

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.d < 2) throw ConfigError("model: d must be >= 2");
  if (cfg.heads < 1 || cfg.d % cfg.heads != 0)
    throw ConfigError("model: head count must divide d (" + std::to_string(cfg.heads) + " vs d=" +
                      std::to_string(cfg.d) + ")");
  if (cfg.d_a < 1) throw ConfigError("model: d_a must be >= 1");
  if (cfg.conv_kernel < 1 || cfg.conv_stride < 1) throw ConfigError("model: bad conv geometry");
  if (cfg.s_layers < 0 || cfg.t_layers < 0) throw ConfigError("model: negative layer count");
  if (cfg.vocab_tokens < 1) throw ConfigError("model: vocab_tokens must be >= 1");
  if (cfg.charset.empty()) throw ConfigError("model: empty CTC charset");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  if (cfg.speech_passthrough && cfg.d_a != cfg.d)
    throw ConfigError("model: speech passthrough requires d_a == d");
}

namespace {

struct Initializer {
  std::mt19937_64 rng;

  explicit Initializer(std::uint64_t seed) : rng(seed) {}

  Param weight(int rows, int cols, int fan_in, const std::string& name, bool trainable = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return Param(std::move(m), name, trainable);
  }

  Param zeros(int rows, int cols, const std::string& name, bool trainable = true) {
    return Param(Matrix::Zero(rows, cols), name, trainable);
  }

  Param ones(int rows, int cols, const std::string& name, bool trainable = true) {
    return Param(Matrix::Ones(rows, cols), name, trainable);
  }

  CmeBlockParams cme_block(int d, int heads, double dropout, const std::string& prefix, bool trainable) {
    CmeBlockParams p;
    const int dh = d / heads;
    for (int h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      p.cma.wq.push_back(weight(dh, d, d, hp + ".wq", trainable));
      p.cma.wk.push_back(weight(dh, d, d, hp + ".wk", trainable));
      p.cma.wv.push_back(weight(dh, d, d, hp + ".wv", trainable));
    }
    p.cma.wo = weight(d, d, d, prefix + ".wo", trainable);
    p.ln1_gain = ones(1, d, prefix + ".ln1.gain", trainable);
    p.ln1_bias = zeros(1, d, prefix + ".ln1.bias", trainable);
    p.ln2_gain = ones(1, d, prefix + ".ln2.gain", trainable);
    p.ln2_bias = zeros(1, d, prefix + ".ln2.bias", trainable);
    p.ff1_w = weight(4 * d, d, d, prefix + ".ff1.w", trainable);
    p.ff1_b = zeros(1, 4 * d, prefix + ".ff1.b", trainable);
    p.ff2_w = weight(d, 4 * d, 4 * d, prefix + ".ff2.w", trainable);
    p.ff2_b = zeros(1, d, prefix + ".ff2.b", trainable);
    p.dropout_rate = dropout;
    return p;
  }
};

void collect_block(CmeBlockParams& b, std::vector<Param*>& out) {
  for (auto& w : b.cma.wq) out.push_back(&w);
  for (auto& w : b.cma.wk) out.push_back(&w);
  for (auto& w : b.cma.wv) out.push_back(&w);
  out.push_back(&b.cma.wo);
  out.push_back(&b.ln1_gain);
  out.push_back(&b.ln1_bias);
  out.push_back(&b.ln2_gain);
  out.push_back(&b.ln2_bias);
  out.push_back(&b.ff1_w);
  out.push_back(&b.ff1_b);
  out.push_back(&b.ff2_w);
  out.push_back(&b.ff2_b);
}

}  // namespace

Model make_model(const ModelConfig& cfg) {
  validate_model_config(cfg);
  Model m;
  m.config = cfg;
  Initializer init(cfg.seed);
  const int d = cfg.d;

  if (!cfg.speech_passthrough) {
    m.speech.conv_w = init.weight(d, cfg.conv_kernel * cfg.d_a, cfg.conv_kernel * cfg.d_a, "speech.conv.w");
    m.speech.conv_b = init.zeros(1, d, "speech.conv.b");
  } else {
    m.speech.conv_w = init.zeros(d, cfg.conv_kernel * cfg.d_a, "speech.conv.w", false);
    m.speech.conv_b = init.zeros(1, d, "speech.conv.b", false);
  }
  m.speech.kernel = cfg.conv_kernel;
  m.speech.stride = cfg.conv_stride;
  for (int l = 0; l < cfg.s_layers; ++l)
    m.speech.layers.push_back(init.cme_block(d, cfg.heads, cfg.dropout, "speech.layer" + std::to_string(l), true));

  const bool text_trainable = !cfg.text_frozen;
  m.text.embedding = init.weight(cfg.vocab_tokens, d, d, "text.emb", text_trainable);
  m.text.frozen = cfg.text_frozen;
  for (int l = 0; l < cfg.t_layers; ++l)
    m.text.layers.push_back(
        init.cme_block(d, cfg.heads, cfg.dropout, "text.layer" + std::to_string(l), text_trainable));

  m.fusion.block_b = init.cme_block(d, cfg.heads, cfg.dropout, "fusion.blockB", true);
  m.fusion.block_c = init.cme_block(d, cfg.heads, cfg.dropout, "fusion.blockC", true);
  m.fusion.block_d = init.cme_block(d, cfg.heads, cfg.dropout, "fusion.blockD", true);
  m.fusion.gate.w = init.weight(2 * d, d, 2 * d, "fusion.gate.w");
  m.fusion.gate.b = init.zeros(1, d, "fusion.gate.b");
  m.fusion.proj.w = init.weight(2 * d, d, 2 * d, "fusion.proj.w");
  m.fusion.proj.b = init.zeros(1, d, "fusion.proj.b");

  m.classifier.w = init.weight(2 * d, kNumClasses, 2 * d, "classifier.w");
  m.classifier.b = init.zeros(1, kNumClasses, "classifier.b");

  m.ctc_head.charset = cfg.charset;
  const int V = m.ctc_head.vocab_size();
  m.ctc_head.w = init.weight(d, V, d, "ctc.w");
  m.ctc_head.b = init.zeros(1, V, "ctc.b");
  return m;
}

std::vector<Param*> Model::parameters() {
  std::vector<Param*> out;
  out.push_back(&speech.conv_w);
  out.push_back(&speech.conv_b);
  for (auto& l : speech.layers) collect_block(l, out);
  out.push_back(&text.embedding);
  for (auto& l : text.layers) collect_block(l, out);
  collect_block(fusion.block_b, out);
  collect_block(fusion.block_c, out);
  collect_block(fusion.block_d, out);
  out.push_back(&fusion.gate.w);
  out.push_back(&fusion.gate.b);
  out.push_back(&fusion.proj.w);
  out.push_back(&fusion.proj.b);
  out.push_back(&classifier.w);
  out.push_back(&classifier.b);
  out.push_back(&ctc_head.w);
  out.push_back(&ctc_head.b);
  return out;
}

std::vector<const Param*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

ForwardNodes model_forward(Tape& t, Model& m, const Utterance& u, const ForwardOptions& opt) {
  BlockRun run;
  run.dropout = opt.dropout;
  run.rng = opt.rng;
  run.attention_probs = opt.attention_probs;

  ForwardNodes out;
  if (m.config.speech_passthrough) {
    if (u.speech.cols() != m.config.d)
      throw ShapeError("passthrough: utterance " + u.id + " feature width must equal d");
    if (!u.speech.allFinite()) throw NumericError("passthrough: non-finite features in " + u.id);
    out.A = t.constant(u.speech.cast<double>());
  } else {
    out.A = encode_speech_node(t, m.speech, u.speech, run);
  }
  out.T = encode_text_node(t, m.text, u.tokens, run);
  out.fusion = fuse_node(t, m.fusion, out.A, out.T, run);
  out.logits = classifier_logits_node(t, m.classifier, out.fusion.pooled);
  if (opt.want_ctc) out.ctc_logprobs = ctc_logprobs_node(t, m.ctc_head, out.A);
  return out;
}

int ctc_min_frames(const Model& m, const std::string& transcript) {
  const auto target = transcript_to_target(transcript, m.ctc_head.charset);
  int repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  const int needed = static_cast<int>(target.size()) + repeats;
  // J' = ceil(J / stride) >= needed  <=>  J >= stride * (needed - 1) + 1
  return m.config.speech_passthrough ? needed : m.config.conv_stride * (needed - 1) + 1;
}

void validate_ctc_feasibility(const Model& m, const Dataset& d) {
  std::string bad;
  for (const auto& u : d.utterances) {
    const int min_frames = ctc_min_frames(m, u.transcript);
    if (u.speech.rows() < min_frames) {
      if (!bad.empty()) bad += ", ";
      bad += u.id;
    }
  }
  if (!bad.empty())
    throw InfeasibleError("CTC target does not fit after downsampling for: " + bad);
}

}  // namespace mmfuse
