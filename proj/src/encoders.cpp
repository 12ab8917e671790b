#include "mmfuse/encoders.hpp"

#include <cmath>

namespace mmfuse {

using namespace ad;

int downsampled_len(int frames, int stride) { return (frames + stride - 1) / stride; }

Matrix sinusoidal_positions(int len, int dim) {
  Matrix pos(len, dim);
  for (int i = 0; i < len; ++i) {
    for (int j = 0; j < dim; ++j) {
      const double rate = std::pow(10000.0, -2.0 * (j / 2) / dim);
      pos(i, j) = (j % 2 == 0) ? std::sin(i * rate) : std::cos(i * rate);
    }
  }
  return pos;
}

Var encode_speech_node(Tape& t, SpeechEncoderParams& p, const MatrixF& frames, const BlockRun& run) {
  if (!frames.allFinite()) throw NumericError("encode_speech: non-finite input frames");
  if (frames.rows() < 1) throw ShapeError("encode_speech: need at least one frame");
  const int expected_in = p.kernel * static_cast<int>(frames.cols());
  if (p.conv_w.v.cols() != expected_in)
    throw ShapeError("encode_speech: feature width " + std::to_string(frames.cols()) +
                     " does not match conv weights");

  const int out_len = downsampled_len(static_cast<int>(frames.rows()), p.stride);
  Var x = t.constant(frames.cast<double>());
  Var windows = im2row(x, p.kernel, p.stride, out_len);
  Var conv = gelu(add_rowvec(matmul_nt(windows, t.param(p.conv_w)), t.param(p.conv_b)));
  for (auto& layer : p.layers) conv = cme_block_node(t, layer, conv, conv, run);
  return conv;
}

Var encode_text_node(Tape& t, TextEncoderParams& p, const std::vector<int>& tokens, const BlockRun& run) {
  if (tokens.empty()) throw ShapeError("encode_text: empty token sequence");
  for (int id : tokens)
    if (id < 0 || id >= p.vocab())
      throw VocabError("encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(p.vocab()));
  Var x = rows_gather(t.param(p.embedding), tokens);
  Var pos = t.constant(sinusoidal_positions(static_cast<int>(tokens.size()), p.dim()));
  x = add(x, pos);
  for (auto& layer : p.layers) x = cme_block_node(t, layer, x, x, run);
  return x;
}

Matrix encode_speech(SpeechEncoderParams& p, const MatrixF& frames) {
  Tape t;
  return t.val(encode_speech_node(t, p, frames));
}

Matrix encode_text(TextEncoderParams& p, const std::vector<int>& tokens) {
  Tape t;
  return t.val(encode_text_node(t, p, tokens));
}

}  // namespace mmfuse
