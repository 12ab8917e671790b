#pragma once

#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/data.hpp"
#include "mmfuse/fusion.hpp"

namespace mmfuse {

// Stand-in contextual speech encoder: strided 1-d convolution over time
// followed by a small self-attention stack. Output width d, output length
// ceil(J / stride).
struct SpeechEncoderParams {
  Param conv_w;  // d x (kernel * d_a)
  Param conv_b;  // 1 x d
  int kernel = 5;
  int stride = 2;
  std::vector<CmeBlockParams> layers;

  int dim() const { return static_cast<int>(conv_w.v.rows()); }
};

// Stand-in contextual text encoder: token embeddings plus sinusoidal
// positions, then a self-attention stack. With zero layers, row i is exactly
// embedding(token_i) + position(i).
struct TextEncoderParams {
  Param embedding;  // V_tok x d
  std::vector<CmeBlockParams> layers;
  bool frozen = true;

  int dim() const { return static_cast<int>(embedding.v.cols()); }
  int vocab() const { return static_cast<int>(embedding.v.rows()); }
};

int downsampled_len(int frames, int stride);
Matrix sinusoidal_positions(int len, int dim);

ad::Var encode_speech_node(ad::Tape& t, SpeechEncoderParams& p, const MatrixF& frames,
                           const BlockRun& run = {});
ad::Var encode_text_node(ad::Tape& t, TextEncoderParams& p, const std::vector<int>& tokens,
                         const BlockRun& run = {});

Matrix encode_speech(SpeechEncoderParams& p, const MatrixF& frames);
Matrix encode_text(TextEncoderParams& p, const std::vector<int>& tokens);

}  // namespace mmfuse
