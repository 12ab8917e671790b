#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/data.hpp"
#include "mmfuse/encoders.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/losses.hpp"

namespace mmfuse {

struct ModelConfig {
  int d = 32;      // model width (768 at full scale)
  int d_a = 16;    // raw speech feature width
  int heads = 2;   // must divide d
  int s_layers = 1;
  int t_layers = 1;
  int conv_kernel = 5;
  int conv_stride = 2;
  int vocab_tokens = 36;
  std::string charset = "ABCDEFGHIJKLMNOPQRSTUVWXYZ ";
  bool text_frozen = false;  // paper profile freezes the text encoder
  double dropout = 0.1;      // CME dropout while training
  std::uint64_t seed = 1;
  bool speech_passthrough = false;  // feed frames straight through as A (requires d_a == d)
};

void validate_model_config(const ModelConfig& cfg);

struct Model {
  ModelConfig config;
  SpeechEncoderParams speech;
  TextEncoderParams text;
  FusionParams fusion;
  ClassifierParams classifier;
  CtcHeadParams ctc_head;

  // Stable traversal order; checkpoint and optimizer state key off it.
  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norms.
// Identical config -> identical initialization.
Model make_model(const ModelConfig& cfg);

struct ForwardOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  std::vector<Matrix>* attention_probs = nullptr;
  bool want_ctc = true;
};

struct ForwardNodes {
  ad::Var A;  // J' x d speech encodings
  ad::Var T;  // M x d token encodings
  FusionNodes fusion;
  ad::Var logits;        // 1 x 4
  ad::Var ctc_logprobs;  // J' x V (only when want_ctc)
};

ForwardNodes model_forward(ad::Tape& t, Model& m, const Utterance& u, const ForwardOptions& opt = {});

// Frames needed so the CTC target fits after downsampling.
int ctc_min_frames(const Model& m, const std::string& transcript);
// Throws InfeasibleError listing every offending utterance id.
void validate_ctc_feasibility(const Model& m, const Dataset& d);

}  // namespace mmfuse
