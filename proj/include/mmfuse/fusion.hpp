#pragma once

#include <random>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

// Multi-head cross-modal attention: queries from one modality, keys and
// values from the other. Per-head projections are (d/h) x d, applied as
// x * W^T; the concatenated heads go through a d x d output projection.
struct CmaParams {
  std::vector<Param> wq, wk, wv;
  Param wo;

  int heads() const { return static_cast<int>(wq.size()); }
  int dim() const { return static_cast<int>(wo.v.rows()); }
};

// One transformer-style layer: h-head CMA with a residual from the query
// stream, post-norm, then a d -> 4d -> d feed-forward with its own
// residual and norm.
struct CmeBlockParams {
  CmaParams cma;
  Param ln1_gain, ln1_bias;
  Param ln2_gain, ln2_bias;
  Param ff1_w;  // 4d x d
  Param ff1_b;  // 1 x 4d
  Param ff2_w;  // d x 4d
  Param ff2_b;  // 1 x d
  double dropout_rate = 0.1;

  int dim() const { return static_cast<int>(ff2_w.v.rows()); }
};

struct GateParams {
  Param w;  // 2d x d
  Param b;  // 1 x d
};

struct DownProjParams {
  Param w;  // 2d x d
  Param b;  // 1 x d
};

struct FusionParams {
  CmeBlockParams block_b;  // queries A, kv T
  CmeBlockParams block_c;  // queries T, kv P
  CmeBlockParams block_d;  // queries T, kv A
  GateParams gate;
  DownProjParams proj;
};

// Options for one graph construction pass.
struct BlockRun {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  std::vector<Matrix>* attention_probs = nullptr;  // filled with each CMA's row-softmax
};

ad::Var cma_node(ad::Tape& t, CmaParams& p, ad::Var queries, ad::Var keysvalues,
                 std::vector<Matrix>* attention_probs = nullptr);
ad::Var cme_block_node(ad::Tape& t, CmeBlockParams& p, ad::Var queries, ad::Var keysvalues,
                       const BlockRun& run = {});

struct FusionNodes {
  ad::Var P;        // J' x d, block B output
  ad::Var R;        // M x d, speech-aware word reps
  ad::Var q_raw;    // M x d, word-aware speech reps
  ad::Var gate;     // M x d, sigmoid gate values
  ad::Var q_gated;  // M x d
  ad::Var fused;    // M x d, down-projected [q_gated ; R]
  ad::Var pooled;   // 1 x 2d, [maxpool(A) ; maxpool(fused)]
};

FusionNodes fuse_node(ad::Tape& t, FusionParams& p, ad::Var A, ad::Var T, const BlockRun& run = {});

// Value-level entry points mirroring the module operations. They build a
// throwaway tape so the arithmetic path is identical to training.
Matrix cross_modal_attention(CmaParams& p, const Matrix& queries, const Matrix& keysvalues);
Matrix cme_block(CmeBlockParams& p, const Matrix& queries, const Matrix& keysvalues);
Matrix speech_aware_word_reps(CmeBlockParams& block_b, CmeBlockParams& block_c, const Matrix& A,
                              const Matrix& T);
Matrix word_aware_speech_reps(CmeBlockParams& block_d, const Matrix& A, const Matrix& T);
std::pair<Matrix, Matrix> acoustic_gate(GateParams& p, const Matrix& R, const Matrix& q_raw);

struct FusionOutput {
  Matrix P, R, q_raw, gate, q_gated, fused;
  Eigen::RowVectorXd pooled;  // width 2d
};
FusionOutput fuse(FusionParams& p, const Matrix& A, const Matrix& T);

}  // namespace mmfuse
