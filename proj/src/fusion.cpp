#include "mmfuse/fusion.hpp"

#include <cmath>

namespace mmfuse {

using namespace ad;

Var cma_node(Tape& t, CmaParams& p, Var queries, Var keysvalues, std::vector<Matrix>* attention_probs) {
  const int d = p.dim();
  if (t.val(queries).cols() != d || t.val(keysvalues).cols() != d)
    throw ShapeError("cma: query/key width must equal d=" + std::to_string(d));
  const int h = p.heads();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d) / h);

  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    Var q = matmul_nt(queries, t.param(p.wq[static_cast<std::size_t>(i)]));     // n_q x d/h
    Var k = matmul_nt(keysvalues, t.param(p.wk[static_cast<std::size_t>(i)]));  // n_kv x d/h
    Var v = matmul_nt(keysvalues, t.param(p.wv[static_cast<std::size_t>(i)]));  // n_kv x d/h
    Var scores = scale(matmul_nt(q, k), inv_scale);                             // n_q x n_kv
    Var probs = softmax_rows(scores);
    if (attention_probs) attention_probs->push_back(t.val(probs));
    head_outputs.push_back(matmul(probs, v));
  }
  Var heads = (h == 1) ? head_outputs.front() : concat_cols(head_outputs);
  return matmul_nt(heads, t.param(p.wo));
}

Var cme_block_node(Tape& t, CmeBlockParams& p, Var queries, Var keysvalues, const BlockRun& run) {
  Var attn = cma_node(t, p.cma, queries, keysvalues, run.attention_probs);
  if (run.dropout > 0.0 && run.rng) attn = dropout(attn, run.dropout, *run.rng);
  Var x = layer_norm(add(queries, attn), t.param(p.ln1_gain), t.param(p.ln1_bias));

  Var hidden = gelu(add_rowvec(matmul_nt(x, t.param(p.ff1_w)), t.param(p.ff1_b)));
  Var ff = add_rowvec(matmul_nt(hidden, t.param(p.ff2_w)), t.param(p.ff2_b));
  if (run.dropout > 0.0 && run.rng) ff = dropout(ff, run.dropout, *run.rng);
  return layer_norm(add(x, ff), t.param(p.ln2_gain), t.param(p.ln2_bias));
}

FusionNodes fuse_node(Tape& t, FusionParams& p, Var A, Var T, const BlockRun& run) {
  FusionNodes out;
  out.P = cme_block_node(t, p.block_b, A, T, run);      // J' x d
  out.R = cme_block_node(t, p.block_c, T, out.P, run);  // M x d
  out.q_raw = cme_block_node(t, p.block_d, T, A, run);  // M x d

  Var gate_in = concat_cols({out.R, out.q_raw});  // M x 2d
  out.gate = sigmoid(add_rowvec(matmul(gate_in, t.param(p.gate.w)), t.param(p.gate.b)));
  out.q_gated = hadamard(out.gate, out.q_raw);

  Var cat = concat_cols({out.q_gated, out.R});  // M x 2d
  out.fused = add_rowvec(matmul(cat, t.param(p.proj.w)), t.param(p.proj.b));
  out.pooled = concat_cols({maxpool_rows(A), maxpool_rows(out.fused)});
  return out;
}

// --- value-level wrappers ----------------------------------------------------

Matrix cross_modal_attention(CmaParams& p, const Matrix& queries, const Matrix& keysvalues) {
  Tape t;
  return t.val(cma_node(t, p, t.constant(queries), t.constant(keysvalues)));
}

Matrix cme_block(CmeBlockParams& p, const Matrix& queries, const Matrix& keysvalues) {
  Tape t;
  return t.val(cme_block_node(t, p, t.constant(queries), t.constant(keysvalues)));
}

Matrix speech_aware_word_reps(CmeBlockParams& block_b, CmeBlockParams& block_c, const Matrix& A,
                              const Matrix& T) {
  Tape t;
  Var va = t.constant(A), vt = t.constant(T);
  Var P = cme_block_node(t, block_b, va, vt);
  return t.val(cme_block_node(t, block_c, vt, P));
}

Matrix word_aware_speech_reps(CmeBlockParams& block_d, const Matrix& A, const Matrix& T) {
  Tape t;
  return t.val(cme_block_node(t, block_d, t.constant(T), t.constant(A)));
}

std::pair<Matrix, Matrix> acoustic_gate(GateParams& p, const Matrix& R, const Matrix& q_raw) {
  if (R.rows() != q_raw.rows() || R.cols() != q_raw.cols())
    throw ShapeError("acoustic_gate: R and Q must have matching shapes");
  Tape t;
  Var gate_in = concat_cols({t.constant(R), t.constant(q_raw)});
  Var g = sigmoid(add_rowvec(matmul(gate_in, t.param(p.w)), t.param(p.b)));
  Var gated = hadamard(g, t.constant(q_raw));
  return {t.val(g), t.val(gated)};
}

FusionOutput fuse(FusionParams& p, const Matrix& A, const Matrix& T) {
  Tape t;
  FusionNodes n = fuse_node(t, p, t.constant(A), t.constant(T));
  FusionOutput out;
  out.P = t.val(n.P);
  out.R = t.val(n.R);
  out.q_raw = t.val(n.q_raw);
  out.gate = t.val(n.gate);
  out.q_gated = t.val(n.q_gated);
  out.fused = t.val(n.fused);
  out.pooled = t.val(n.pooled).row(0);
  return out;
}

}  // namespace mmfuse
