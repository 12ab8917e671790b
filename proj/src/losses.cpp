#include "mmfuse/losses.hpp"

#include <cmath>

namespace mmfuse {

using namespace ad;

void validate_loss_config(const LossConfig& cfg) {
  if (cfg.tau <= 0.0) throw ConfigError("loss: tau must be positive");
  if (cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.gamma < 0.0)
    throw ConfigError("loss: alpha, beta, gamma must be non-negative");
}

Var classifier_logits_node(Tape& t, ClassifierParams& p, Var pooled) {
  if (t.val(pooled).rows() != 1 || t.val(pooled).cols() != p.w.v.rows())
    throw ShapeError("classifier: pooled input must be 1 x " + std::to_string(p.w.v.rows()));
  return add_rowvec(matmul(pooled, t.param(p.w)), t.param(p.b));
}

Var ctc_logprobs_node(Tape& t, CtcHeadParams& p, Var A) {
  if (t.val(A).cols() != p.w.v.rows())
    throw ShapeError("ctc head: encoder width " + std::to_string(t.val(A).cols()) +
                     " does not match W_c");
  return log_softmax_rows(add_rowvec(matmul(A, t.param(p.w)), t.param(p.b)));
}

namespace {

// Positive sets per anchor. With exclude_self the anchor itself never counts.
std::vector<std::vector<int>> positive_sets(const std::vector<int>& labels, bool exclude_self) {
  const int n = static_cast<int>(labels.size());
  std::vector<std::vector<int>> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (exclude_self && j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)])
        pos[static_cast<std::size_t>(i)].push_back(j);
    }
  return pos;
}

}  // namespace

Var scl_loss_node(Tape& t, Var reps, const std::vector<int>& labels, const LossConfig& cfg) {
  validate_loss_config(cfg);
  const int n = static_cast<int>(t.val(reps).rows());
  if (n < 2) throw ConfigError("scl: batch of at least 2 required");
  if (static_cast<int>(labels.size()) != n) throw ShapeError("scl: one label per row required");

  Var z = cfg.normalize_reps ? l2_normalize_rows(reps) : reps;
  Var logits = scale(matmul_nt(z, z), 1.0 / cfg.tau);
  if (cfg.exclude_self) logits = set_diag(logits, -1e30);
  Var lsm = log_softmax_rows(logits);

  const auto pos = positive_sets(labels, cfg.exclude_self);
  int anchors_with_positives = 0;
  for (const auto& pi : pos)
    if (!pi.empty()) ++anchors_with_positives;
  if (anchors_with_positives == 0) return t.constant(Matrix::Zero(1, 1));

  Matrix weights = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto& pi = pos[static_cast<std::size_t>(i)];
    if (pi.empty()) continue;
    const double w = -1.0 / (static_cast<double>(anchors_with_positives) * static_cast<double>(pi.size()));
    for (int j : pi) weights(i, j) = w;
  }
  return sum_weighted(lsm, std::move(weights));
}

Var acl_loss_node(Tape& t, Var reps, Var reps_aug, const LossConfig& cfg) {
  validate_loss_config(cfg);
  if (t.val(reps).rows() != t.val(reps_aug).rows() || t.val(reps).cols() != t.val(reps_aug).cols())
    throw ShapeError("acl: base and augmented batches must match row for row");
  const int n = static_cast<int>(t.val(reps).rows());
  Var z = cfg.normalize_reps ? l2_normalize_rows(reps) : reps;
  Var za = cfg.normalize_reps ? l2_normalize_rows(reps_aug) : reps_aug;
  Var logits = scale(matmul_nt(z, za), 1.0 / cfg.tau);
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  return nll_rows(log_softmax_rows(logits), diag);
}

// --- value-level ----------------------------------------------------------

Eigen::Vector4d classify_pooled(ClassifierParams& p, const Eigen::RowVectorXd& pooled) {
  Tape t;
  Var logits = classifier_logits_node(t, p, t.constant(pooled));
  Matrix probs = t.val(softmax_rows(logits));
  return probs.row(0).transpose();
}

Eigen::Vector4d classify(ClassifierParams& p, const Matrix& A, const Matrix& fused) {
  Tape t;
  Var pooled = concat_cols({maxpool_rows(t.constant(A)), maxpool_rows(t.constant(fused))});
  Var logits = classifier_logits_node(t, p, pooled);
  Matrix probs = t.val(softmax_rows(logits));
  return probs.row(0).transpose();
}

double cross_entropy(const Eigen::Vector4d& yhat, int y) {
  if (y < 0 || y > 3) throw SchemaError("cross_entropy: class index out of range");
  return -std::log(std::max(yhat(y), 1e-12));
}

Matrix ctc_log_probs(CtcHeadParams& p, const Matrix& A) {
  Tape t;
  return t.val(ctc_logprobs_node(t, p, t.constant(A)));
}

double ctc_loss(const Matrix& logprobs, const std::vector<int>& target) {
  Tape t;
  return t.val(ctc_loss_node(t.constant(logprobs), target))(0, 0);
}

double scl_loss(const Matrix& reps, const std::vector<int>& labels, const LossConfig& cfg) {
  Tape t;
  return t.val(scl_loss_node(t, t.constant(reps), labels, cfg))(0, 0);
}

double acl_loss(const Matrix& reps, const Matrix& reps_aug, const LossConfig& cfg) {
  Tape t;
  return t.val(acl_loss_node(t, t.constant(reps), t.constant(reps_aug), cfg))(0, 0);
}

double total_loss(double ce, double ctc, double scl, double acl, const LossConfig& cfg) {
  validate_loss_config(cfg);
  const double total = ce + cfg.alpha * ctc + cfg.beta * scl + cfg.gamma * acl;
  if (!std::isfinite(ce) || !std::isfinite(ctc) || !std::isfinite(scl) || !std::isfinite(acl) ||
      !std::isfinite(total))
    throw DivergenceError("total_loss: non-finite loss component");
  return total;
}

}  // namespace mmfuse
