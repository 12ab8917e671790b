#pragma once

#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

struct ClassifierParams {
  Param w;  // 2d x 4
  Param b;  // 1 x 4
};

// Linear head over un-pooled speech encodings; vocabulary is the ordered
// character set with the blank at index 0, so V = charset.size() + 1.
struct CtcHeadParams {
  Param w;  // d x V
  Param b;  // 1 x V
  std::string charset;

  int vocab_size() const { return static_cast<int>(charset.size()) + 1; }
};

struct LossConfig {
  double alpha = 0.1;  // CTC weight
  double beta = 0.1;   // SCL weight
  double gamma = 0.1;  // ACL weight
  double tau = 0.1;    // contrastive temperature
  bool exclude_self = true;
  bool normalize_reps = true;
};

void validate_loss_config(const LossConfig& cfg);

// --- graph builders ---------------------------------------------------------

ad::Var classifier_logits_node(ad::Tape& t, ClassifierParams& p, ad::Var pooled);  // 1 x 4
ad::Var ctc_logprobs_node(ad::Tape& t, CtcHeadParams& p, ad::Var A);               // J' x V
ad::Var scl_loss_node(ad::Tape& t, ad::Var reps, const std::vector<int>& labels, const LossConfig& cfg);
ad::Var acl_loss_node(ad::Tape& t, ad::Var reps, ad::Var reps_aug, const LossConfig& cfg);

// --- value-level operations ---------------------------------------------------

// yhat = softmax(W_p^T [maxpool(A); maxpool(fused)] + B_p)
Eigen::Vector4d classify(ClassifierParams& p, const Matrix& A, const Matrix& fused);
Eigen::Vector4d classify_pooled(ClassifierParams& p, const Eigen::RowVectorXd& pooled);

double cross_entropy(const Eigen::Vector4d& yhat, int y);

Matrix ctc_log_probs(CtcHeadParams& p, const Matrix& A);
double ctc_loss(const Matrix& logprobs, const std::vector<int>& target);

double scl_loss(const Matrix& reps, const std::vector<int>& labels, const LossConfig& cfg);
double acl_loss(const Matrix& reps, const Matrix& reps_aug, const LossConfig& cfg);

// ce + alpha*ctc + beta*scl + gamma*acl. NaN components raise DivergenceError.
double total_loss(double ce, double ctc, double scl, double acl, const LossConfig& cfg);

}  // namespace mmfuse
