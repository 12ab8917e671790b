#include "mmfuse/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace mmfuse {

using namespace ad;
namespace fs = std::filesystem;

Preset parse_preset(const std::string& s) {
  if (s == "full") return Preset::Full;
  if (s == "wo_ctc") return Preset::WoCtc;
  if (s == "wo_scl") return Preset::WoScl;
  if (s == "wo_acl") return Preset::WoAcl;
  if (s == "ce_only") return Preset::CeOnly;
  throw ConfigError("unknown preset: " + s);
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::Full: return "full";
    case Preset::WoCtc: return "wo_ctc";
    case Preset::WoScl: return "wo_scl";
    case Preset::WoAcl: return "wo_acl";
    case Preset::CeOnly: return "ce_only";
  }
  return "?";
}

LossConfig apply_preset(LossConfig cfg, Preset p) {
  switch (p) {
    case Preset::Full:
      break;
    case Preset::WoCtc:
      cfg.alpha = 0.0;
      break;
    case Preset::WoScl:
      cfg.beta = 0.0;
      break;
    case Preset::WoAcl:
      cfg.gamma = 0.0;
      break;
    case Preset::CeOnly:
      cfg.alpha = cfg.beta = cfg.gamma = 0.0;
      break;
  }
  return cfg;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.learning_rate < 0.0) throw ConfigError("train: learning rate must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.accum_steps < 1) throw ConfigError("train: accum_steps must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (cfg.optimizer != "adam" && cfg.optimizer != "sgd")
    throw ConfigError("train: optimizer must be adam or sgd");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("train: dropout must be in [0,1)");
  validate_loss_config(cfg.loss);
  const LossConfig eff = apply_preset(cfg.loss, cfg.preset);
  if ((eff.beta > 0.0 || eff.gamma > 0.0) && cfg.batch_size < 2)
    throw ConfigError("train: contrastive losses need batch_size >= 2");
}

long Metrics::total() const {
  long n = 0;
  for (const auto& row : confusion)
    for (long v : row) n += v;
  return n;
}

std::vector<int> indices_of_sessions(const Dataset& d, const std::vector<int>& sessions) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(d.utterances.size()); ++i) {
    const int s = d.utterances[static_cast<std::size_t>(i)].session_id;
    if (std::find(sessions.begin(), sessions.end(), s) != sessions.end()) out.push_back(i);
  }
  return out;
}

namespace {

class Optimizer {
 public:
  Optimizer(const std::string& kind, double lr, const std::vector<Param*>& params)
      : adam_(kind == "adam"), lr_(lr), params_(params) {
    if (adam_) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (Param* p : params) {
        m_.push_back(Matrix::Zero(p->v.rows(), p->v.cols()));
        v_.push_back(Matrix::Zero(p->v.rows(), p->v.cols()));
      }
    }
  }

  // Applies one update from the accumulated gradients scaled by grad_scale,
  // then clears every gradient buffer (frozen ones included).
  void step(double grad_scale) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param* p = params_[i];
      if (p->trainable) {
        const Matrix g = p->g * grad_scale;
        if (adam_) {
          m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
          v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
          const double c1 = 1.0 - std::pow(kBeta1, t_);
          const double c2 = 1.0 - std::pow(kBeta2, t_);
          p->v -= lr_ * (m_[i] / c1).cwiseQuotient(((v_[i] / c2).cwiseSqrt().array() + kEps).matrix());
        } else {
          p->v -= lr_ * g;
        }
      }
      p->zero_grad();
    }
  }

 private:
  bool adam_;
  double lr_;
  std::vector<Param*> params_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

struct BatchLossValues {
  double ce = 0.0, ctc = 0.0, scl = 0.0, acl = 0.0, total = 0.0;
};

// Builds the multi-task loss for one micro-batch and runs backward.
// Components with zero weight are left out of the graph entirely.
BatchLossValues batch_backward(Model& m, const Dataset& d, const std::vector<int>& batch,
                               const LossConfig& loss, const TrainConfig& cfg,
                               const AugmentContext* aug, std::uint64_t view_epoch,
                               std::mt19937_64& dropout_rng) {
  Tape t;
  ForwardOptions opt;
  opt.dropout = cfg.dropout;
  opt.rng = &dropout_rng;
  opt.want_ctc = loss.alpha > 0.0;

  std::vector<Var> logits_rows, pooled_rows;
  std::vector<int> labels;
  Var ctc_sum{};
  int ctc_count = 0;
  for (int idx : batch) {
    const Utterance& u = d.utterances[static_cast<std::size_t>(idx)];
    ForwardNodes f = model_forward(t, m, u, opt);
    logits_rows.push_back(f.logits);
    pooled_rows.push_back(f.fusion.pooled);
    labels.push_back(map_label(u.raw_label));
    if (loss.alpha > 0.0) {
      const auto target = transcript_to_target(u.transcript, m.ctc_head.charset);
      Var sample_ctc = ctc_loss_node(f.ctc_logprobs, target);
      ctc_sum = (ctc_count == 0) ? sample_ctc : add(ctc_sum, sample_ctc);
      ++ctc_count;
    }
  }

  const int S = static_cast<int>(batch.size());
  Var ce = nll_rows(log_softmax_rows(concat_rows(logits_rows)), labels);
  Var total = ce;

  BatchLossValues values;
  values.ce = t.val(ce)(0, 0);

  if (loss.alpha > 0.0 && ctc_count > 0) {
    Var ctc_mean = scale(ctc_sum, 1.0 / ctc_count);
    values.ctc = t.val(ctc_mean)(0, 0);
    total = add(total, scale(ctc_mean, loss.alpha));
  }

  if (loss.beta > 0.0 && S >= 2) {
    Var reps = concat_rows(pooled_rows);
    Var scl = scl_loss_node(t, reps, labels, loss);
    values.scl = t.val(scl)(0, 0);
    total = add(total, scale(scl, loss.beta));
  }

  if (loss.gamma > 0.0) {
    if (!aug) throw ConfigError("train: ACL weight is positive but no augmentation context was given");
    std::vector<Var> pooled_aug_rows;
    ForwardOptions aug_opt = opt;
    aug_opt.want_ctc = false;
    for (int idx : batch) {
      const Utterance view = aug->view_of(d.utterances[static_cast<std::size_t>(idx)], view_epoch);
      ForwardNodes f = model_forward(t, m, view, aug_opt);
      pooled_aug_rows.push_back(f.fusion.pooled);
    }
    Var acl = acl_loss_node(t, concat_rows(pooled_rows), concat_rows(pooled_aug_rows), loss);
    values.acl = t.val(acl)(0, 0);
    total = add(total, scale(acl, loss.gamma));
  }

  values.total = t.val(total)(0, 0);
  if (std::isfinite(values.total)) t.backward(total);
  return values;
}

}  // namespace

TrainHistory train_model(Model& m, const Dataset& d, const std::vector<int>& indices,
                         const TrainConfig& cfg, const AugmentContext* aug) {
  validate_train_config(cfg);
  if (indices.empty()) throw ConfigError("train: empty training set");
  const LossConfig loss = apply_preset(cfg.loss, cfg.preset);

  if (loss.alpha > 0.0) {
    Dataset view;
    for (int i : indices) view.utterances.push_back(d.utterances[static_cast<std::size_t>(i)]);
    validate_ctc_feasibility(m, view);
  }

  std::vector<Param*> params = m.parameters();
  Optimizer optimizer(cfg.optimizer, cfg.learning_rate, params);
  for (Param* p : params) p->zero_grad();

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);

  TrainHistory history;
  double best_total = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = indices;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    long steps = 0;
    int accumulated = 0;
    long step_in_epoch = 0;
    const int n = static_cast<int>(order.size());

    for (int at = 0; at < n; at += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, n - at);
      const std::vector<int> batch(order.begin() + at, order.begin() + at + take);
      const std::uint64_t view_epoch =
          cfg.regenerate_augment_per_step
              ? static_cast<std::uint64_t>(epoch) * 1000003ULL + static_cast<std::uint64_t>(step_in_epoch)
              : static_cast<std::uint64_t>(epoch);
      const BatchLossValues values =
          batch_backward(m, d, batch, loss, cfg, aug, view_epoch, dropout_rng);
      if (!std::isfinite(values.total))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) + ", micro-batch " +
                              std::to_string(step_in_epoch + 1));
      ++step_in_epoch;
      ++accumulated;
      stats.ce += values.ce * take;
      stats.ctc += values.ctc * take;
      stats.scl += values.scl * take;
      stats.acl += values.acl * take;
      stats.total += values.total * take;
      if (accumulated == cfg.accum_steps || at + take >= n) {
        optimizer.step(1.0 / accumulated);
        accumulated = 0;
        ++steps;
      }
    }

    stats.ce /= n;
    stats.ctc /= n;
    stats.scl /= n;
    stats.acl /= n;
    stats.total /= n;
    history.epochs.push_back(stats);
    history.steps_per_epoch.push_back(steps);

    if (cfg.keep_best_by_train_loss && stats.total < best_total) {
      best_total = stats.total;
      best_params.clear();
      for (Param* p : params) best_params.push_back(p->v);
    }
  }

  if (cfg.keep_best_by_train_loss && !best_params.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->v = best_params[i];
  return history;
}

namespace {

int evaluation_threads() {
  const char* env = std::getenv("MMFUSE_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return std::max(1, n);
}

int predict_one(Model& m, const Utterance& u) {
  Tape t;
  ForwardOptions opt;
  opt.want_ctc = false;
  ForwardNodes f = model_forward(t, m, u, opt);
  const Matrix& logits = t.val(f.logits);
  Eigen::Index best = 0;
  logits.row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Metrics metrics_from_predictions(const std::vector<int>& truths, const std::vector<int>& predictions) {
  if (truths.empty()) throw EvalError("evaluate: empty dataset");
  if (truths.size() != predictions.size()) throw ShapeError("metrics: one prediction per truth required");

  Metrics metrics;
  long correct = 0;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    const int truth = truths[k];
    const int pred = predictions[k];
    if (truth < 0 || truth >= kNumClasses || pred < 0 || pred >= kNumClasses)
      throw SchemaError("metrics: class index out of range");
    ++metrics.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    if (truth == pred) ++correct;
  }
  metrics.weighted_accuracy = static_cast<double>(correct) / static_cast<double>(truths.size());

  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    long row = 0;
    for (int j = 0; j < kNumClasses; ++j)
      row += metrics.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
    if (row > 0) {
      recall_sum += static_cast<double>(metrics.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                    static_cast<double>(row);
      ++present;
    }
  }
  metrics.unweighted_accuracy = present > 0 ? recall_sum / present : 0.0;
  return metrics;
}

Metrics evaluate_model(Model& m, const Dataset& d, const std::vector<int>& indices) {
  if (indices.empty()) throw EvalError("evaluate: empty dataset");
  std::vector<int> predictions(indices.size(), -1);

  const int threads = std::min<int>(evaluation_threads(), static_cast<int>(indices.size()));
  if (threads <= 1) {
    for (std::size_t k = 0; k < indices.size(); ++k)
      predictions[k] = predict_one(m, d.utterances[static_cast<std::size_t>(indices[k])]);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> cursor{0};
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t k = cursor.fetch_add(1);
          if (k >= indices.size()) break;
          predictions[k] = predict_one(m, d.utterances[static_cast<std::size_t>(indices[k])]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<int> truths(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k)
    truths[k] = map_label(d.utterances[static_cast<std::size_t>(indices[k])].raw_label);
  return metrics_from_predictions(truths, predictions);
}

CvResult cross_validate(const Dataset& d, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const AugmentContext* aug) {
  const auto sessions = d.distinct_sessions();
  const FoldPlan plan = make_folds(d, static_cast<int>(sessions.size()));

  CvResult result;
  double wa_sum = 0.0;
  for (const Fold& fold : plan.folds) {
    Model model = make_model(model_cfg);  // fresh init, same seed, every fold
    const std::vector<int> train_idx = indices_of_sessions(d, fold.train_sessions);
    const std::vector<int> test_idx = indices_of_sessions(d, {fold.test_session});

    FoldResult fr;
    fr.test_session = fold.test_session;
    fr.history = train_model(model, d, train_idx, cfg, aug);
    fr.metrics = evaluate_model(model, d, test_idx);
    wa_sum += fr.metrics.weighted_accuracy;
    result.folds.push_back(std::move(fr));
  }
  result.mean_weighted_accuracy = result.folds.empty() ? 0.0 : wa_sum / result.folds.size();
  return result;
}

// --- reporting ---------------------------------------------------------------

void write_history_csv(const TrainHistory& h, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write history: " + path.string());
  os << "epoch,l_ce,l_ctc,l_scl,l_acl,total\n";
  os << std::setprecision(17);
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const EpochStats& s = h.epochs[e];
    os << (e + 1) << "," << s.ce << "," << s.ctc << "," << s.scl << "," << s.acl << "," << s.total
       << "\n";
  }
}

std::string metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["weighted_accuracy"] = m.weighted_accuracy;
  j["unweighted_accuracy"] = m.unweighted_accuracy;
  j["n"] = m.total();
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (const auto& row : m.confusion) conf.push_back(row);
  j["confusion"] = std::move(conf);
  return j.dump(2);
}

void write_metrics_json(const Metrics& m, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write metrics: " + path.string());
  os << metrics_to_json(m) << "\n";
}

void write_confusion_csv(const Metrics& m, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write confusion matrix: " + path.string());
  os << "true\\pred";
  for (int j = 0; j < kNumClasses; ++j) os << "," << class_name(j);
  os << "\n";
  for (int i = 0; i < kNumClasses; ++i) {
    os << class_name(i);
    for (int j = 0; j < kNumClasses; ++j)
      os << "," << m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    os << "\n";
  }
}

}  // namespace mmfuse
