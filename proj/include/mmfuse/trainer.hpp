#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfuse/augment.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

// Ablation presets: each zeroes one auxiliary weight and drops that term
// from the gradient graph entirely.
enum class Preset { Full, WoCtc, WoScl, WoAcl, CeOnly };

Preset parse_preset(const std::string& s);
std::string preset_name(Preset p);
LossConfig apply_preset(LossConfig cfg, Preset p);

struct TrainConfig {
  double learning_rate = 1e-3;  // paper-scale profile uses 1e-5
  int batch_size = 4;
  int accum_steps = 4;
  int epochs = 30;  // paper-scale profile uses 100
  std::uint64_t seed = 1;
  LossConfig loss;
  Preset preset = Preset::Full;
  std::string optimizer = "adam";  // "sgd" keeps the determinism checks simple
  double dropout = 0.0;
  bool regenerate_augment_per_step = false;  // default: one view per epoch
  bool keep_best_by_train_loss = false;      // default: final-epoch parameters
};

void validate_train_config(const TrainConfig& cfg);

struct EpochStats {
  double ce = 0.0;
  double ctc = 0.0;
  double scl = 0.0;
  double acl = 0.0;
  double total = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::vector<long> steps_per_epoch;  // optimizer updates per epoch
};

struct Metrics {
  double weighted_accuracy = 0.0;
  double unweighted_accuracy = 0.0;
  std::array<std::array<long, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]

  long total() const;
};

std::vector<int> indices_of_sessions(const Dataset& d, const std::vector<int>& sessions);

// WA = overall correct fraction; UA = mean per-class recall over classes
// present in the truth vector; confusion[true][predicted] counts.
Metrics metrics_from_predictions(const std::vector<int>& truths, const std::vector<int>& predictions);

// Trains in place over the given utterance indices. `aug` may be null when
// the ACL weight is zero. Deterministic for a fixed config and seed.
TrainHistory train_model(Model& m, const Dataset& d, const std::vector<int>& indices,
                         const TrainConfig& cfg, const AugmentContext* aug);

// Argmax classification metrics. Honors MMFUSE_THREADS for fan-out; the
// reduction order is fixed regardless of thread count.
Metrics evaluate_model(Model& m, const Dataset& d, const std::vector<int>& indices);

struct FoldResult {
  int test_session = 0;
  Metrics metrics;
  TrainHistory history;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_weighted_accuracy = 0.0;
};

// Leave-one-session-out protocol: one fold per session, model re-initialized
// from the same seed each fold, mean weighted accuracy across folds.
CvResult cross_validate(const Dataset& d, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const AugmentContext* aug);

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);
std::string metrics_to_json(const Metrics& m);
void write_metrics_json(const Metrics& m, const std::filesystem::path& path);
void write_confusion_csv(const Metrics& m, const std::filesystem::path& path);

}  // namespace mmfuse
