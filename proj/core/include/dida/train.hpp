#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dida/data.hpp"
#include "dida/model.hpp"
#include "dida/optim.hpp"
#include "dida/tensor.hpp"

namespace dida {

// How the pseudo-label loss weights target samples: indicator 1{q >= tau},
// the confidence itself, or disabled entirely (source-only training).
enum class TargetLossMode { kHardThreshold, kSoftWeight, kOff };

TargetLossMode target_mode_from_string(std::string_view s);
std::string target_mode_name(TargetLossMode m);

struct TrainConfig {
  double tau = 0.95;
  int64_t epochs = 1;
  double base_lr = 2e-4;
  OptKind optimizer = OptKind::kAdam;
  bool cosine_schedule = true;
  double dida_lr_multiplier = 10.0;
  TargetLossMode target_mode = TargetLossMode::kHardThreshold;
  int64_t warmup_steps = 0;  // steps before the target loss activates
  int64_t eval_batch = 256;
  uint64_t seed = 0;
  // Keep the checkpoint with the best target-test accuracy; when false, the
  // last epoch wins (stricter hygiene: no target labels touch selection).
  bool best_by_target_acc = true;
  OptimOpts opt;

  void validate() const;
};

struct StepMetrics {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss_source = 0.0;
  double loss_target = 0.0;
  double loss = 0.0;
  double lr = 0.0;
  double coverage = 0.0;  // fraction of target batch with q >= tau
  std::optional<double> pseudo_accuracy;  // only with an oracle in tests
};

struct PseudoLabels {
  std::vector<int> labels;        // argmax, ties to the lowest class index
  std::vector<float> confidence;  // max softmax probability
};

// Mean cross-entropy over the K*B source samples.
TensorF loss_source(const TensorF& logits, std::span<const int> labels);

// Gradient-detached argmax labels and confidences from weak-view logits.
PseudoLabels pseudo_label(const TensorF& weak_logits);

// Per-sample weights before the 1/B factor.
std::vector<float> target_weights(const PseudoLabels& pl, double tau,
                                  TargetLossMode mode);

// (1/B) * sum_i w_i * CE(strong_logits_i, pseudo_label_i). Exactly zero (and
// graph-free) when every weight is zero.
TensorF loss_target(const TensorF& strong_logits, const PseudoLabels& pl,
                    std::span<const float> weights);

// Optimizer over the model parameters with the configured multiplier on the
// "dida." group.
Optimizer<float> make_optimizer(Model<float>& model, const TrainConfig& cfg);

// One optimization step over a domain batch. `target_oracle` (tests only)
// holds true labels for the whole target set, indexed by batch.target_indices,
// and feeds the pseudo_accuracy metric.
StepMetrics train_step(Model<float>& model, const DomainBatch& batch,
                       Optimizer<float>& opt, const TrainConfig& cfg,
                       int64_t step, int64_t total_steps,
                       std::span<const int> target_oracle = {});

// Top-1 accuracy, eval mode, no augmentation.
double evaluate(Model<float>& model, const LabeledSet& test,
                const Normalizer& norm, int64_t eval_batch = 256);

struct FitResult {
  int64_t steps = 0;
  double final_acc = -1.0;  // -1 when no eval set was given
  double best_acc = -1.0;
  int64_t best_epoch = -1;
  std::string metrics_path;
  std::string best_ckpt_path;
  std::string final_ckpt_path;
};

// Full training loop: epochs over target coverage, JSON-lines metrics,
// best/final checkpoints in out_dir.
FitResult fit(Model<float>& model, BatchSampler& sampler,
              const LabeledSet* eval_set, const Normalizer& norm,
              const TrainConfig& cfg, const std::string& out_dir,
              std::span<const int> target_oracle = {});

}  // namespace dida
