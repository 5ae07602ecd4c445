#include "dida/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dida/checkpoint.hpp"
#include "dida/error.hpp"
#include "dida/ops.hpp"

namespace dida {

TargetLossMode target_mode_from_string(std::string_view s) {
  if (s == "hard_threshold" || s == "hard") return TargetLossMode::kHardThreshold;
  if (s == "soft_weight" || s == "soft") return TargetLossMode::kSoftWeight;
  if (s == "off" || s == "none") return TargetLossMode::kOff;
  throw ConfigError("unknown target loss mode '" + std::string(s) +
                    "' (expected hard_threshold, soft_weight, or off)");
}

std::string target_mode_name(TargetLossMode m) {
  switch (m) {
    case TargetLossMode::kHardThreshold: return "hard_threshold";
    case TargetLossMode::kSoftWeight: return "soft_weight";
    case TargetLossMode::kOff: return "off";
  }
  throw ValueError("invalid TargetLossMode");
}

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("train.tau must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(dida_lr_multiplier > 0.0))
    throw ConfigError("train.dida_lr_multiplier must be positive");
  if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be >= 0");
  if (eval_batch < 1) throw ConfigError("train.eval_batch must be >= 1");
}

TensorF loss_source(const TensorF& logits, std::span<const int> labels) {
  if (logits.ndim() != 2)
    throw ShapeError("loss_source: logits must be (N, K)");
  if (static_cast<int64_t>(labels.size()) != logits.dim(0))
    throw ShapeError("loss_source: labels size must match logits rows");
  return softmax_cross_entropy(logits, labels);
}

PseudoLabels pseudo_label(const TensorF& weak_logits) {
  if (weak_logits.ndim() != 2)
    throw ShapeError("pseudo_label: logits must be (N, K)");
  const int64_t n = weak_logits.dim(0);
  const int64_t k = weak_logits.dim(1);
  if (k < 1) throw ShapeError("pseudo_label: need at least one class");
  auto v = weak_logits.data();
  PseudoLabels pl;
  pl.labels.resize(static_cast<size_t>(n));
  pl.confidence.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const float* row = v.data() + i * k;
    // Softmax in double with the max subtracted; argmax ties go to the
    // lowest class index (strict > while scanning upward).
    int best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j)
      denom += std::exp(static_cast<double>(row[j]) - row[best]);
    pl.labels[static_cast<size_t>(i)] = best;
    pl.confidence[static_cast<size_t>(i)] = static_cast<float>(1.0 / denom);
  }
  return pl;
}

std::vector<float> target_weights(const PseudoLabels& pl, double tau,
                                  TargetLossMode mode) {
  std::vector<float> w(pl.confidence.size(), 0.0f);
  switch (mode) {
    case TargetLossMode::kHardThreshold:
      for (size_t i = 0; i < w.size(); ++i)
        w[i] = (pl.confidence[i] >= tau) ? 1.0f : 0.0f;
      break;
    case TargetLossMode::kSoftWeight:
      for (size_t i = 0; i < w.size(); ++i) w[i] = pl.confidence[i];
      break;
    case TargetLossMode::kOff:
      break;
  }
  return w;
}

TensorF loss_target(const TensorF& strong_logits, const PseudoLabels& pl,
                    std::span<const float> weights) {
  if (strong_logits.ndim() != 2)
    throw ShapeError("loss_target: logits must be (N, K)");
  const size_t n = static_cast<size_t>(strong_logits.dim(0));
  if (pl.labels.size() != n || weights.size() != n)
    throw ShapeError("loss_target: labels/weights size must match logits rows");
  bool any = false;
  for (float w : weights) {
    if (w < 0.0f) throw ValueError("loss_target: negative sample weight");
    if (w > 0.0f) any = true;
  }
  if (!any) return TensorF::scalar(0.0f);
  std::vector<float> scaled(weights.begin(), weights.end());
  const float inv_b = 1.0f / static_cast<float>(n);
  for (float& w : scaled) w *= inv_b;
  return softmax_cross_entropy(strong_logits, std::span<const int>(pl.labels),
                               std::span<const float>(scaled));
}

Optimizer<float> make_optimizer(Model<float>& model, const TrainConfig& cfg) {
  ParamGroup<float> backbone;
  ParamGroup<float> dida;
  dida.lr_multiplier = cfg.dida_lr_multiplier;
  for (auto& p : model.named_params()) {
    if (p.name.rfind("dida.", 0) == 0)
      dida.params.push_back(p);
    else
      backbone.params.push_back(p);
  }
  std::vector<ParamGroup<float>> groups;
  groups.push_back(std::move(backbone));
  if (!dida.params.empty()) groups.push_back(std::move(dida));
  return Optimizer<float>(cfg.optimizer, std::move(groups), cfg.opt);
}

namespace {

double grad_norm(Model<float>& model) {
  double acc = 0.0;
  for (auto& p : model.named_params()) {
    if (!p.tensor.has_grad()) continue;
    for (float v : p.tensor.grad()) acc += static_cast<double>(v) * v;
  }
  return std::sqrt(acc);
}

}  // namespace

StepMetrics train_step(Model<float>& model, const DomainBatch& batch,
                       Optimizer<float>& opt, const TrainConfig& cfg,
                       int64_t step, int64_t total_steps,
                       std::span<const int> target_oracle) {
  if (total_steps < 1) throw ValueError("train_step: total_steps must be >= 1");
  if (step < 0 || step >= total_steps)
    throw ValueError("train_step: step out of range");

  StepMetrics m;
  m.step = step;
  m.lr = cfg.cosine_schedule ? cosine_lr(step, total_steps, cfg.base_lr)
                             : cfg.base_lr;

  RngStream mix_rng(derive_seed(cfg.seed, "mixstyle",
                                static_cast<uint64_t>(step)));
  auto src_out = model.forward(batch.source_x, /*training=*/true, &mix_rng);
  TensorF ls = loss_source(src_out.logits, batch.source_y);
  m.loss_source = static_cast<double>(ls.item());

  TensorF total = ls;
  bool have_target_graph = false;
  const bool target_active =
      cfg.target_mode != TargetLossMode::kOff && step >= cfg.warmup_steps;
  if (target_active) {
    PseudoLabels pl;
    {
      // Weak view: eval mode under no-grad, so batch-norm statistics and the
      // autodiff tape are untouched -- a fully masked step stays bit-identical
      // to a source-only step.
      NoGradGuard ng;
      pl = pseudo_label(model.forward(batch.target_weak, false).logits);
    }
    auto wts = target_weights(pl, cfg.tau, cfg.target_mode);
    const int64_t b = batch.target_weak.dim(0);
    int64_t accepted = 0;
    for (float c : pl.confidence)
      if (static_cast<double>(c) >= cfg.tau) ++accepted;
    m.coverage = static_cast<double>(accepted) / static_cast<double>(b);
    if (!target_oracle.empty() && accepted > 0) {
      if (batch.target_indices.size() != pl.labels.size())
        throw ValueError("train_step: batch lacks target indices for oracle");
      int64_t hit = 0;
      for (size_t i = 0; i < pl.labels.size(); ++i) {
        if (static_cast<double>(pl.confidence[i]) < cfg.tau) continue;
        const int64_t row = batch.target_indices[i];
        if (row < 0 || row >= static_cast<int64_t>(target_oracle.size()))
          throw ValueError("train_step: target index outside oracle range");
        if (pl.labels[i] == target_oracle[static_cast<size_t>(row)]) ++hit;
      }
      m.pseudo_accuracy =
          static_cast<double>(hit) / static_cast<double>(accepted);
    }
    bool any = false;
    for (float w : wts)
      if (w > 0.0f) { any = true; break; }
    if (any) {
      // The strong view also runs under eval-mode normalization: the student
      // then sees the same statistics the teacher used, and target batches
      // never perturb the running estimates. Letting strongly-augmented
      // target data update them corrupts the teacher's normalization a
      // little more each step, which measurably snowballs into
      // confidently-wrong pseudo labels. Gradients still flow; only the
      // normalization constants are frozen for this branch.
      auto strong_out = model.forward(batch.target_strong, /*training=*/false);
      TensorF lt = loss_target(strong_out.logits, pl, wts);
      m.loss_target = static_cast<double>(lt.item());
      total = add(ls, lt);
      have_target_graph = true;
    }
  }
  m.loss = have_target_graph ? static_cast<double>(total.item()) : m.loss_source;

  opt.zero_grad();
  total.backward();
  if (!std::isfinite(m.loss) || !std::isfinite(m.loss_source) ||
      !std::isfinite(m.loss_target)) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << ": L=" << m.loss
       << " L_s=" << m.loss_source << " L_t=" << m.loss_target
       << " lr=" << m.lr << " grad_norm=" << grad_norm(model);
    throw NumericError(os.str());
  }
  opt.step(m.lr);
  return m;
}

double evaluate(Model<float>& model, const LabeledSet& test,
                const Normalizer& norm, int64_t eval_batch) {
  if (test.count < 1) throw ValueError("evaluate: empty test set");
  if (eval_batch < 1) throw ValueError("evaluate: eval_batch must be >= 1");
  NoGradGuard ng;
  const int64_t plane = test.h * test.w;
  int64_t correct = 0;
  for (int64_t off = 0; off < test.count; off += eval_batch) {
    const int64_t n = std::min(eval_batch, test.count - off);
    TensorF x = norm.to_tensor(test.images.data() + off * plane, n, test.h,
                               test.w);
    auto out = model.forward(x, /*training=*/false);
    const int64_t k = out.logits.dim(1);
    auto v = out.logits.data();
    for (int64_t i = 0; i < n; ++i) {
      const float* row = v.data() + i * k;
      int64_t best = 0;
      for (int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      if (static_cast<int>(best) == test.labels[static_cast<size_t>(off + i)])
        ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.count);
}

namespace {

void emit_step_line(std::ostream& os, const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%lld,\"epoch\":%lld,\"L_s\":%.17g,\"L_t\":%.17g,"
                "\"L\":%.17g,\"lr\":%.17g,\"coverage\":%.17g",
                static_cast<long long>(m.step), static_cast<long long>(m.epoch),
                m.loss_source, m.loss_target, m.loss, m.lr, m.coverage);
  os << buf;
  if (m.pseudo_accuracy) {
    std::snprintf(buf, sizeof buf, ",\"pseudo_acc\":%.17g",
                  *m.pseudo_accuracy);
    os << buf;
  }
  os << "}\n";
}

void emit_epoch_line(std::ostream& os, int64_t step, int64_t epoch,
                     const double* acc) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "{\"step\":%lld,\"epoch\":%lld",
                static_cast<long long>(step), static_cast<long long>(epoch));
  os << buf;
  if (acc) {
    std::snprintf(buf, sizeof buf, ",\"acc\":%.17g", *acc);
    os << buf;
  }
  os << "}\n";
}

}  // namespace

FitResult fit(Model<float>& model, BatchSampler& sampler,
              const LabeledSet* eval_set, const Normalizer& norm,
              const TrainConfig& cfg, const std::string& out_dir,
              std::span<const int> target_oracle) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  FitResult res;
  res.metrics_path = (std::filesystem::path(out_dir) / "metrics.jsonl").string();
  res.best_ckpt_path = (std::filesystem::path(out_dir) / "best.ckpt").string();
  res.final_ckpt_path = (std::filesystem::path(out_dir) / "final.ckpt").string();

  std::ofstream log(res.metrics_path, std::ios::trunc);
  if (!log) throw IoError("fit: cannot open " + res.metrics_path);

  const int64_t spe = sampler.steps_per_epoch();
  const int64_t total = cfg.epochs * spe;
  res.steps = total;
  Optimizer<float> opt = make_optimizer(model, cfg);

  const bool track_best = cfg.best_by_target_acc && eval_set != nullptr;
  for (int64_t step = 0; step < total; ++step) {
    DomainBatch batch = sampler.next(step);
    StepMetrics m =
        train_step(model, batch, opt, cfg, step, total, target_oracle);
    m.epoch = step / spe;
    emit_step_line(log, m);

    if ((step + 1) % spe == 0) {
      const int64_t epoch = step / spe;
      if (eval_set != nullptr) {
        const double acc = evaluate(model, *eval_set, norm, cfg.eval_batch);
        emit_epoch_line(log, step, epoch, &acc);
        res.final_acc = acc;
        if (track_best && acc > res.best_acc) {
          res.best_acc = acc;
          res.best_epoch = epoch;
          auto tensors = model.named_tensors();
          save_checkpoint(res.best_ckpt_path, tensors);
        }
      } else {
        emit_epoch_line(log, step, epoch, nullptr);
      }
      log.flush();
    }
  }

  auto tensors = model.named_tensors();
  save_checkpoint(res.final_ckpt_path, tensors);
  if (!track_best) {
    // Without target-accuracy selection the last checkpoint is the answer.
    save_checkpoint(res.best_ckpt_path, tensors);
    res.best_acc = res.final_acc;
    res.best_epoch = cfg.epochs - 1;
  }
  return res;
}

}  // namespace dida
