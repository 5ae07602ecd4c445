#pragma once

#include <string>
#include <vector>

#include "dida/tensor.hpp"

namespace dida {

// Named handle to a model tensor. Buffers (running stats) ride along for
// checkpointing but are never optimized.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool is_buffer = false;
};

template <typename T>
struct ParamGroup {
  std::vector<ParamRef<T>> params;
  double lr_multiplier = 1.0;
};

struct OptimOpts {
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class OptKind { kSgdMomentum, kAdam };

template <typename T>
class Optimizer {
 public:
  Optimizer(OptKind kind, std::vector<ParamGroup<T>> groups,
            OptimOpts opts = {});

  // One update with the given base learning rate; each group's multiplier is
  // applied on top. Throws if any registered parameter is missing its grad.
  void step(double lr);
  void zero_grad();
  int64_t step_count() const { return t_; }

 private:
  OptKind kind_;
  std::vector<ParamGroup<T>> groups_;
  OptimOpts opts_;
  int64_t t_ = 0;
  // Flattened per-parameter state: velocity for SGD, (m, v) for Adam.
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// 0.5 * lr0 * (1 + cos(pi * step / total_steps)), clamped at 0.
double cosine_lr(int64_t step, int64_t total_steps, double lr0);

}  // namespace dida
