#include "dida/optim.hpp"

#include <cmath>

namespace dida {

template <typename T>
Optimizer<T>::Optimizer(OptKind kind, std::vector<ParamGroup<T>> groups,
                        OptimOpts opts)
    : kind_(kind), groups_(std::move(groups)), opts_(opts) {
  for (auto& g : groups_)
    for (auto& p : g.params) {
      if (p.is_buffer)
        throw ValueError("optimizer: buffer '" + p.name +
                         "' cannot be optimized");
      if (!p.tensor.requires_grad())
        throw ValueError("optimizer: parameter '" + p.name +
                         "' does not require grad");
      size_t n = static_cast<size_t>(p.tensor.numel());
      m_.emplace_back(n, T(0));
      if (kind_ == OptKind::kAdam) v_.emplace_back(n, T(0));
    }
}

template <typename T>
void Optimizer<T>::step(double lr) {
  ++t_;
  size_t slot = 0;
  for (auto& g : groups_) {
    T lr_eff = static_cast<T>(lr * g.lr_multiplier);
    for (auto& p : g.params) {
      if (!p.tensor.has_grad())
        throw ValueError("optimizer: parameter '" + p.name +
                         "' has no gradient; run backward first");
      auto grad = p.tensor.grad();
      auto val = p.tensor.raw_data();
      auto& m = m_[slot];
      if (kind_ == OptKind::kSgdMomentum) {
        T mu = static_cast<T>(opts_.momentum);
        for (size_t i = 0; i < val.size(); ++i) {
          m[i] = mu * m[i] + grad[i];
          val[i] -= lr_eff * m[i];
        }
      } else {
        auto& v = v_[slot];
        T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        T eps = static_cast<T>(opts_.eps);
        T bc1 = T(1) - static_cast<T>(std::pow(opts_.beta1, t_));
        T bc2 = T(1) - static_cast<T>(std::pow(opts_.beta2, t_));
        for (size_t i = 0; i < val.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * grad[i];
          v[i] = b2 * v[i] + (T(1) - b2) * grad[i] * grad[i];
          T mhat = m[i] / bc1;
          T vhat = v[i] / bc2;
          val[i] -= lr_eff * mhat / (std::sqrt(vhat) + eps);
        }
      }
      ++slot;
    }
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.tensor.zero_grad();
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0) {
  if (total_steps <= 0)
    throw ValueError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw ValueError("cosine_lr: step outside [0, total_steps]");
  double lr = 0.5 * lr0 *
              (1.0 + std::cos(M_PI * static_cast<double>(step) /
                              static_cast<double>(total_steps)));
  return lr > 0.0 ? lr : 0.0;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dida
