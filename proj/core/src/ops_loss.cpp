#include <cmath>
#include <vector>

#include "dida/ops.hpp"

namespace dida {

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int> labels,
                                std::span<const T> sample_weights) {
  if (!logits.defined() || logits.ndim() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be (N,K)");
  int64_t n = logits.dim(0), k = logits.dim(1);
  if (n < 1) throw ShapeError("softmax_cross_entropy: empty batch");
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("softmax_cross_entropy: got " +
                     std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(n));
  if (!sample_weights.empty() &&
      static_cast<int64_t>(sample_weights.size()) != n)
    throw ShapeError("softmax_cross_entropy: weights must match batch");
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(y) +
                       " outside [0," + std::to_string(k) + ")");

  const T* xd = logits.data().data();
  std::vector<T> logp(static_cast<size_t>(n * k));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = xd + i * k;
    T m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    T lse = m + std::log(sum);
    T* lp = logp.data() + i * k;
    for (int64_t j = 0; j < k; ++j) lp[j] = row[j] - lse;
  }

  std::vector<T> weights(sample_weights.begin(), sample_weights.end());
  if (weights.empty())
    weights.assign(static_cast<size_t>(n), T(1) / static_cast<T>(n));
  std::vector<int> labs(labels.begin(), labels.end());

  T loss = T(0);
  for (int64_t i = 0; i < n; ++i)
    loss -= weights[static_cast<size_t>(i)] *
            logp[static_cast<size_t>(i * k + labs[static_cast<size_t>(i)])];

  auto xn = logits.node();
  return detail::make_result<T>(
      Shape{}, {loss}, {logits},
      [xn, n, k, logp = std::move(logp), weights = std::move(weights),
       labs = std::move(labs)](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        T g0 = self.grad[0];
        for (int64_t i = 0; i < n; ++i) {
          T wi = weights[static_cast<size_t>(i)] * g0;
          const T* lp = logp.data() + i * k;
          T* dst = xn->grad.data() + i * k;
          int y = labs[static_cast<size_t>(i)];
          for (int64_t j = 0; j < k; ++j) {
            T p = std::exp(lp[j]);
            dst[j] += wi * (p - (j == y ? T(1) : T(0)));
          }
        }
      });
}

template Tensor<float> softmax_cross_entropy<float>(const Tensor<float>&,
                                                    std::span<const int>,
                                                    std::span<const float>);
template Tensor<double> softmax_cross_entropy<double>(const Tensor<double>&,
                                                      std::span<const int>,
                                                      std::span<const double>);

}  // namespace dida
