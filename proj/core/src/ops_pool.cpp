#include <algorithm>

#include "dida/ops.hpp"

namespace dida {

template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
  if (!x.defined() || x.ndim() != 4)
    throw ShapeError("max_pool2x2: input must be (N,C,H,W)");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t ho = h / 2, wo = w / 2;
  if (ho < 1 || wo < 1)
    throw ShapeError("max_pool2x2: input too small " + shape_str(x.shape()));
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(n * c * ho * wo));
  // Winning input offsets, used to route grads back.
  std::vector<int64_t> arg(out.size());
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xp = xd + nc * h * w;
    T* op = out.data() + nc * ho * wo;
    int64_t* ap = arg.data() + nc * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        int64_t base = (oy * 2) * w + ox * 2;
        int64_t best = base;
        T bv = xp[base];
        const int64_t cand[3] = {base + 1, base + w, base + w + 1};
        for (int64_t idx : cand)
          if (xp[idx] > bv) {
            bv = xp[idx];
            best = idx;
          }
        op[oy * wo + ox] = bv;
        ap[oy * wo + ox] = nc * h * w + best;
      }
  }
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{n, c, ho, wo}, std::move(out), {x},
      [xn, arg = std::move(arg)](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[static_cast<size_t>(arg[i])] += self.grad[i];
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (!x.defined() || x.ndim() != 4)
    throw ShapeError("global_avg_pool: input must be (N,C,H,W)");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t plane = h * w;
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(n * c));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    T acc = T(0);
    const T* xp = xd + nc * plane;
    for (int64_t i = 0; i < plane; ++i) acc += xp[i];
    out[static_cast<size_t>(nc)] = acc / static_cast<T>(plane);
  }
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{n, c, 1, 1}, std::move(out), {x},
      [xn, plane](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        T inv = T(1) / static_cast<T>(plane);
        for (size_t nc = 0; nc < self.grad.size(); ++nc) {
          T g = self.grad[nc] * inv;
          T* dst = xn->grad.data() + static_cast<int64_t>(nc) * plane;
          for (int64_t i = 0; i < plane; ++i) dst[i] += g;
        }
      });
}

#define DIDA_INSTANTIATE_POOL(T)                  \
  template Tensor<T> max_pool2x2<T>(const Tensor<T>&); \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);

DIDA_INSTANTIATE_POOL(float)
DIDA_INSTANTIATE_POOL(double)

}  // namespace dida
