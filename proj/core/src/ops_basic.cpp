#include <algorithm>
#include <cmath>

#include "dida/ops.hpp"

namespace dida {

namespace {

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.defined() || !b.defined()) throw ValueError("add: undefined input");
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.begin(), av.end());
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  if (!a.defined()) throw ValueError("scale: undefined input");
  auto av = a.data();
  std::vector<T> out(av.begin(), av.end());
  for (auto& v : out) v *= s;
  auto an = a.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a}, [an, s](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += s * self.grad[i];
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (!x.defined()) throw ValueError("relu: undefined input");
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x}, [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (xn->value[i] > T(0)) xn->grad[i] += self.grad[i];
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (!x.defined()) throw ValueError("reshape: undefined input");
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto xv = x.data();
  std::vector<T> out(xv.begin(), xv.end());
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {x}, [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[i] += self.grad[i];
      });
}

namespace {

// Applies the axis swap to src (laid out as in_shape) writing into dst laid
// out as in_shape with axes a and b exchanged.
template <typename T, typename Acc>
void swap_copy(const Shape& in_shape, int a, int b, const T* src, Acc&& put) {
  Shape out_shape = in_shape;
  std::swap(out_shape[static_cast<size_t>(a)],
            out_shape[static_cast<size_t>(b)]);
  auto in_st = strides_of(in_shape);
  auto out_st = strides_of(out_shape);
  std::swap(in_st[static_cast<size_t>(a)], in_st[static_cast<size_t>(b)]);
  int64_t total = shape_numel(in_shape);
  int rank = static_cast<int>(in_shape.size());
  for (int64_t o = 0; o < total; ++o) {
    int64_t rem = o, src_idx = 0;
    for (int d = 0; d < rank; ++d) {
      int64_t c = rem / out_st[static_cast<size_t>(d)];
      rem -= c * out_st[static_cast<size_t>(d)];
      src_idx += c * in_st[static_cast<size_t>(d)];
    }
    put(o, src[src_idx]);
  }
}

}  // namespace

template <typename T>
Tensor<T> swap_axes(const Tensor<T>& x, int a, int b) {
  if (!x.defined()) throw ValueError("swap_axes: undefined input");
  int rank = x.ndim();
  if (a < 0) a += rank;
  if (b < 0) b += rank;
  if (a < 0 || a >= rank || b < 0 || b >= rank)
    throw ShapeError("swap_axes: axes out of range for " +
                     shape_str(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(a)],
            out_shape[static_cast<size_t>(b)]);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  swap_copy<T>(x.shape(), a, b, x.data().data(),
               [&](int64_t o, T v) { out[static_cast<size_t>(o)] = v; });
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {x},
      [xn, a, b](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        // The swap is an involution: push grads through the inverse map.
        swap_copy<T>(self.shape, a, b, self.grad.data(),
                     [&](int64_t o, T v) { xn->grad[static_cast<size_t>(o)] += v; });
      });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValueError("concat_channels: empty input list");
  for (const auto& x : xs)
    if (!x.defined() || x.ndim() < 2)
      throw ShapeError("concat_channels: inputs must have rank >= 2");
  const Shape& ref = xs[0].shape();
  int64_t channels = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != ref.size())
      throw ShapeError("concat_channels: rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (d != 1 && s[d] != ref[d])
        throw ShapeError("concat_channels: non-channel dims must match, got " +
                         shape_str(s) + " vs " + shape_str(ref));
    channels += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = channels;
  int64_t inner = 1;
  for (size_t d = 2; d < ref.size(); ++d) inner *= ref[d];
  int64_t outer = ref[0];
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t out_row = channels * inner;
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t chunk = x.shape()[1] * inner;
    const T* src = x.data().data();
    for (int64_t n = 0; n < outer; ++n)
      std::copy(src + n * chunk, src + (n + 1) * chunk,
                out.data() + n * out_row + off);
    off += chunk;
  }
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), xs,
      [nodes, outer, inner, out_row](detail::Node<T>& self) {
        int64_t off = 0;
        for (const auto& xn : nodes) {
          int64_t chunk = xn->shape[1] * inner;
          if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t n = 0; n < outer; ++n) {
              const T* g = self.grad.data() + n * out_row + off;
              T* dst = xn->grad.data() + n * chunk;
              for (int64_t i = 0; i < chunk; ++i) dst[i] += g[i];
            }
          }
          off += chunk;
        }
      });
}

template <typename T>
Tensor<T> broadcast_batch(const Tensor<T>& x, int64_t n) {
  if (!x.defined()) throw ValueError("broadcast_batch: undefined input");
  if (n <= 0) throw ValueError("broadcast_batch: batch size must be positive");
  Shape out_shape;
  out_shape.push_back(n);
  for (int64_t d : x.shape()) out_shape.push_back(d);
  int64_t chunk = x.numel();
  std::vector<T> out(static_cast<size_t>(n * chunk));
  const T* src = x.data().data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(src, src + chunk, out.data() + i * chunk);
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), {x},
      [xn, n, chunk](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const T* g = self.grad.data() + i * chunk;
          for (int64_t j = 0; j < chunk; ++j) xn->grad[j] += g[j];
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (!x.defined() || x.ndim() != 2)
    throw ShapeError("softmax: expected (N,K) logits");
  int64_t n = x.dim(0), k = x.dim(1);
  auto xv = x.data();
  std::vector<T> out(static_cast<size_t>(n * k));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = xv.data() + i * k;
    T* orow = out.data() + i * k;
    T m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - m);
      sum += orow[j];
    }
    for (int64_t j = 0; j < k; ++j) orow[j] /= sum;
  }
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x}, [xn, n, k](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const T* y = self.value.data() + i * k;
          const T* g = self.grad.data() + i * k;
          T dot = T(0);
          for (int64_t j = 0; j < k; ++j) dot += g[j] * y[j];
          T* dst = xn->grad.data() + i * k;
          for (int64_t j = 0; j < k; ++j) dst[j] += y[j] * (g[j] - dot);
        }
      });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> w) {
  if (!x.defined()) throw ValueError("weighted_sum: undefined input");
  if (static_cast<int64_t>(w.size()) != x.numel())
    throw ShapeError("weighted_sum: weight count " + std::to_string(w.size()) +
                     " does not match numel " + std::to_string(x.numel()));
  auto xv = x.data();
  T acc = T(0);
  for (size_t i = 0; i < xv.size(); ++i) acc += w[i] * xv[i];
  auto xn = x.node();
  std::vector<T> wcopy(w.begin(), w.end());
  return detail::make_result<T>(
      Shape{}, {acc}, {x},
      [xn, wcopy = std::move(wcopy)](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        T g = self.grad[0];
        for (size_t i = 0; i < wcopy.size(); ++i)
          xn->grad[i] += g * wcopy[i];
      });
}

#define DIDA_INSTANTIATE_BASIC(T)                                         \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, std::span<const T>); \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                 \
  template Tensor<T> swap_axes<T>(const Tensor<T>&, int, int);            \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);   \
  template Tensor<T> broadcast_batch<T>(const Tensor<T>&, int64_t);       \
  template Tensor<T> softmax<T>(const Tensor<T>&);

DIDA_INSTANTIATE_BASIC(float)
DIDA_INSTANTIATE_BASIC(double)

}  // namespace dida
