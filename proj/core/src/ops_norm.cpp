#include <cmath>
#include <vector>

#include "dida/ops.hpp"

namespace dida {

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, double momentum,
                       double eps) {
  if (!x.defined() || x.ndim() != 4)
    throw ShapeError("batch_norm2d: input must be (N,C,H,W)");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto check_c = [c](const Tensor<T>& t, const char* what) {
    if (!t.defined() || t.ndim() != 1 || t.dim(0) != c)
      throw ShapeError(std::string("batch_norm2d: ") + what +
                       " must have shape (C)");
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");
  int64_t m = n * h * w;
  if (training && m < 1) throw ShapeError("batch_norm2d: empty batch");

  int64_t plane = h * w;
  int64_t sample = c * plane;
  const T* xd = x.data().data();

  std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (training) {
    std::vector<T> var(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (int64_t i = 0; i < n; ++i) {
        const T* xp = xd + i * sample + ch * plane;
        for (int64_t j = 0; j < plane; ++j) acc += xp[j];
      }
      T mu = acc / static_cast<T>(m);
      T vacc = T(0);
      for (int64_t i = 0; i < n; ++i) {
        const T* xp = xd + i * sample + ch * plane;
        for (int64_t j = 0; j < plane; ++j) {
          T d = xp[j] - mu;
          vacc += d * d;
        }
      }
      mean[static_cast<size_t>(ch)] = mu;
      var[static_cast<size_t>(ch)] = vacc / static_cast<T>(m);
      inv_std[static_cast<size_t>(ch)] =
          T(1) / std::sqrt(var[static_cast<size_t>(ch)] + static_cast<T>(eps));
    }
    // Running stats track the unbiased variance, matching the usual
    // momentum-EMA convention.
    auto rm = running_mean.raw_data();
    auto rv = running_var.raw_data();
    T mom = static_cast<T>(momentum);
    T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
    for (int64_t ch = 0; ch < c; ++ch) {
      rm[static_cast<size_t>(ch)] =
          (T(1) - mom) * rm[static_cast<size_t>(ch)] +
          mom * mean[static_cast<size_t>(ch)];
      rv[static_cast<size_t>(ch)] =
          (T(1) - mom) * rv[static_cast<size_t>(ch)] +
          mom * var[static_cast<size_t>(ch)] * unbias;
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = rm[static_cast<size_t>(ch)];
      inv_std[static_cast<size_t>(ch)] =
          T(1) / std::sqrt(rv[static_cast<size_t>(ch)] + static_cast<T>(eps));
    }
  }

  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xd + i * sample + ch * plane;
      T* op = out.data() + i * sample + ch * plane;
      T mu = mean[static_cast<size_t>(ch)];
      T is = inv_std[static_cast<size_t>(ch)];
      T ga = gd[static_cast<size_t>(ch)];
      T be = bd[static_cast<size_t>(ch)];
      for (int64_t j = 0; j < plane; ++j) op[j] = ga * (xp[j] - mu) * is + be;
    }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, n, c, plane, sample, training, mean = std::move(mean),
       inv_std = std::move(inv_std)](detail::Node<T>& self) {
        int64_t m = n * plane;
        const T* xd = xn->value.data();
        const T* gy = self.grad.data();
        const T* ga = gn->value.data();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (int64_t ch = 0; ch < c; ++ch) {
          T mu = mean[static_cast<size_t>(ch)];
          T is = inv_std[static_cast<size_t>(ch)];
          // Reductions shared by all grads of this channel.
          T sum_g = T(0), sum_gx = T(0);
          for (int64_t i = 0; i < n; ++i) {
            const T* xp = xd + i * sample + ch * plane;
            const T* gp = gy + i * sample + ch * plane;
            for (int64_t j = 0; j < plane; ++j) {
              sum_g += gp[j];
              sum_gx += gp[j] * (xp[j] - mu) * is;
            }
          }
          if (gn->requires_grad) gn->grad[static_cast<size_t>(ch)] += sum_gx;
          if (bn->requires_grad) bn->grad[static_cast<size_t>(ch)] += sum_g;
          if (!xn->requires_grad) continue;
          T g = ga[static_cast<size_t>(ch)];
          if (training) {
            T inv_m = T(1) / static_cast<T>(m);
            for (int64_t i = 0; i < n; ++i) {
              const T* xp = xd + i * sample + ch * plane;
              const T* gp = gy + i * sample + ch * plane;
              T* dp = xn->grad.data() + i * sample + ch * plane;
              for (int64_t j = 0; j < plane; ++j) {
                T xhat = (xp[j] - mu) * is;
                dp[j] += g * is * (gp[j] - inv_m * (sum_g + xhat * sum_gx));
              }
            }
          } else {
            for (int64_t i = 0; i < n; ++i) {
              const T* gp = gy + i * sample + ch * plane;
              T* dp = xn->grad.data() + i * sample + ch * plane;
              for (int64_t j = 0; j < plane; ++j) dp[j] += g * is * gp[j];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mixstyle(const Tensor<T>& x, std::span<const T> lambda,
                   std::span<const int64_t> perm, double eps) {
  if (!x.defined() || x.ndim() != 4)
    throw ShapeError("mixstyle: input must be (N,C,H,W)");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (static_cast<int64_t>(lambda.size()) != n ||
      static_cast<int64_t>(perm.size()) != n)
    throw ShapeError("mixstyle: lambda and perm must have batch length");
  for (int64_t p : perm)
    if (p < 0 || p >= n) throw ValueError("mixstyle: perm index out of range");

  int64_t plane = h * w;
  const T* xd = x.data().data();
  std::vector<T> mu(static_cast<size_t>(n * c)), sig(static_cast<size_t>(n * c));
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xp = xd + nc * plane;
    T acc = T(0);
    for (int64_t j = 0; j < plane; ++j) acc += xp[j];
    T m = acc / static_cast<T>(plane);
    T v = T(0);
    for (int64_t j = 0; j < plane; ++j) {
      T d = xp[j] - m;
      v += d * d;
    }
    mu[static_cast<size_t>(nc)] = m;
    sig[static_cast<size_t>(nc)] =
        std::sqrt(v / static_cast<T>(plane) + static_cast<T>(eps));
  }

  std::vector<T> out(static_cast<size_t>(x.numel()));
  // Per (n,c) scale applied to the centered input; statistics are detached,
  // so this ratio is the whole jacobian wrt x.
  std::vector<T> ratio(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n; ++i) {
    T lam = lambda[static_cast<size_t>(i)];
    int64_t p = perm[static_cast<size_t>(i)];
    for (int64_t ch = 0; ch < c; ++ch) {
      size_t nc = static_cast<size_t>(i * c + ch);
      size_t pc = static_cast<size_t>(p * c + ch);
      T mix_mu = lam * mu[nc] + (T(1) - lam) * mu[pc];
      T mix_sig = lam * sig[nc] + (T(1) - lam) * sig[pc];
      T r = mix_sig / sig[nc];
      ratio[nc] = r;
      const T* xp = xd + static_cast<int64_t>(nc) * plane;
      T* op = out.data() + static_cast<int64_t>(nc) * plane;
      for (int64_t j = 0; j < plane; ++j)
        op[j] = r * (xp[j] - mu[nc]) + mix_mu;
    }
  }

  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x},
      [xn, plane, ratio = std::move(ratio)](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t nc = 0; nc < ratio.size(); ++nc) {
          const T* gp = self.grad.data() + static_cast<int64_t>(nc) * plane;
          T* dp = xn->grad.data() + static_cast<int64_t>(nc) * plane;
          for (int64_t j = 0; j < plane; ++j) dp[j] += ratio[nc] * gp[j];
        }
      });
}

#define DIDA_INSTANTIATE_NORM(T)                                          \
  template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&,  \
                                     const Tensor<T>&, Tensor<T>&,        \
                                     Tensor<T>&, bool, double, double);   \
  template Tensor<T> mixstyle<T>(const Tensor<T>&, std::span<const T>,    \
                                 std::span<const int64_t>, double);

DIDA_INSTANTIATE_NORM(float)
DIDA_INSTANTIATE_NORM(double)

}  // namespace dida
