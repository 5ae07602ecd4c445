#include "dida/layers.hpp"

#include <cmath>
#include <numeric>

#include "dida/error.hpp"

namespace dida {

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int64_t fan_in, RngStream& rng,
                          double scale) {
  if (fan_in <= 0) throw ValueError("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in)) * scale;
  Tensor<T> t = Tensor<T>::zeros(shape, true);
  for (T& v : t.raw_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(int64_t cin, int64_t cout, int kernel, ConvOpts o,
                  RngStream& rng, double init_scale, bool zero_init)
    : opts(o) {
  if (cin <= 0 || cout <= 0 || kernel <= 0) {
    throw ValueError("Conv2d: channels and kernel size must be positive");
  }
  const Shape wshape{cout, cin, kernel, kernel};
  if (zero_init) {
    weight = Tensor<T>::zeros(wshape, true);
  } else {
    weight = kaiming_uniform<T>(wshape, cin * kernel * kernel, rng, init_scale);
  }
}

template <typename T>
Linear<T>::Linear(int64_t cin, int64_t cout, RngStream& rng) {
  if (cin <= 0 || cout <= 0) {
    throw ValueError("Linear: dimensions must be positive");
  }
  weight = kaiming_uniform<T>({cout, cin}, cin, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
  bias = Tensor<T>::zeros({cout}, true);
  for (T& v : bias.raw_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int64_t channels) {
  if (channels <= 0) throw ValueError("BatchNorm2d: channels must be positive");
  gamma = Tensor<T>::full({channels}, T(1), true);
  beta = Tensor<T>::zeros({channels}, true);
  running_mean = Tensor<T>::zeros({channels}, false);
  running_var = Tensor<T>::full({channels}, T(1), false);
}

template <typename T>
Tensor<T> MixStyleLayer<T>::forward(const Tensor<T>& x, bool training,
                                    RngStream* rng) const {
  if (!training || rng == nullptr) return x;
  if (x.ndim() != 4) throw ShapeError("mixstyle expects NCHW input");
  const int64_t n = x.dim(0);
  if (!rng->bernoulli(opts.prob)) return x;
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng->shuffle(perm.begin(), perm.end());
  std::vector<T> lam(static_cast<size_t>(n));
  for (auto& l : lam) l = static_cast<T>(rng->beta(opts.alpha, opts.alpha));
  return mixstyle(x, std::span<const T>(lam), std::span<const int64_t>(perm));
}

#define DIDA_INSTANTIATE_LAYERS(T)                                         \
  template Tensor<T> kaiming_uniform<T>(Shape, int64_t, RngStream&, double); \
  template struct Conv2d<T>;                                               \
  template struct Linear<T>;                                               \
  template struct BatchNorm2d<T>;                                          \
  template struct MixStyleLayer<T>;

DIDA_INSTANTIATE_LAYERS(float)
DIDA_INSTANTIATE_LAYERS(double)

}  // namespace dida
