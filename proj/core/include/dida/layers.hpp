#pragma once

#include <string>
#include <vector>

#include "dida/ops.hpp"
#include "dida/optim.hpp"
#include "dida/rng.hpp"
#include "dida/tensor.hpp"

namespace dida {

// He-uniform draw: U(-sqrt(6/fan_in), +sqrt(6/fan_in)) scaled by `scale`.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, int64_t fan_in, RngStream& rng,
                          double scale = 1.0);

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // (cout, cin, kh, kw); convs are bias-free, BN absorbs shift
  ConvOpts opts;

  Conv2d() = default;
  Conv2d(int64_t cin, int64_t cout, int kernel, ConvOpts opts, RngStream& rng,
         double init_scale = 1.0, bool zero_init = false);

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, Tensor<T>(), opts);
  }
  int64_t cin() const { return weight.dim(1); }
  int64_t cout() const { return weight.dim(0); }
  int64_t kh() const { return weight.dim(2); }
  int64_t kw() const { return weight.dim(3); }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", weight, false});
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // (cout, cin)
  Tensor<T> bias;    // (cout)

  Linear() = default;
  Linear(int64_t cin, int64_t cout, RngStream& rng);

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear(x, weight, bias);
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", weight, false});
    out.push_back({prefix + ".bias", bias, false});
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                        momentum, eps);
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
    out.push_back({prefix + ".running_mean", running_mean, true});
    out.push_back({prefix + ".running_var", running_var, true});
  }
};

struct MixStyleOpts {
  double prob = 0.5;
  double alpha = 0.1;
};

// Parameter-free style-mixing layer. Active only in training mode with an
// RNG supplied; draw order per call: apply gate, partner permutation, lambdas.
template <typename T>
struct MixStyleLayer {
  MixStyleOpts opts;

  Tensor<T> forward(const Tensor<T>& x, bool training, RngStream* rng) const;
};

}  // namespace dida
