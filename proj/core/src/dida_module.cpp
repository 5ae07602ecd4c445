#include "dida/dida_module.hpp"

#include <utility>

#include "dida/error.hpp"

namespace dida {

void DidaConfig::validate() const {
  if (in_channels <= 0) {
    throw ConfigError("dida: in_channels must be positive, got " +
                      std::to_string(in_channels));
  }
  if (reduction <= 0 || in_channels % reduction != 0) {
    throw ConfigError("dida: reduction must divide in_channels, got " +
                      std::to_string(in_channels) + " / " +
                      std::to_string(reduction));
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("dida: kernel_size must be odd and positive, got " +
                      std::to_string(kernel_size));
  }
  if (dilations.empty()) throw ConfigError("dida: need at least one dilation");
  for (int d : dilations) {
    if (d < 1) throw ConfigError("dida: dilations must be >= 1");
  }
  if (out_channels <= 0) {
    throw ConfigError("dida: out_channels unresolved");
  }
  if (out_channels % branches() != 0) {
    throw ConfigError("dida: out_channels " + std::to_string(out_channels) +
                      " not divisible by " + std::to_string(branches()) +
                      " branches");
  }
}

template <typename T>
DidaModule<T>::DidaModule(DidaConfig cfg, RngStream& rng) : cfg_(std::move(cfg)) {
  if (cfg_.out_channels == 0) cfg_.out_channels = cfg_.in_channels;
  cfg_.validate();
  const int64_t c = cfg_.in_channels;
  const int64_t cr = cfg_.reduced_channels();
  const int ks = cfg_.kernel_size;
  const int64_t nb = cfg_.branches();

  conv1_ = Conv2d<T>(c, cr, 1, ConvOpts{}, rng);
  for (int64_t b = 0; b < nb; ++b) {
    if (!cfg_.static_kernels && !cfg_.share_reduction) {
      reduce_gen_.emplace_back(c, cr, 1, ConvOpts{}, rng);
    }
    if (cfg_.static_kernels) {
      static_bank_.push_back(kaiming_uniform<T>(
          {cr, ks, ks}, static_cast<int64_t>(ks) * ks, rng));
    } else {
      expand_.emplace_back(1, static_cast<int64_t>(ks) * ks, 1, ConvOpts{}, rng,
                           /*init_scale=*/0.1);
    }
  }
  conv4_ = Conv2d<T>(cr, cfg_.out_channels / nb, 1, ConvOpts{}, rng,
                     /*init_scale=*/1.0, /*zero_init=*/true);
}

template <typename T>
Tensor<T> DidaModule<T>::reduce_channels(const Tensor<T>& x) const {
  return conv1_.forward(x);
}

template <typename T>
Tensor<T> DidaModule<T>::generate_kernels(const Tensor<T>& x,
                                          size_t branch) const {
  if (cfg_.static_kernels) {
    throw ValueError("dida: static-kernel module has no generator");
  }
  if (branch >= cfg_.dilations.size()) {
    throw ValueError("dida: branch index out of range");
  }
  const int64_t n = x.dim(0);
  const int64_t cr = cfg_.reduced_channels();
  const int ks = cfg_.kernel_size;
  Tensor<T> pooled = global_avg_pool(x);
  Tensor<T> red = cfg_.share_reduction ? conv1_.forward(pooled)
                                       : reduce_gen_[branch].forward(pooled);
  // Move the reduced channels onto the width axis so the 1->ks^2 expansion
  // runs one independent column per reduced channel, then move them back.
  Tensor<T> swapped = swap_axes(red, 1, 3);
  Tensor<T> expanded = expand_[branch].forward(swapped);
  Tensor<T> restored = swap_axes(expanded, 1, 3);
  return reshape(restored, {n, cr, ks, ks});
}

template <typename T>
Tensor<T> DidaModule<T>::forward(const Tensor<T>& x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("dida: expected (N," + std::to_string(cfg_.in_channels) +
                     ",H,W) input, got " + shape_str(x.shape()));
  }
  const int64_t n = x.dim(0);
  const int ks = cfg_.kernel_size;
  const int64_t nb = cfg_.branches();

  Tensor<T> mid = conv1_.forward(x);

  Tensor<T> pooled, shared_red;
  if (!cfg_.static_kernels) {
    pooled = global_avg_pool(x);
    if (cfg_.share_reduction) shared_red = conv1_.forward(pooled);
  }

  std::vector<Tensor<T>> parts;
  parts.reserve(static_cast<size_t>(nb));
  for (int64_t b = 0; b < nb; ++b) {
    Tensor<T> bank;
    if (cfg_.static_kernels) {
      bank = broadcast_batch(static_bank_[static_cast<size_t>(b)], n);
    } else {
      Tensor<T> red = cfg_.share_reduction
                          ? shared_red
                          : reduce_gen_[static_cast<size_t>(b)].forward(pooled);
      Tensor<T> swapped = swap_axes(red, 1, 3);
      Tensor<T> expanded = expand_[static_cast<size_t>(b)].forward(swapped);
      Tensor<T> restored = swap_axes(expanded, 1, 3);
      bank = reshape(restored, {n, cfg_.reduced_channels(), ks, ks});
    }
    const int dil = cfg_.dilations[static_cast<size_t>(b)];
    const int pad = dil * (ks - 1) / 2;
    Tensor<T> applied = depthwise_conv2d(mid, bank, pad, dil);
    parts.push_back(conv4_.forward(applied));
  }
  if (parts.size() == 1) return parts[0];
  return concat_channels(parts);
}

template <typename T>
std::string DidaModule<T>::branch_name(size_t branch) const {
  if (cfg_.static_kernels) return "static" + std::to_string(branch + 1);
  if (branch == 0) return "conv2";
  if (branch == 1) return "conv3";
  return "gen" + std::to_string(branch + 2);
}

template <typename T>
void DidaModule<T>::collect(const std::string& prefix,
                            std::vector<ParamRef<T>>& out) {
  conv1_.collect(prefix + ".conv1", out);
  for (size_t b = 0; b < reduce_gen_.size(); ++b) {
    reduce_gen_[b].collect(prefix + ".conv1_gen" + std::to_string(b + 1), out);
  }
  for (size_t b = 0; b < expand_.size(); ++b) {
    expand_[b].collect(prefix + "." + branch_name(b), out);
  }
  for (size_t b = 0; b < static_bank_.size(); ++b) {
    out.push_back({prefix + "." + branch_name(b) + ".weight", static_bank_[b],
                   false});
  }
  conv4_.collect(prefix + ".conv4", out);
}

template <typename T>
std::vector<CostRow> DidaModule<T>::cost_rows(int64_t n, int64_t h,
                                              int64_t w) const {
  const int64_t c = cfg_.in_channels;
  const int64_t cr = cfg_.reduced_channels();
  const int64_t ks = cfg_.kernel_size;
  const int64_t nb = cfg_.branches();
  const int64_t q = cfg_.out_channels / nb;

  std::vector<CostRow> rows;
  int64_t conv1_macs = n * cr * h * w * c;  // middle-path 1x1 reduction
  if (!cfg_.static_kernels && cfg_.share_reduction) {
    conv1_macs += n * cr * c;  // generator reduction on the pooled vector
  }
  rows.push_back({"conv1", cr * c, conv1_macs});
  for (int64_t b = 0; b < nb; ++b) {
    if (!cfg_.static_kernels && !cfg_.share_reduction) {
      rows.push_back({"conv1_gen" + std::to_string(b + 1), cr * c, n * cr * c});
    }
    if (cfg_.static_kernels) {
      rows.push_back({branch_name(static_cast<size_t>(b)), cr * ks * ks, 0});
    } else {
      rows.push_back({branch_name(static_cast<size_t>(b)), ks * ks,
                      n * ks * ks * cr});
    }
    rows.push_back({"apply" + std::to_string(b + 1), 0,
                    n * cr * h * w * ks * ks});
  }
  rows.push_back({"conv4", q * cr, nb * n * q * h * w * cr});
  return rows;
}

template <typename T>
int64_t DidaModule<T>::param_count() const {
  int64_t total = 0;
  for (const CostRow& r : cost_rows(1, 1, 1)) total += r.params;
  return total;
}

template <typename T>
int64_t DidaModule<T>::macs(int64_t n, int64_t h, int64_t w) const {
  int64_t total = 0;
  for (const CostRow& r : cost_rows(n, h, w)) total += r.macs;
  return total;
}

template class DidaModule<float>;
template class DidaModule<double>;

}  // namespace dida
