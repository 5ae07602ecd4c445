#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dida/layers.hpp"
#include "dida/ops.hpp"
#include "dida/optim.hpp"
#include "dida/rng.hpp"
#include "dida/tensor.hpp"

namespace dida {

// Configuration of the dynamic-instance residual module inserted between two
// backbone blocks. `in_channels` is the width c of the tapped feature map;
// `out_channels` is the width of the static-branch output the residual is
// fused with (0 means "resolved by the model at insertion time").
struct DidaConfig {
  int64_t in_channels = 0;
  int64_t reduction = 16;
  int kernel_size = 3;
  std::vector<int> dilations = {1, 2};
  bool share_reduction = true;
  bool static_kernels = false;  // replace the generator with learned fixed banks
  int64_t out_channels = 0;

  int64_t branches() const { return static_cast<int64_t>(dilations.size()); }
  int64_t reduced_channels() const { return in_channels / reduction; }
  void validate() const;
};

// One named row of the cost report: parameter count plus multiply-accumulate
// count for a forward pass at the given batch/feature-map size.
struct CostRow {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
};

template <typename T>
class DidaModule {
 public:
  DidaModule(DidaConfig cfg, RngStream& rng);

  // Shared 1x1 reduction applied to the full feature map (middle path).
  Tensor<T> reduce_channels(const Tensor<T>& x) const;

  // Per-sample kernel bank (N, c/m, ks, ks) for one dilation branch.
  Tensor<T> generate_kernels(const Tensor<T>& x, size_t branch) const;

  // The residual (N, out_channels, H, W); the caller fuses it with the
  // static branch output.
  Tensor<T> forward(const Tensor<T>& x) const;

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);

  int64_t param_count() const;
  int64_t macs(int64_t n, int64_t h, int64_t w) const;
  std::vector<CostRow> cost_rows(int64_t n, int64_t h, int64_t w) const;

  const DidaConfig& config() const { return cfg_; }

 private:
  std::string branch_name(size_t branch) const;

  DidaConfig cfg_;
  Conv2d<T> conv1_;                     // shared c -> c/m reduction
  std::vector<Conv2d<T>> reduce_gen_;   // unshared per-branch reductions
  std::vector<Conv2d<T>> expand_;      // per-branch 1 -> ks^2 kernel heads
  std::vector<Tensor<T>> static_bank_;  // per-branch fixed banks (c/m, ks, ks)
  Conv2d<T> conv4_;                     // shared c/m -> out/branches projection
};

}  // namespace dida
