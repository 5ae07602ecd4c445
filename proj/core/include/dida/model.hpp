#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dida/dida_module.hpp"
#include "dida/layers.hpp"
#include "dida/optim.hpp"
#include "dida/rng.hpp"
#include "dida/tensor.hpp"

namespace dida {

enum class Variant { kDigit3Conv, kDigit2Conv, kSmallResNet };

Variant variant_from_string(std::string_view s);
std::string variant_name(Variant v);

// Architecture description. `channels` and `insertion` may be left empty to
// take the per-variant defaults; `Model` resolves and validates them.
struct BackboneSpec {
  Variant variant = Variant::kDigit3Conv;
  int64_t in_channels = 1;
  int64_t num_classes = 10;
  std::vector<int64_t> channels;  // per-block widths
  int64_t fc_hidden = 3072;
  std::string insertion;  // "blockK": tap after block K, fuse with block K+1
  std::optional<DidaConfig> dida;
  bool mixstyle = false;
  MixStyleOpts mixstyle_opts;

  // Fill defaults and check consistency; DIDA channel fields are resolved
  // against the tapped and fused block widths.
  void resolve();
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;    // (N, num_classes)
  Tensor<T> features;  // (N, C) global-average-pooled fused features
};

struct LayerCost {
  std::string name;
  Shape out_shape;
  int64_t params = 0;
  int64_t macs = 0;
};

template <typename T>
class Model {
 public:
  Model(BackboneSpec spec, RngStream& rng);

  ModelOutput<T> forward(const Tensor<T>& x, bool training,
                         RngStream* rng = nullptr);

  // Parameters and buffers in checkpoint order (deterministic).
  std::vector<ParamRef<T>> named_tensors();
  // Trainable parameters only.
  std::vector<ParamRef<T>> named_params();

  int64_t count_params(std::string_view prefix = "");
  int64_t count_macs(const Shape& input) const;
  std::vector<LayerCost> summary(const Shape& input) const;

  const BackboneSpec& spec() const { return spec_; }
  DidaModule<T>* dida() { return dida_ ? dida_.get() : nullptr; }

 private:
  struct ConvBlock {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    bool pool = false;
  };
  struct ResBlock {
    Conv2d<T> conv1;
    BatchNorm2d<T> bn1;
    Conv2d<T> conv2;
    BatchNorm2d<T> bn2;
    bool has_down = false;
    Conv2d<T> down;
    BatchNorm2d<T> down_bn;
  };

  Tensor<T> res_block_forward(ResBlock& b, const Tensor<T>& x, bool training);

  BackboneSpec spec_;
  ConvBlock stem_;                 // smallresnet only
  std::vector<ConvBlock> blocks_;  // digit variants
  std::vector<ResBlock> res_blocks_;
  MixStyleLayer<T> mix_;
  std::unique_ptr<DidaModule<T>> dida_;
  Linear<T> fc1_;
  Linear<T> classifier_;
  int tap_index_ = -1;  // 0-based block index whose output feeds the module
};

}  // namespace dida
