#include "dida/model.hpp"

#include <algorithm>
#include <memory>
#include <utility>

#include "dida/error.hpp"
#include "dida/ops.hpp"

namespace dida {

namespace {

size_t expected_blocks(Variant v) {
  switch (v) {
    case Variant::kDigit3Conv: return 3;
    case Variant::kDigit2Conv: return 2;
    case Variant::kSmallResNet: return 4;
  }
  throw ValueError("unknown variant");
}

std::vector<int64_t> default_channels(Variant v) {
  switch (v) {
    case Variant::kDigit3Conv: return {64, 64, 128};
    case Variant::kDigit2Conv: return {64, 64};
    case Variant::kSmallResNet: return {16, 32, 64, 128};
  }
  throw ValueError("unknown variant");
}

std::string default_insertion(Variant v) {
  switch (v) {
    case Variant::kDigit3Conv: return "block2";
    case Variant::kDigit2Conv: return "block1";
    case Variant::kSmallResNet: return "block3";
  }
  throw ValueError("unknown variant");
}

// Parses "blockK" into the 1-based block index K.
int parse_insertion(const std::string& name, size_t nblocks) {
  const std::string kPrefix = "block";
  if (name.size() > kPrefix.size() && name.compare(0, kPrefix.size(), kPrefix) == 0) {
    int k = 0;
    for (size_t i = kPrefix.size(); i < name.size(); ++i) {
      if (name[i] < '0' || name[i] > '9') { k = -1; break; }
      k = k * 10 + (name[i] - '0');
    }
    if (k >= 1 && static_cast<size_t>(k) <= nblocks) return k;
  }
  throw ConfigError("model: insertion '" + name +
                    "' does not name an existing block (expected block1..block" +
                    std::to_string(nblocks) + ")");
}

// True when block K (1-based) of the variant keeps the spatial resolution of
// its input, which the residual fusion requires of the static branch.
bool preserves_resolution(Variant v, int k) {
  switch (v) {
    case Variant::kDigit3Conv: return k == 3;       // blocks 1,2 max-pool
    case Variant::kDigit2Conv: return k == 2;       // block 1 max-pools
    case Variant::kSmallResNet: return k == 1 || k == 4;  // blocks 2,3 stride 2
  }
  return false;
}

}  // namespace

Variant variant_from_string(std::string_view s) {
  if (s == "digit3conv") return Variant::kDigit3Conv;
  if (s == "digit2conv") return Variant::kDigit2Conv;
  if (s == "smallresnet") return Variant::kSmallResNet;
  throw ConfigError("model: unknown variant '" + std::string(s) +
                    "' (expected digit3conv, digit2conv or smallresnet)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDigit3Conv: return "digit3conv";
    case Variant::kDigit2Conv: return "digit2conv";
    case Variant::kSmallResNet: return "smallresnet";
  }
  return "?";
}

void BackboneSpec::resolve() {
  const size_t nblocks = expected_blocks(variant);
  if (channels.empty()) channels = default_channels(variant);
  if (channels.size() != nblocks) {
    throw ConfigError("model: " + variant_name(variant) + " takes " +
                      std::to_string(nblocks) + " channel widths, got " +
                      std::to_string(channels.size()));
  }
  for (int64_t c : channels) {
    if (c <= 0) throw ConfigError("model: channel widths must be positive");
  }
  if (in_channels <= 0) throw ConfigError("model: in_channels must be positive");
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  if (fc_hidden <= 0) throw ConfigError("model: fc_hidden must be positive");
  if (mixstyle_opts.prob < 0.0 || mixstyle_opts.prob > 1.0 ||
      mixstyle_opts.alpha <= 0.0) {
    throw ConfigError("model: mixstyle needs prob in [0,1] and alpha > 0");
  }
  if (dida) {
    if (insertion.empty()) insertion = default_insertion(variant);
    const int k = parse_insertion(insertion, nblocks);
    if (static_cast<size_t>(k) == nblocks) {
      throw ConfigError("model: cannot insert after the last block; no static "
                        "branch remains to fuse with");
    }
    if (!preserves_resolution(variant, k + 1)) {
      throw ConfigError("model: block" + std::to_string(k + 1) +
                        " changes spatial resolution, so the residual cannot "
                        "be fused with its output");
    }
    const int64_t tap_c = channels[static_cast<size_t>(k - 1)];
    const int64_t fuse_c = channels[static_cast<size_t>(k)];
    if (dida->in_channels == 0) {
      dida->in_channels = tap_c;
    } else if (dida->in_channels != tap_c) {
      throw ConfigError("model: dida in_channels " +
                        std::to_string(dida->in_channels) +
                        " does not match " + insertion + " width " +
                        std::to_string(tap_c));
    }
    if (dida->out_channels == 0) {
      dida->out_channels = fuse_c;
    } else if (dida->out_channels != fuse_c) {
      throw ConfigError("model: dida out_channels " +
                        std::to_string(dida->out_channels) +
                        " does not match block" + std::to_string(k + 1) +
                        " width " + std::to_string(fuse_c));
    }
    dida->validate();
  }
}

template <typename T>
Model<T>::Model(BackboneSpec spec, RngStream& rng) : spec_(std::move(spec)) {
  spec_.resolve();
  mix_.opts = spec_.mixstyle_opts;
  const auto& ch = spec_.channels;

  if (spec_.variant == Variant::kSmallResNet) {
    stem_.conv = Conv2d<T>(spec_.in_channels, ch[0], 3,
                           ConvOpts{.stride = 1, .pad = 1}, rng);
    stem_.bn = BatchNorm2d<T>(ch[0]);
    const int strides[4] = {1, 2, 2, 1};
    int64_t cin = ch[0];
    for (size_t i = 0; i < 4; ++i) {
      ResBlock b;
      const int s = strides[i];
      b.conv1 = Conv2d<T>(cin, ch[i], 3, ConvOpts{.stride = s, .pad = 1}, rng);
      b.bn1 = BatchNorm2d<T>(ch[i]);
      b.conv2 = Conv2d<T>(ch[i], ch[i], 3, ConvOpts{.stride = 1, .pad = 1}, rng);
      b.bn2 = BatchNorm2d<T>(ch[i]);
      b.has_down = (s != 1 || cin != ch[i]);
      if (b.has_down) {
        b.down = Conv2d<T>(cin, ch[i], 1, ConvOpts{.stride = s}, rng);
        b.down_bn = BatchNorm2d<T>(ch[i]);
      }
      res_blocks_.push_back(std::move(b));
      cin = ch[i];
    }
  } else {
    const bool three = spec_.variant == Variant::kDigit3Conv;
    int64_t cin = spec_.in_channels;
    for (size_t i = 0; i < ch.size(); ++i) {
      ConvBlock b;
      const bool last = (i + 1 == ch.size());
      const int k = (three && last) ? 3 : 5;
      b.conv = Conv2d<T>(cin, ch[i], k, ConvOpts{.stride = 1, .pad = k / 2}, rng);
      b.bn = BatchNorm2d<T>(ch[i]);
      b.pool = !last;
      blocks_.push_back(std::move(b));
      cin = ch[i];
    }
  }

  if (spec_.dida) {
    tap_index_ = parse_insertion(spec_.insertion, expected_blocks(spec_.variant)) - 1;
    dida_ = std::make_unique<DidaModule<T>>(*spec_.dida, rng);
  }

  fc1_ = Linear<T>(ch.back(), spec_.fc_hidden, rng);
  classifier_ = Linear<T>(spec_.fc_hidden, spec_.num_classes, rng);
}

template <typename T>
Tensor<T> Model<T>::res_block_forward(ResBlock& b, const Tensor<T>& x,
                                      bool training) {
  Tensor<T> y = relu(b.bn1.forward(b.conv1.forward(x), training));
  y = b.bn2.forward(b.conv2.forward(y), training);
  Tensor<T> sc = b.has_down ? b.down_bn.forward(b.down.forward(x), training) : x;
  return relu(add(y, sc));
}

template <typename T>
ModelOutput<T> Model<T>::forward(const Tensor<T>& x, bool training,
                                 RngStream* rng) {
  Tensor<T> h, tap;
  if (spec_.variant == Variant::kSmallResNet) {
    h = relu(stem_.bn.forward(stem_.conv.forward(x), training));
    if (spec_.mixstyle) h = mix_.forward(h, training, rng);
    for (size_t i = 0; i < res_blocks_.size(); ++i) {
      Tensor<T> out = res_block_forward(res_blocks_[i], h, training);
      if (dida_ && static_cast<int>(i) == tap_index_) tap = out;
      if (dida_ && static_cast<int>(i) == tap_index_ + 1) {
        out = add(out, dida_->forward(tap));
      }
      h = out;
    }
  } else {
    h = x;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      ConvBlock& b = blocks_[i];
      Tensor<T> out = relu(b.bn.forward(b.conv.forward(h), training));
      if (b.pool) out = max_pool2x2(out);
      if (spec_.mixstyle && i == 0) out = mix_.forward(out, training, rng);
      if (dida_ && static_cast<int>(i) == tap_index_) tap = out;
      if (dida_ && static_cast<int>(i) == tap_index_ + 1) {
        out = add(out, dida_->forward(tap));
      }
      h = out;
    }
  }

  Tensor<T> pooled = global_avg_pool(h);
  Tensor<T> features = reshape(pooled, {h.dim(0), h.dim(1)});
  Tensor<T> logits = classifier_.forward(relu(fc1_.forward(features)));
  return {std::move(logits), std::move(features)};
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::named_tensors() {
  std::vector<ParamRef<T>> out;
  if (spec_.variant == Variant::kSmallResNet) {
    stem_.conv.collect("stem.conv", out);
    stem_.bn.collect("stem.bn", out);
    for (size_t i = 0; i < res_blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      ResBlock& b = res_blocks_[i];
      b.conv1.collect(p + ".conv1", out);
      b.bn1.collect(p + ".bn1", out);
      b.conv2.collect(p + ".conv2", out);
      b.bn2.collect(p + ".bn2", out);
      if (b.has_down) {
        b.down.collect(p + ".down.conv", out);
        b.down_bn.collect(p + ".down.bn", out);
      }
    }
  } else {
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      blocks_[i].conv.collect(p + ".conv", out);
      blocks_[i].bn.collect(p + ".bn", out);
    }
  }
  if (dida_) dida_->collect("dida", out);
  fc1_.collect("fc1", out);
  classifier_.collect("classifier", out);
  return out;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::named_params() {
  std::vector<ParamRef<T>> out;
  for (auto& p : named_tensors()) {
    if (!p.is_buffer) out.push_back(p);
  }
  return out;
}

template <typename T>
int64_t Model<T>::count_params(std::string_view prefix) {
  int64_t total = 0;
  for (auto& p : named_params()) {
    if (p.name.size() >= prefix.size() &&
        std::string_view(p.name).substr(0, prefix.size()) == prefix) {
      total += p.tensor.numel();
    }
  }
  return total;
}

template <typename T>
std::vector<LayerCost> Model<T>::summary(const Shape& input) const {
  if (input.size() != 4 || input[1] != spec_.in_channels) {
    throw ShapeError("summary expects (N," + std::to_string(spec_.in_channels) +
                     ",H,W), got " + shape_str(input));
  }
  const int64_t n = input[0];
  int64_t h = input[2], w = input[3];
  std::vector<LayerCost> rows;

  auto conv_row = [&](const std::string& name, const Conv2d<T>& c, int64_t& ch,
                      int64_t& cw, int64_t cin) {
    const int64_t kh = c.kh(), kw = c.kw();
    const int64_t oh = (ch + 2 * c.opts.pad - kh) / c.opts.stride + 1;
    const int64_t ow = (cw + 2 * c.opts.pad - kw) / c.opts.stride + 1;
    rows.push_back({name, {n, c.cout(), oh, ow}, c.cout() * cin * kh * kw,
                    n * c.cout() * oh * ow * cin * kh * kw});
    ch = oh;
    cw = ow;
  };
  auto bn_row = [&](const std::string& name, int64_t c, int64_t bh, int64_t bw) {
    rows.push_back({name, {n, c, bh, bw}, 2 * c, 0});
  };
  auto dida_rows = [&](int64_t th, int64_t tw) {
    const DidaConfig& dc = dida_->config();
    const int64_t cr = dc.reduced_channels();
    const int64_t ks = dc.kernel_size;
    for (const CostRow& r : dida_->cost_rows(n, th, tw)) {
      Shape s;
      if (r.name == "conv1") s = {n, cr, th, tw};
      else if (r.name.rfind("conv1_gen", 0) == 0) s = {n, cr, 1, 1};
      else if (r.name == "conv4") s = {n, dc.out_channels, th, tw};
      else if (r.name.rfind("apply", 0) == 0) s = {n, cr, th, tw};
      else s = {n, cr, ks, ks};  // generated or static kernel banks
      rows.push_back({"dida." + r.name, std::move(s), r.params, r.macs});
    }
  };

  const auto& ch = spec_.channels;
  if (spec_.variant == Variant::kSmallResNet) {
    conv_row("stem.conv", stem_.conv, h, w, spec_.in_channels);
    bn_row("stem.bn", ch[0], h, w);
    if (spec_.mixstyle) rows.push_back({"mixstyle", {n, ch[0], h, w}, 0, 0});
    int64_t cin = ch[0];
    int64_t th = 0, tw = 0;
    for (size_t i = 0; i < res_blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      const ResBlock& b = res_blocks_[i];
      int64_t bh = h, bw = w;
      conv_row(p + ".conv1", b.conv1, bh, bw, cin);
      bn_row(p + ".bn1", ch[i], bh, bw);
      conv_row(p + ".conv2", b.conv2, bh, bw, ch[i]);
      bn_row(p + ".bn2", ch[i], bh, bw);
      if (b.has_down) {
        int64_t sh = h, sw = w;
        conv_row(p + ".down.conv", b.down, sh, sw, cin);
        bn_row(p + ".down.bn", ch[i], sh, sw);
      }
      h = bh;
      w = bw;
      cin = ch[i];
      if (dida_ && static_cast<int>(i) == tap_index_) { th = h; tw = w; }
      if (dida_ && static_cast<int>(i) == tap_index_ + 1) dida_rows(th, tw);
    }
  } else {
    int64_t cin = spec_.in_channels;
    int64_t th = 0, tw = 0;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      const ConvBlock& b = blocks_[i];
      conv_row(p + ".conv", b.conv, h, w, cin);
      bn_row(p + ".bn", ch[i], h, w);
      if (b.pool) {
        h /= 2;
        w /= 2;
        rows.push_back({p + ".pool", {n, ch[i], h, w}, 0, 0});
      }
      if (spec_.mixstyle && i == 0) {
        rows.push_back({"mixstyle", {n, ch[i], h, w}, 0, 0});
      }
      cin = ch[i];
      if (dida_ && static_cast<int>(i) == tap_index_) { th = h; tw = w; }
      if (dida_ && static_cast<int>(i) == tap_index_ + 1) dida_rows(th, tw);
    }
  }

  rows.push_back({"gap", {n, ch.back(), 1, 1}, 0, 0});
  rows.push_back({"fc1", {n, spec_.fc_hidden},
                  ch.back() * spec_.fc_hidden + spec_.fc_hidden,
                  n * ch.back() * spec_.fc_hidden});
  rows.push_back({"classifier", {n, spec_.num_classes},
                  spec_.fc_hidden * spec_.num_classes + spec_.num_classes,
                  n * spec_.fc_hidden * spec_.num_classes});
  return rows;
}

template <typename T>
int64_t Model<T>::count_macs(const Shape& input) const {
  int64_t total = 0;
  for (const LayerCost& r : summary(input)) total += r.macs;
  return total;
}

template class Model<float>;
template class Model<double>;

}  // namespace dida
