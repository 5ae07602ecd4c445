#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "dida/data.hpp"

namespace dida {

namespace {

// B distinct rows when possible, otherwise with replacement (the caller
// records the fallback once at construction).
std::vector<int64_t> pick_rows(int64_t count, int64_t batch, RngStream& rng) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(batch));
  if (batch > count) {
    for (int64_t i = 0; i < batch; ++i) {
      out.push_back(rng.uniform_int(0, count - 1));
    }
  } else if (batch * 4 <= count) {
    std::unordered_set<int64_t> seen;
    while (static_cast<int64_t>(out.size()) < batch) {
      const int64_t idx = rng.uniform_int(0, count - 1);
      if (seen.insert(idx).second) out.push_back(idx);
    }
  } else {
    std::vector<int64_t> all(static_cast<size_t>(count));
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all.begin(), all.end());
    out.assign(all.begin(), all.begin() + batch);
  }
  return out;
}

}  // namespace

BatchSampler::BatchSampler(std::vector<const LabeledSet*> sources,
                           const UnlabeledSet* target, Normalizer norm,
                           int64_t batch, uint64_t seed, bool augment_source)
    : sources_(std::move(sources)),
      target_(target),
      norm_(norm),
      batch_(batch),
      seed_(seed),
      augment_source_(augment_source) {
  if (sources_.empty()) throw ValueError("sampler: need at least one source");
  if (target_ == nullptr) throw ValueError("sampler: need a target set");
  if (batch_ < 1) throw ValueError("sampler: batch must be >= 1");
  for (const auto* s : sources_) {
    if (s == nullptr || s->count <= 0) {
      throw ValueError("sampler: empty source set");
    }
    if (s->count < batch_) replacement_fallback_ = true;
  }
  if (target_->count <= 0) throw ValueError("sampler: empty target set");
  if (target_->count < batch_) replacement_fallback_ = true;
  steps_per_epoch_ = std::max<int64_t>(1, target_->count / batch_);
}

DomainBatch BatchSampler::next(int64_t step) {
  if (step < 0) throw ValueError("sampler: negative step");
  const int64_t epoch = step / steps_per_epoch_;
  const int64_t pos = step % steps_per_epoch_;
  const int64_t th = target_->h, tw = target_->w;
  const int64_t tplane = th * tw;

  // Target rows: a fresh shuffled pass per epoch (epoch == target coverage).
  std::vector<int64_t> trows;
  if (batch_ <= target_->count) {
    if (cached_epoch_ != epoch) {
      target_order_.resize(static_cast<size_t>(target_->count));
      std::iota(target_order_.begin(), target_order_.end(), 0);
      RngStream order_rng(derive_seed(seed_, "target_order",
                                      static_cast<uint64_t>(epoch)));
      order_rng.shuffle(target_order_.begin(), target_order_.end());
      cached_epoch_ = epoch;
    }
    trows.assign(target_order_.begin() + pos * batch_,
                 target_order_.begin() + (pos + 1) * batch_);
  } else {
    RngStream trng(derive_seed(seed_, "target_pick",
                               static_cast<uint64_t>(step)));
    trows = pick_rows(target_->count, batch_, trng);
  }

  std::vector<uint8_t> weak_buf(static_cast<size_t>(batch_ * tplane));
  std::vector<uint8_t> strong_buf(static_cast<size_t>(batch_ * tplane));
  for (int64_t i = 0; i < batch_; ++i) {
    const uint8_t* src = target_->images.data() + trows[i] * tplane;
    RngStream wrng(derive_seed(seed_, "weak", static_cast<uint64_t>(step),
                               static_cast<uint64_t>(i)));
    weak_augment(src, weak_buf.data() + i * tplane, th, tw, wrng);
    RngStream srng(derive_seed(seed_, "strong", static_cast<uint64_t>(step),
                               static_cast<uint64_t>(i)));
    strong_augment(src, strong_buf.data() + i * tplane, th, tw, srng);
  }

  DomainBatch out;
  out.target_weak = norm_.to_tensor(weak_buf.data(), batch_, th, tw);
  out.target_strong = norm_.to_tensor(strong_buf.data(), batch_, th, tw);
  out.target_indices = std::move(trows);

  const int64_t k = num_sources();
  const int64_t sh = sources_[0]->h, sw = sources_[0]->w;
  const int64_t splane = sh * sw;
  std::vector<uint8_t> src_buf(static_cast<size_t>(k * batch_ * splane));
  out.source_y.reserve(static_cast<size_t>(k * batch_));
  for (int64_t d = 0; d < k; ++d) {
    const LabeledSet* set = sources_[static_cast<size_t>(d)];
    if (set->h != sh || set->w != sw) {
      throw ValueError("sampler: source image sizes differ across domains");
    }
    RngStream pick(derive_seed(seed_, "source_pick",
                               static_cast<uint64_t>(step),
                               static_cast<uint64_t>(d)));
    std::vector<int64_t> rows = pick_rows(set->count, batch_, pick);
    for (int64_t i = 0; i < batch_; ++i) {
      const int64_t slot = d * batch_ + i;
      const uint8_t* img = set->images.data() + rows[i] * splane;
      uint8_t* dst = src_buf.data() + slot * splane;
      if (augment_source_) {
        RngStream arng(derive_seed(seed_, "source_weak",
                                   static_cast<uint64_t>(step),
                                   static_cast<uint64_t>(slot)));
        weak_augment(img, dst, sh, sw, arng);
      } else {
        std::copy(img, img + splane, dst);
      }
      out.source_y.push_back(set->labels[static_cast<size_t>(rows[i])]);
    }
  }
  out.source_x = norm_.to_tensor(src_buf.data(), k * batch_, sh, sw);
  return out;
}

}  // namespace dida
