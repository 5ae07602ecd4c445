#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dida/error.hpp"
#include "dida/rng.hpp"
#include "dida/tensor.hpp"

namespace dida {

// ---------------------------------------------------------------------------
// IDX container I/O (big-endian headers, u8 payloads)

struct IdxImages {
  int64_t count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> data;  // count * rows * cols bytes, row-major
};

enum class IdxErrorKind { kBadMagic, kTruncated, kCountMismatch, kMalformed };

class IdxError : public IoError {
 public:
  IdxError(IdxErrorKind kind, const std::string& msg)
      : IoError(msg), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

IdxImages load_idx_images(const std::string& path);
std::vector<uint8_t> load_idx_labels(const std::string& path);
void save_idx_images(const std::string& path, const IdxImages& images);
void save_idx_labels(const std::string& path,
                     const std::vector<uint8_t>& labels);

// ---------------------------------------------------------------------------
// Datasets

struct LabeledSet {
  std::string domain;
  int64_t count = 0, h = 0, w = 0;
  std::vector<uint8_t> images;
  std::vector<int> labels;  // in [0, num_classes)
};

struct UnlabeledSet {
  std::string domain;
  int64_t count = 0, h = 0, w = 0;
  std::vector<uint8_t> images;
};

LabeledSet load_labeled(const std::string& images_path,
                        const std::string& labels_path,
                        const std::string& domain, int num_classes = 10);
UnlabeledSet strip_labels(const LabeledSet& s);
// Rows [offset, offset+limit) of s; limit <= 0 takes everything past offset.
LabeledSet subset(const LabeledSet& s, int64_t offset, int64_t limit);

// ---------------------------------------------------------------------------
// Synthetic domain shift: pixel-level transforms chained with '+', e.g.
// "invert+noise:0.2". Recipes: invert, noise:<sigma>, rotate:<deg>,
// stripes:<period>. Deterministic given seed; labels preserved.

LabeledSet make_synthetic_domain(const LabeledSet& base,
                                 const std::string& recipe, uint64_t seed);

// ---------------------------------------------------------------------------
// Per-image augmentation (u8 grayscale h*w planes)

// Integer shift with zero fill; (0,0) is the identity.
void shift_image(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                 int dx, int dy);
// Random shift up to +-2 px (optionally a horizontal flip first, for
// non-digit data).
void weak_augment(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                  RngStream& rng, bool hflip = false);
// Two photometric/geometric ops followed by erasing a quarter-area patch.
void strong_augment(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                    RngStream& rng);

// ---------------------------------------------------------------------------
// Normalization: u8 -> [0,1] -> (x - mean) / std, mapped onto a 32x32 canvas
// (28x28 inputs are zero-padded by 2, 16x16 inputs are 2x nearest-neighbor
// upscaled so digit scales stay comparable across domains).

struct Normalizer {
  double mean = 0.5;
  double std_dev = 0.5;

  TensorF to_tensor(const uint8_t* images, int64_t n, int64_t h,
                    int64_t w) const;
  // Inverse map back to [0,1] intensity; round-trips u8 values to < 1e-6.
  double denormalize(float v) const { return static_cast<double>(v) * std_dev + mean; }
};

// ---------------------------------------------------------------------------
// K*B + B domain batches

struct DomainBatch {
  TensorF source_x;  // (K*B, 1, 32, 32)
  std::vector<int> source_y;
  TensorF target_weak;    // (B, 1, 32, 32)
  TensorF target_strong;  // (B, 1, 32, 32), index-aligned with target_weak
  std::vector<int64_t> target_indices;  // instrumentation: sampled base rows
};

// Deterministic sampler: every batch is a pure function of (seed, step), so
// runs are reproducible and prefetching cannot reorder deliveries.
class BatchSampler {
 public:
  BatchSampler(std::vector<const LabeledSet*> sources,
               const UnlabeledSet* target, Normalizer norm, int64_t batch,
               uint64_t seed, bool augment_source = true);

  int64_t steps_per_epoch() const { return steps_per_epoch_; }
  int64_t batch_size() const { return batch_; }
  int64_t num_sources() const { return static_cast<int64_t>(sources_.size()); }
  // True when some set is smaller than the batch and sampling falls back to
  // drawing with replacement.
  bool replacement_fallback() const { return replacement_fallback_; }

  DomainBatch next(int64_t step);

 private:
  std::vector<const LabeledSet*> sources_;
  const UnlabeledSet* target_;
  Normalizer norm_;
  int64_t batch_;
  uint64_t seed_;
  bool augment_source_;
  int64_t steps_per_epoch_ = 0;
  bool replacement_fallback_ = false;
  int64_t cached_epoch_ = -1;
  std::vector<int64_t> target_order_;
};

}  // namespace dida
