#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "dida/data.hpp"

namespace dida {

namespace {

uint8_t clamp_u8(double v) {
  return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

// Bilinear sample with zero fill outside the canvas.
double sample_bilinear(const uint8_t* src, int64_t h, int64_t w, double y,
                       double x) {
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto at = [&](int64_t yy, int64_t xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return static_cast<double>(src[yy * w + xx]);
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

void rotate_image(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                  double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1) / 2.0;
  const double cx = (static_cast<double>(w) - 1) / 2.0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      // Inverse rotation of the destination coordinate.
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = cy + (s * dx + c * dy);
      const double sx = cx + (c * dx - s * dy);
      dst[y * w + x] = clamp_u8(sample_bilinear(src, h, w, sy, sx));
    }
  }
}

void shear_image(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                 double factor) {
  const double cy = (static_cast<double>(h) - 1) / 2.0;
  for (int64_t y = 0; y < h; ++y) {
    const double off = factor * (static_cast<double>(y) - cy);
    for (int64_t x = 0; x < w; ++x) {
      dst[y * w + x] =
          clamp_u8(sample_bilinear(src, h, w, static_cast<double>(y),
                                   static_cast<double>(x) + off));
    }
  }
}

void box_blur3(const uint8_t* src, double* dst, int64_t h, int64_t w) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t ky = -1; ky <= 1; ++ky) {
        for (int64_t kx = -1; kx <= 1; ++kx) {
          const int64_t yy = std::clamp<int64_t>(y + ky, 0, h - 1);
          const int64_t xx = std::clamp<int64_t>(x + kx, 0, w - 1);
          acc += static_cast<double>(src[yy * w + xx]);
        }
      }
      dst[y * w + x] = acc / 9.0;
    }
  }
}

}  // namespace

void shift_image(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                 int dx, int dy) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t sy = y - dy, sx = x - dx;
      dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                           ? src[sy * w + sx]
                           : uint8_t(0);
    }
  }
}

void weak_augment(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                  RngStream& rng, bool hflip) {
  std::vector<uint8_t> flipped;
  const uint8_t* base = src;
  if (hflip && rng.bernoulli(0.5)) {
    flipped.resize(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        flipped[y * w + x] = src[y * w + (w - 1 - x)];
      }
    }
    base = flipped.data();
  }
  const int dx = static_cast<int>(rng.uniform_int(-2, 2));
  const int dy = static_cast<int>(rng.uniform_int(-2, 2));
  shift_image(base, dst, h, w, dx, dy);
}

void strong_augment(const uint8_t* src, uint8_t* dst, int64_t h, int64_t w,
                    RngStream& rng) {
  const size_t plane = static_cast<size_t>(h * w);
  std::vector<uint8_t> cur(src, src + plane), nxt(plane);

  for (int round = 0; round < 2; ++round) {
    const int64_t op = rng.uniform_int(0, 7);
    switch (op) {
      case 0: {  // invert-region
        const int64_t rw = rng.uniform_int(w / 4, (3 * w) / 4);
        const int64_t rh = rng.uniform_int(h / 4, (3 * h) / 4);
        const int64_t x0 = rng.uniform_int(0, w - rw);
        const int64_t y0 = rng.uniform_int(0, h - rh);
        nxt = cur;
        for (int64_t y = y0; y < y0 + rh; ++y) {
          for (int64_t x = x0; x < x0 + rw; ++x) {
            nxt[y * w + x] = static_cast<uint8_t>(255 - nxt[y * w + x]);
          }
        }
        break;
      }
      case 1: {  // posterize
        const int64_t bits = rng.uniform_int(3, 6);
        const uint8_t mask = static_cast<uint8_t>(0xFF << (8 - bits));
        for (size_t i = 0; i < plane; ++i) nxt[i] = cur[i] & mask;
        break;
      }
      case 2: {  // sharpness
        const double f = rng.uniform(0.1, 1.9);
        std::vector<double> blur(plane);
        box_blur3(cur.data(), blur.data(), h, w);
        for (size_t i = 0; i < plane; ++i) {
          nxt[i] = clamp_u8(blur[i] + f * (cur[i] - blur[i]));
        }
        break;
      }
      case 3: {  // shear
        shear_image(cur.data(), nxt.data(), h, w, rng.uniform(-0.3, 0.3));
        break;
      }
      case 4: {  // translate up to a quarter of the canvas
        const int dx = static_cast<int>(rng.uniform_int(-w / 4, w / 4));
        const int dy = static_cast<int>(rng.uniform_int(-h / 4, h / 4));
        shift_image(cur.data(), nxt.data(), h, w, dx, dy);
        break;
      }
      case 5: {  // rotate
        rotate_image(cur.data(), nxt.data(), h, w, rng.uniform(-30.0, 30.0));
        break;
      }
      case 6: {  // contrast
        const double f = rng.uniform(0.1, 1.9);
        double mean = 0.0;
        for (size_t i = 0; i < plane; ++i) mean += cur[i];
        mean /= static_cast<double>(plane);
        for (size_t i = 0; i < plane; ++i) {
          nxt[i] = clamp_u8(mean + f * (cur[i] - mean));
        }
        break;
      }
      default: {  // brightness
        const double f = rng.uniform(0.1, 1.9);
        for (size_t i = 0; i < plane; ++i) nxt[i] = clamp_u8(f * cur[i]);
        break;
      }
    }
    cur.swap(nxt);
  }

  // Random erasing of a quarter-area patch.
  const int64_t rw = w / 2, rh = h / 2;
  const int64_t x0 = rng.uniform_int(0, w - rw);
  const int64_t y0 = rng.uniform_int(0, h - rh);
  for (int64_t y = y0; y < y0 + rh; ++y) {
    std::memset(cur.data() + y * w + x0, 0, static_cast<size_t>(rw));
  }
  std::memcpy(dst, cur.data(), plane);
}

LabeledSet make_synthetic_domain(const LabeledSet& base,
                                 const std::string& recipe, uint64_t seed) {
  LabeledSet out = base;
  out.domain = base.domain + "+" + recipe;

  const int64_t plane = base.h * base.w;
  std::stringstream chain(recipe);
  std::string stage;
  int stage_idx = 0;
  while (std::getline(chain, stage, '+')) {
    std::string name = stage;
    std::string param;
    if (auto pos = stage.find(':'); pos != std::string::npos) {
      name = stage.substr(0, pos);
      param = stage.substr(pos + 1);
    }
    auto need_param = [&](const char* what) -> double {
      try {
        if (param.empty()) throw std::invalid_argument("missing");
        size_t used = 0;
        double v = std::stod(param, &used);
        if (used != param.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("recipe: '" + stage + "' needs a numeric " + what +
                          " (e.g. '" + name + ":0.2')");
      }
    };

    if (name == "invert") {
      if (!param.empty()) {
        throw ConfigError("recipe: 'invert' takes no parameter");
      }
      for (auto& v : out.images) v = static_cast<uint8_t>(255 - v);
    } else if (name == "noise") {
      const double sigma = need_param("sigma");
      if (sigma < 0) throw ConfigError("recipe: noise sigma must be >= 0");
      if (sigma > 0) {
        for (int64_t i = 0; i < out.count; ++i) {
          RngStream rng(derive_seed(seed, "noise", static_cast<uint64_t>(i),
                                    static_cast<uint64_t>(stage_idx)));
          uint8_t* img = out.images.data() + i * plane;
          for (int64_t p = 0; p < plane; ++p) {
            const double x =
                static_cast<double>(img[p]) / 255.0 + rng.normal(0.0, sigma);
            img[p] = clamp_u8(std::clamp(x, 0.0, 1.0) * 255.0);
          }
        }
      }
    } else if (name == "rotate") {
      const double deg = need_param("angle in degrees");
      std::vector<uint8_t> tmp(static_cast<size_t>(plane));
      for (int64_t i = 0; i < out.count; ++i) {
        uint8_t* img = out.images.data() + i * plane;
        rotate_image(img, tmp.data(), out.h, out.w, deg);
        std::memcpy(img, tmp.data(), static_cast<size_t>(plane));
      }
    } else if (name == "stripes") {
      const int64_t period = static_cast<int64_t>(need_param("period"));
      if (period < 1) throw ConfigError("recipe: stripes period must be >= 1");
      for (int64_t i = 0; i < out.count; ++i) {
        uint8_t* img = out.images.data() + i * plane;
        for (int64_t y = 0; y < out.h; ++y) {
          if ((y / period) % 2 == 1) {
            for (int64_t x = 0; x < out.w; ++x) {
              img[y * out.w + x] = static_cast<uint8_t>(img[y * out.w + x] / 4);
            }
          }
        }
      }
    } else {
      throw ConfigError("recipe: unknown stage '" + stage +
                        "' (expected invert, noise:s, rotate:deg, stripes:k)");
    }
    ++stage_idx;
  }
  return out;
}

TensorF Normalizer::to_tensor(const uint8_t* images, int64_t n, int64_t h,
                              int64_t w) const {
  if (std_dev <= 0) throw ValueError("normalize: std must be positive");
  if (n <= 0) throw ValueError("normalize: need at least one image");
  constexpr int64_t kCanvas = 32;
  const float pad = static_cast<float>((0.0 - mean) / std_dev);
  auto scale = [&](uint8_t v) {
    return static_cast<float>((static_cast<double>(v) / 255.0 - mean) /
                              std_dev);
  };

  std::vector<float> out(static_cast<size_t>(n * kCanvas * kCanvas), pad);
  const int64_t plane = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* src = images + i * plane;
    float* dst = out.data() + i * kCanvas * kCanvas;
    if (h == 32 && w == 32) {
      for (int64_t p = 0; p < plane; ++p) dst[p] = scale(src[p]);
    } else if (h == 28 && w == 28) {
      for (int64_t y = 0; y < 28; ++y) {
        for (int64_t x = 0; x < 28; ++x) {
          dst[(y + 2) * kCanvas + (x + 2)] = scale(src[y * 28 + x]);
        }
      }
    } else if (h == 16 && w == 16) {
      for (int64_t y = 0; y < 32; ++y) {
        for (int64_t x = 0; x < 32; ++x) {
          dst[y * kCanvas + x] = scale(src[(y / 2) * 16 + (x / 2)]);
        }
      }
    } else {
      throw ValueError("normalize: unsupported image size " +
                       std::to_string(h) + "x" + std::to_string(w) +
                       " (expected 16x16, 28x28 or 32x32)");
    }
  }
  return TensorF::from_vec({n, 1, kCanvas, kCanvas}, std::move(out), false);
}

}  // namespace dida
