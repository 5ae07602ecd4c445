#include <algorithm>
#include <cstdint>
#include <fstream>

#include "dida/data.hpp"

namespace dida {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw IdxError(IdxErrorKind::kTruncated,
                   "idx: '" + path + "' ends inside the header");
  }
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("idx: cannot open '" + path + "'");
  return in;
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::ifstream in = open_input(path);
  const uint32_t magic = read_be32(in, path);
  if (magic != kImageMagic) {
    throw IdxError(IdxErrorKind::kBadMagic,
                   "idx: '" + path + "' has magic " + std::to_string(magic) +
                       ", expected 2051 (u8 images, 3 dims)");
  }
  IdxImages out;
  out.count = read_be32(in, path);
  out.rows = read_be32(in, path);
  out.cols = read_be32(in, path);
  if (out.count <= 0 || out.rows <= 0 || out.cols <= 0) {
    throw IdxError(IdxErrorKind::kMalformed,
                   "idx: '" + path + "' declares an empty image array");
  }
  const int64_t bytes = out.count * out.rows * out.cols;
  out.data.resize(static_cast<size_t>(bytes));
  in.read(reinterpret_cast<char*>(out.data.data()), bytes);
  if (in.gcount() != bytes) {
    throw IdxError(IdxErrorKind::kTruncated,
                   "idx: '" + path + "' payload is shorter than the header " +
                       "promises (" + std::to_string(in.gcount()) + " of " +
                       std::to_string(bytes) + " bytes)");
  }
  return out;
}

std::vector<uint8_t> load_idx_labels(const std::string& path) {
  std::ifstream in = open_input(path);
  const uint32_t magic = read_be32(in, path);
  if (magic != kLabelMagic) {
    throw IdxError(IdxErrorKind::kBadMagic,
                   "idx: '" + path + "' has magic " + std::to_string(magic) +
                       ", expected 2049 (u8 labels, 1 dim)");
  }
  const int64_t count = read_be32(in, path);
  if (count <= 0) {
    throw IdxError(IdxErrorKind::kMalformed,
                   "idx: '" + path + "' declares an empty label array");
  }
  std::vector<uint8_t> labels(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(labels.data()), count);
  if (in.gcount() != count) {
    throw IdxError(IdxErrorKind::kTruncated,
                   "idx: '" + path + "' label payload is truncated");
  }
  return labels;
}

void save_idx_images(const std::string& path, const IdxImages& images) {
  if (images.count <= 0 || images.rows <= 0 || images.cols <= 0 ||
      images.data.size() !=
          static_cast<size_t>(images.count * images.rows * images.cols)) {
    throw ValueError("idx: image array fields do not match the payload size");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("idx: cannot open '" + path + "' for writing");
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<uint32_t>(images.count));
  write_be32(out, static_cast<uint32_t>(images.rows));
  write_be32(out, static_cast<uint32_t>(images.cols));
  out.write(reinterpret_cast<const char*>(images.data.data()),
            static_cast<std::streamsize>(images.data.size()));
  if (!out) throw IoError("idx: write to '" + path + "' failed");
}

void save_idx_labels(const std::string& path,
                     const std::vector<uint8_t>& labels) {
  if (labels.empty()) throw ValueError("idx: refusing to write empty labels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("idx: cannot open '" + path + "' for writing");
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw IoError("idx: write to '" + path + "' failed");
}

LabeledSet load_labeled(const std::string& images_path,
                        const std::string& labels_path,
                        const std::string& domain, int num_classes) {
  IdxImages imgs = load_idx_images(images_path);
  std::vector<uint8_t> labels = load_idx_labels(labels_path);
  if (static_cast<int64_t>(labels.size()) != imgs.count) {
    throw IdxError(IdxErrorKind::kCountMismatch,
                   "idx: '" + images_path + "' holds " +
                       std::to_string(imgs.count) + " images but '" +
                       labels_path + "' holds " +
                       std::to_string(labels.size()) + " labels");
  }
  LabeledSet out;
  out.domain = domain;
  out.count = imgs.count;
  out.h = imgs.rows;
  out.w = imgs.cols;
  out.images = std::move(imgs.data);
  out.labels.reserve(labels.size());
  for (uint8_t l : labels) {
    if (static_cast<int>(l) >= num_classes) {
      throw ValueError("idx: '" + labels_path + "' contains label " +
                       std::to_string(int(l)) + " outside [0," +
                       std::to_string(num_classes) + ")");
    }
    out.labels.push_back(static_cast<int>(l));
  }
  return out;
}

UnlabeledSet strip_labels(const LabeledSet& s) {
  return UnlabeledSet{s.domain, s.count, s.h, s.w, s.images};
}

LabeledSet subset(const LabeledSet& s, int64_t offset, int64_t limit) {
  if (offset < 0 || offset >= s.count) {
    throw ValueError("subset: offset " + std::to_string(offset) +
                     " outside dataset of " + std::to_string(s.count));
  }
  int64_t n = (limit <= 0) ? s.count - offset
                           : std::min<int64_t>(limit, s.count - offset);
  LabeledSet out;
  out.domain = s.domain;
  out.count = n;
  out.h = s.h;
  out.w = s.w;
  const int64_t plane = s.h * s.w;
  out.images.assign(s.images.begin() + offset * plane,
                    s.images.begin() + (offset + n) * plane);
  out.labels.assign(s.labels.begin() + offset, s.labels.begin() + offset + n);
  return out;
}

}  // namespace dida
