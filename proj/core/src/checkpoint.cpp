#include "dida/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dida/error.hpp"
#include "dida/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace dida {

namespace {
constexpr char kMagic[] = "DIDA1";

Shape parse_shape(const std::string& s) {
  if (s.size() < 2 || s.front() != '(' || s.back() != ')') {
    throw IoError("checkpoint: malformed shape '" + s + "'");
  }
  Shape shape;
  std::string body = s.substr(1, s.size() - 2);
  if (body.empty()) return shape;
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      shape.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw IoError("checkpoint: malformed shape '" + s + "'");
    }
  }
  return shape;
}
}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<ParamRef<float>>& tensors) {
  std::ostringstream manifest;
  manifest << kMagic << "\n";
  int64_t offset = 0;
  for (const auto& t : tensors) {
    manifest << "tensor " << t.name << " " << shape_str(t.tensor.shape())
             << " " << offset << "\n";
    offset += t.tensor.numel() * static_cast<int64_t>(sizeof(float));
  }
  manifest << "data " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  const std::string head = manifest.str();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& t : tensors) {
    auto d = t.tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(float)));
  }
  out.flush();
  if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

void load_checkpoint(const std::string& path,
                     std::vector<ParamRef<float>>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw IoError("checkpoint: '" + path + "' has no DIDA1 header");
  }

  struct Entry {
    Shape shape;
    int64_t offset = 0;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;
  int64_t payload_bytes = -1;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "tensor") {
      std::string name, shape_s;
      int64_t off = -1;
      ss >> name >> shape_s >> off;
      if (name.empty() || off < 0 || ss.fail()) {
        throw IoError("checkpoint: malformed manifest line '" + line + "'");
      }
      if (!entries.emplace(name, Entry{parse_shape(shape_s), off}).second) {
        throw IoError("checkpoint: duplicate tensor '" + name + "'");
      }
      order.push_back(name);
    } else if (kind == "data") {
      ss >> payload_bytes;
      if (payload_bytes < 0 || ss.fail()) {
        throw IoError("checkpoint: malformed data line '" + line + "'");
      }
      break;
    } else {
      throw IoError("checkpoint: unexpected manifest line '" + line + "'");
    }
  }
  if (payload_bytes < 0) {
    throw IoError("checkpoint: '" + path + "' is missing the data section");
  }

  std::vector<char> payload(static_cast<size_t>(payload_bytes));
  in.read(payload.data(), payload_bytes);
  if (in.gcount() != payload_bytes) {
    throw IoError("checkpoint: '" + path + "' payload is truncated");
  }

  if (entries.size() != tensors.size()) {
    throw IoError("checkpoint: '" + path + "' holds " +
                  std::to_string(entries.size()) + " tensors, expected " +
                  std::to_string(tensors.size()));
  }
  for (auto& t : tensors) {
    auto it = entries.find(t.name);
    if (it == entries.end()) {
      throw IoError("checkpoint: '" + path + "' is missing tensor '" + t.name +
                    "'");
    }
    if (it->second.shape != t.tensor.shape()) {
      throw IoError("checkpoint: tensor '" + t.name + "' has shape " +
                    shape_str(it->second.shape) + ", expected " +
                    shape_str(t.tensor.shape()));
    }
    const int64_t bytes = t.tensor.numel() * static_cast<int64_t>(sizeof(float));
    if (it->second.offset + bytes > payload_bytes) {
      throw IoError("checkpoint: tensor '" + t.name + "' overruns the payload");
    }
    auto dst = t.tensor.raw_data();
    std::memcpy(dst.data(), payload.data() + it->second.offset,
                static_cast<size_t>(bytes));
  }
}

}  // namespace dida
