#pragma once

#include <string>
#include <vector>

#include "dida/optim.hpp"

namespace dida {

// Checkpoint container: a text manifest followed by a raw float32 payload.
//
//   DIDA1
//   tensor <name> <shape> <byte-offset>
//   ...
//   data <payload-bytes>
//   <raw little-endian float32 values, in manifest order>
//
// Offsets are relative to the payload start. Values round-trip bit-exactly.
// Buffers (running statistics) are stored alongside trainable parameters.

void save_checkpoint(const std::string& path,
                     const std::vector<ParamRef<float>>& tensors);

// Strict restore: the file must contain exactly the given tensor names with
// matching shapes; values are copied in place. Throws IoError otherwise.
void load_checkpoint(const std::string& path,
                     std::vector<ParamRef<float>>& tensors);

}  // namespace dida
