#pragma once

#include <filesystem>

#include "demseg/unet.hpp"

namespace demseg {

// Parameter checkpoint, MIV-style: "MIVP" 0x0A, a JSON manifest line with
// the network config and every named tensor (name, shape), then the tensors'
// little-endian 32-bit payloads concatenated in manifest order.
void save_checkpoint(const UNetParams& params, const std::filesystem::path& path);
UNetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace demseg
