#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>

#include "demseg/volume.hpp"

namespace demseg {

// Raised for malformed or unreadable MIV containers.
class MivError : public std::runtime_error {
public:
    explicit MivError(const std::string& what) : std::runtime_error(what) {}
};

using MivGrid = std::variant<Volume, LabelMap>;

// MIV container layout, bit-exact:
//   "MIV1" 0x0A
//   one UTF-8 JSON line {"shape":[Z,Y,X],"spacing":[dz,dy,dx],"dtype":"f32"|"u8"} 0x0A
//   raw little-endian payload of exactly Z*Y*X elements, no trailing bytes.
MivGrid read_miv(const std::filesystem::path& path);
Volume read_miv_volume(const std::filesystem::path& path);
LabelMap read_miv_labels(const std::filesystem::path& path);

void write_miv(const Volume& v, const std::filesystem::path& path);
void write_miv(const LabelMap& m, const std::filesystem::path& path);

}  // namespace demseg
