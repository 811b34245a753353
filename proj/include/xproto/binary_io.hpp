#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xproto {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Little-endian IEEE-754 single precision. Doubles are narrowed on encode.
Bytes encode_f32(std::span<const double> values);
std::vector<double> decode_f32(std::span<const std::uint8_t> bytes);

Bytes encode_u32(std::span<const std::uint32_t> values);
std::vector<std::uint32_t> decode_u32(std::span<const std::uint8_t> bytes);

// Rounds to the nearest f32-representable value.
inline double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace xproto
