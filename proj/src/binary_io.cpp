#include "xproto/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "xproto/error.hpp"

namespace xproto {

Bytes read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("missing file: " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed to write " + path.string());
}

namespace {

void put_u32(std::uint8_t* dst, std::uint32_t v) {
    dst[0] = static_cast<std::uint8_t>(v);
    dst[1] = static_cast<std::uint8_t>(v >> 8);
    dst[2] = static_cast<std::uint8_t>(v >> 16);
    dst[3] = static_cast<std::uint8_t>(v >> 24);
}

std::uint32_t get_u32(const std::uint8_t* src) {
    return static_cast<std::uint32_t>(src[0]) | (static_cast<std::uint32_t>(src[1]) << 8) |
           (static_cast<std::uint32_t>(src[2]) << 16) | (static_cast<std::uint32_t>(src[3]) << 24);
}

}  // namespace

Bytes encode_f32(std::span<const double> values) {
    Bytes out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        put_u32(out.data() + 4 * i, std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
    }
    return out;
}

std::vector<double> decode_f32(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) throw ValidationError("f32 block: byte-count mismatch");
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + 4 * i)));
    }
    return out;
}

Bytes encode_u32(std::span<const std::uint32_t> values) {
    Bytes out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) put_u32(out.data() + 4 * i, values[i]);
    return out;
}

std::vector<std::uint32_t> decode_u32(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) throw ValidationError("u32 block: byte-count mismatch");
    std::vector<std::uint32_t> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_u32(bytes.data() + 4 * i);
    return out;
}

}  // namespace xproto
