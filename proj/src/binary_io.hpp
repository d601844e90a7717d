#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

namespace tvgcn::io {

// Little-endian primitives shared by the checkpoint and dataset formats.

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

inline std::uint16_t to_le16(std::uint16_t v) {
    if constexpr (std::endian::native == std::endian::big) v = static_cast<std::uint16_t>((v << 8) | (v >> 8));
    return v;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline bool read_magic(std::istream& in, std::string_view magic) {
    char buf[4] = {};
    in.read(buf, 4);
    return in.gcount() == 4 && magic.size() == 4 && std::memcmp(buf, magic.data(), 4) == 0;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    v = to_le(v);
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline bool read_u32(std::istream& in, std::uint32_t& v) {
    in.read(reinterpret_cast<char*>(&v), 4);
    if (in.gcount() != 4) return false;
    v = to_le(v);
    return true;
}

inline void write_f32s(std::ostream& out, std::span<const float> values) {
    for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline bool read_f32s(std::istream& in, std::span<float> values) {
    for (auto& f : values) {
        std::uint32_t bits = 0;
        if (!read_u32(in, bits)) return false;
        f = std::bit_cast<float>(bits);
    }
    return true;
}

inline void write_u16s(std::ostream& out, std::span<const std::uint16_t> values) {
    for (auto v : values) {
        v = to_le16(v);
        out.write(reinterpret_cast<const char*>(&v), 2);
    }
}

inline bool read_u16s(std::istream& in, std::span<std::uint16_t> values) {
    for (auto& v : values) {
        in.read(reinterpret_cast<char*>(&v), 2);
        if (in.gcount() != 2) return false;
        v = to_le16(v);
    }
    return true;
}

} // namespace tvgcn::io
