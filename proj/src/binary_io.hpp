#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "cspkit/error.hpp"

namespace cspkit::detail {

// Little-endian field encoding independent of host byte order.
template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

template <typename U>
bool get_le(std::istream& in, U& value) {
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
    value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return true;
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    std::uint32_t v = 0;
    if (!get_le(in, v)) throw ValidationError("file truncated reading " + what);
    return v;
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
    std::uint64_t v = 0;
    if (!get_le(in, v)) throw ValidationError("file truncated reading " + what);
    return v;
}

inline double get_f64(std::istream& in, const std::string& what) {
    return std::bit_cast<double>(get_u64(in, what));
}

}  // namespace cspkit::detail
