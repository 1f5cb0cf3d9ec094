#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <type_traits>

#include "tsd/numeric/errors.hpp"

// Little-endian primitives shared by the binary file formats.
namespace tsd::binary {

template <class T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    std::array<char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    }
    out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in) {
    static_assert(std::is_unsigned_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw IoError("truncated binary file");
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
}

inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline void put_i64(std::ostream& out, std::int64_t v) {
    put_le(out, static_cast<std::uint64_t>(v));
}
inline std::int64_t get_i64(std::istream& in) {
    return static_cast<std::int64_t>(get_le<std::uint64_t>(in));
}

}  // namespace tsd::binary
