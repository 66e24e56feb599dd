#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "maskfuse/errors.hpp"

namespace maskfuse::io {

// Little-endian primitives written byte by byte, so the on-disk layout is the
// same on every host. Doubles travel as their IEEE-754 bit pattern, which
// keeps round trips exact for every value including -0.0 and subnormals.

inline void write_u16(std::ostream& out, std::uint16_t v) {
    const char bytes[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
    out.write(bytes, 2);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

inline void write_f64(std::ostream& out, double v) {
    write_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) {
    out.write(magic, 4);
}

inline void read_bytes(std::istream& in, char* buffer, std::size_t n, const std::string& what) {
    in.read(buffer, static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
        throw DataError("truncated file while reading " + what);
    }
}

inline std::uint16_t read_u16(std::istream& in, const std::string& what) {
    char bytes[2];
    read_bytes(in, bytes, 2, what);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[0]) |
                                      (static_cast<unsigned char>(bytes[1]) << 8));
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
    char bytes[4];
    read_bytes(in, bytes, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& in, const std::string& what) {
    char bytes[8];
    read_bytes(in, bytes, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    return v;
}

inline double read_f64(std::istream& in, const std::string& what) {
    return std::bit_cast<double>(read_u64(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
    char bytes[4];
    read_bytes(in, bytes, 4, what + " magic");
    for (int i = 0; i < 4; ++i) {
        if (bytes[i] != magic[i]) {
            throw DataError("bad magic in " + what + " (expected \"" + magic + "\")");
        }
    }
}

} // namespace maskfuse::io
