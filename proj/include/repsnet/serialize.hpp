#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "repsnet/errors.hpp"

// Little-endian fixed-width binary I/O used by the checkpoint and index
// formats. Doubles round-trip bit-exactly via their u64 representation.
namespace repsnet::io {

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed");
}

inline void read_bytes(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw IoError("truncated file");
}

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(out, b, 4);
}

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    read_bytes(in, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(out, b, 8);
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    read_bytes(in, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& out, double v) {
    write_u64(out, std::bit_cast<uint64_t>(v));
}

inline double read_f64(std::istream& in) {
    return std::bit_cast<double>(read_u64(in));
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    if (!s.empty()) write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
    const uint32_t n = read_u32(in);
    std::string s(n, '\0');
    if (n > 0) read_bytes(in, s.data(), n);
    return s;
}

inline void write_magic(std::ostream& out, const char magic[4]) {
    write_bytes(out, magic, 4);
}

inline void expect_magic(std::istream& in, const char magic[4], const char* what) {
    char b[4];
    read_bytes(in, b, 4);
    if (std::memcmp(b, magic, 4) != 0) throw IoError(std::string("bad magic for ") + what);
}

} // namespace repsnet::io
