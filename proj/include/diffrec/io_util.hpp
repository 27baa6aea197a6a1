#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "diffrec/errors.hpp"

namespace diffrec {

// Write via a sibling temp file then rename, so readers never observe a
// partially written file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline void put_u32_le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16_le(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_f32_le(std::string& out, float v) {
    static_assert(sizeof(float) == 4);
    char buf[4];
    __builtin_memcpy(buf, &v, 4);
    out.append(buf, 4);
}

struct ByteReader {
    const std::string& s;
    size_t pos = 0;
    std::string what;

    ByteReader(const std::string& bytes, std::string label) : s(bytes), what(std::move(label)) {}

    void need(size_t n) const {
        if (pos + n > s.size()) throw std::runtime_error(what + ": truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[pos + static_cast<size_t>(i)]);
        pos += 4;
        return v;
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(static_cast<unsigned char>(s[pos]) |
                                           (static_cast<unsigned char>(s[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    float f32() {
        need(4);
        uint32_t bits = u32();
        float v;
        __builtin_memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string v = s.substr(pos, n);
        pos += n;
        return v;
    }
};

}  // namespace diffrec
