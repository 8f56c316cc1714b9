#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace gpsgen {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("hash_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace gpsgen
