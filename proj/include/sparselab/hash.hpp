#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace sparselab {

// FNV-1a, used for content checksums (mask identity, snapshot stability).
struct Fnv1a {
    std::uint64_t state = 0xcbf29ce484222325ull;

    void update(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            state ^= p[i];
            state *= 0x100000001b3ull;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(const std::vector<double>& v) { update(v.data(), v.size() * sizeof(double)); }
    void update(std::uint64_t x) { update(&x, sizeof(x)); }

    std::uint64_t digest() const { return state; }
};

}  // namespace sparselab
