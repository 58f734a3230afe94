#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "prosum/common.hpp"

namespace prosum {

// RFC 4648 base64 (with padding). Used for binary blobs inside JSON
// containers (checkpoints, explicit matrices).
std::string b64_encode(const void* data, std::size_t n);
std::vector<std::uint8_t> b64_decode(const std::string& text);

// Scalar blobs are little-endian IEEE float32/float64 regardless of the
// in-memory scalar type; float values round-trip bit-exactly.
template <typename T>
std::string encode_f32_blob(const std::vector<T>& v) {
    std::vector<float> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = static_cast<float>(v[i]);
    return b64_encode(f.data(), f.size() * sizeof(float));
}

template <typename T>
std::vector<T> decode_f32_blob(const std::string& text, std::size_t expect_count) {
    auto bytes = b64_decode(text);
    if (bytes.size() != expect_count * sizeof(float))
        throw ParseError("float32 blob: expected " + std::to_string(expect_count) +
                         " scalars, got " + std::to_string(bytes.size()) + " bytes");
    std::vector<float> f(expect_count);
    std::memcpy(f.data(), bytes.data(), bytes.size());
    std::vector<T> out(expect_count);
    for (std::size_t i = 0; i < expect_count; ++i) out[i] = static_cast<T>(f[i]);
    return out;
}

}  // namespace prosum
