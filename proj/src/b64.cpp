#include "prosum/b64.hpp"

namespace prosum {

namespace {
constexpr char kTable[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}
}  // namespace

std::string b64_encode(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= n; i += 3) {
        const std::uint32_t v = (p[i] << 16) | (p[i + 1] << 8) | p[i + 2];
        out += kTable[(v >> 18) & 63];
        out += kTable[(v >> 12) & 63];
        out += kTable[(v >> 6) & 63];
        out += kTable[v & 63];
    }
    if (i + 1 == n) {
        const std::uint32_t v = p[i] << 16;
        out += kTable[(v >> 18) & 63];
        out += kTable[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == n) {
        const std::uint32_t v = (p[i] << 16) | (p[i + 1] << 8);
        out += kTable[(v >> 18) & 63];
        out += kTable[(v >> 12) & 63];
        out += kTable[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> b64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw ParseError("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                if (i + 4 != text.size() || j < 2) throw ParseError("base64: stray padding");
                vals[j] = 0;
                ++pad;
            } else {
                if (pad > 0) throw ParseError("base64: data after padding");
                vals[j] = decode_char(c);
                if (vals[j] < 0)
                    throw ParseError("base64: invalid character at offset " + std::to_string(i + j));
            }
        }
        const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out.push_back((v >> 16) & 0xff);
        if (pad < 2) out.push_back((v >> 8) & 0xff);
        if (pad < 1) out.push_back(v & 0xff);
    }
    return out;
}

}  // namespace prosum
