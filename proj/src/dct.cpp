#include "prosum/dct.hpp"

#include <cmath>
#include <numbers>

namespace prosum {

namespace {
double alpha(int k, int n) {
    return k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
}
}  // namespace

MatrixD dct2_basis(int h, int w) {
    if (h < 1 || w < 1)
        throw InvalidArgument("dct2_basis: dimensions must be positive, got " +
                              std::to_string(h) + "x" + std::to_string(w));
    const Index n = static_cast<Index>(h) * w;
    MatrixD d(n, n);
    for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
            const Index r = static_cast<Index>(u) * w + v;
            const double au = alpha(u, h);
            const double av = alpha(v, w);
            for (int y = 0; y < h; ++y) {
                const double cy = std::cos(std::numbers::pi * (2.0 * y + 1.0) * u / (2.0 * h));
                for (int x = 0; x < w; ++x) {
                    const double cx = std::cos(std::numbers::pi * (2.0 * x + 1.0) * v / (2.0 * w));
                    d(r, static_cast<Index>(y) * w + x) = au * av * cy * cx;
                }
            }
        }
    }
    return d;
}

std::vector<std::pair<int, int>> zigzag_order(int h, int w) {
    if (h < 1 || w < 1)
        throw InvalidArgument("zigzag_order: dimensions must be positive, got " +
                              std::to_string(h) + "x" + std::to_string(w));
    std::vector<std::pair<int, int>> order;
    order.reserve(static_cast<std::size_t>(h) * w);
    for (int d = 0; d <= h + w - 2; ++d) {
        const int r_lo = std::max(0, d - w + 1);
        const int r_hi = std::min(h - 1, d);
        if (d % 2 == 0) {
            for (int r = r_hi; r >= r_lo; --r) order.emplace_back(r, d - r);
        } else {
            for (int r = r_lo; r <= r_hi; ++r) order.emplace_back(r, d - r);
        }
    }
    return order;
}

}  // namespace prosum
