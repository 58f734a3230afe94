#pragma once

#include <utility>
#include <vector>

#include "prosum/matrix.hpp"

namespace prosum {

// Full orthonormal separable 2-D DCT-II analysis operator for h x w images,
// as an (h*w) x (h*w) matrix D with D*D^T = I. Row r = u*w + v holds the
// basis function for frequency (u, v); column c = y*w + x indexes pixels.
// First row per dimension scaled by sqrt(1/n), others by sqrt(2/n).
MatrixD dct2_basis(int h, int w);

// All (row, col) frequency pairs of an h x w grid in JPEG zigzag order,
// starting at (0,0). Low frequencies first.
std::vector<std::pair<int, int>> zigzag_order(int h, int w);

}  // namespace prosum
