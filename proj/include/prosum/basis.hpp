#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "prosum/dct.hpp"
#include "prosum/fixed_matrix.hpp"
#include "prosum/matrix.hpp"
#include "prosum/rng.hpp"

namespace prosum {

enum class BasisKind {
    gaussian_dense,
    gaussian_rank1,
    dct_truncation,
    permutation_columns,
    diagonal_tuple,
    explicit_,
};

std::string to_string(BasisKind k);
BasisKind basis_kind_from_string(const std::string& s);

// Compact, seed-based recipe for a family of fixed matrices. Materialization
// is a pure function of the descriptor; element k draws from
// substream(seed, k), so enlarging `count` keeps the existing prefix (staged
// training relies on this).
struct BasisDescriptor {
    BasisKind kind = BasisKind::gaussian_dense;
    Index rows = 0;
    Index cols = 0;
    int count = 1;
    std::uint64_t seed = 0;
    // scale <= 0 means the default: 1/sqrt(rows) for gaussian kinds,
    // 1 for diagonal tuples.
    double scale = 0.0;
    // dct_truncation: image geometry (h*w == rows) and m == cols.
    int h = 0, w = 0;
    // diagonal_tuple: diagonals per element.
    int tuple_width = 0;
    // explicit_: matrices carried inline (stored as float32).
    std::vector<MatrixF> explicit_mats;

    double effective_scale() const;
    void validate() const;

    static BasisDescriptor gaussian_dense(Index rows, Index cols, int count, std::uint64_t seed,
                                          double scale = 0.0);
    static BasisDescriptor gaussian_rank1(Index rows, Index cols, int count, std::uint64_t seed,
                                          double scale = 0.0);
    static BasisDescriptor dct_truncation_desc(int h, int w, int m);
    static BasisDescriptor permutation_columns_desc(Index n, Index m, std::uint64_t seed);
    static BasisDescriptor diagonal_tuple(Index n, int count, int tuple_width, std::uint64_t seed,
                                          double scale = 0.0);
    static BasisDescriptor explicit_mats_desc(std::vector<MatrixF> mats);

    nlohmann::json to_json() const;
    static BasisDescriptor from_json(const nlohmann::json& j);
};

// DCT truncation operator: (h*w) x m dense matrix whose columns are the
// DCT-II analysis functions of the first m zigzag-ordered frequencies;
// x^T * result yields the m lowest coefficients of image x.
template <typename T>
FixedMatrix<T> dct_truncation(int h, int w, int m) {
    const Index n = static_cast<Index>(h) * w;
    if (m < 1 || m > n)
        throw InvalidArgument("dct_truncation: m=" + std::to_string(m) + " out of range [1, " +
                              std::to_string(n) + "]");
    const MatrixD d = dct2_basis(h, w);
    const auto zig = zigzag_order(h, w);
    Matrix<T> t(n, m);
    for (int j = 0; j < m; ++j) {
        const Index r = static_cast<Index>(zig[j].first) * w + zig[j].second;
        for (Index i = 0; i < n; ++i) t(i, j) = static_cast<T>(d(r, i));
    }
    return FixedMatrix<T>::dense(std::move(t));
}

// m distinct columns of a random n x n permutation matrix: a seed-determined
// subsampling of m out of n coordinates.
template <typename T>
FixedMatrix<T> permutation_columns(Index n, Index m, std::uint64_t seed) {
    if (m < 1 || m > n)
        throw InvalidArgument("permutation_columns: m=" + std::to_string(m) +
                              " out of range [1, " + std::to_string(n) + "]");
    // Fisher-Yates on 0..n-1, take the first m.
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    SeededRng rng(seed);
    for (Index i = 0; i < n - 1; ++i) {
        const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    perm.resize(static_cast<std::size_t>(m));
    return FixedMatrix<T>::column_selection(std::move(perm), n);
}

// One element of a diagonal_tuple family: `width` diagonals sharing a single
// trainable coefficient.
template <typename T>
struct DiagonalTuple {
    std::vector<std::vector<T>> diagonals;  // width x n
};

template <typename T>
std::vector<T> gaussian_vector(Index n, SeededRng& rng, double scale) {
    std::vector<T> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<T>(scale * rng.normal());
    return v;
}

// Materialize the matrix family of a descriptor. diagonal_tuple descriptors
// do not fit the single-matrix return type; use materialize_diagonal_tuples.
template <typename T>
std::vector<FixedMatrix<T>> materialize_basis(const BasisDescriptor& desc) {
    desc.validate();
    std::vector<FixedMatrix<T>> out;
    out.reserve(static_cast<std::size_t>(desc.count));
    const double scale = desc.effective_scale();
    switch (desc.kind) {
        case BasisKind::gaussian_dense:
            for (int k = 0; k < desc.count; ++k)
                out.push_back(FixedMatrix<T>::dense(
                    seeded_gaussian<T>(desc.rows, desc.cols, substream(desc.seed, k), scale)));
            break;
        case BasisKind::gaussian_rank1:
            for (int k = 0; k < desc.count; ++k) {
                SeededRng rng(substream(desc.seed, k));
                auto u = gaussian_vector<T>(desc.rows, rng, scale);
                auto v = gaussian_vector<T>(desc.cols, rng, scale);
                out.push_back(FixedMatrix<T>::rank1(std::move(u), std::move(v)));
            }
            break;
        case BasisKind::dct_truncation:
            out.push_back(dct_truncation<T>(desc.h, desc.w, static_cast<int>(desc.cols)));
            break;
        case BasisKind::permutation_columns:
            out.push_back(permutation_columns<T>(desc.rows, desc.cols, desc.seed));
            break;
        case BasisKind::explicit_:
            for (const auto& m : desc.explicit_mats)
                out.push_back(FixedMatrix<T>::dense(m.template cast<T>()));
            break;
        case BasisKind::diagonal_tuple:
            throw InvalidDescriptor(
                "materialize_basis: diagonal_tuple families materialize via "
                "materialize_diagonal_tuples");
    }
    return out;
}

template <typename T>
std::vector<DiagonalTuple<T>> materialize_diagonal_tuples(const BasisDescriptor& desc) {
    desc.validate();
    if (desc.kind != BasisKind::diagonal_tuple)
        throw InvalidDescriptor("materialize_diagonal_tuples: descriptor kind is " +
                                to_string(desc.kind));
    const double scale = desc.effective_scale();
    std::vector<DiagonalTuple<T>> out(static_cast<std::size_t>(desc.count));
    for (int k = 0; k < desc.count; ++k) {
        SeededRng rng(substream(desc.seed, k));
        auto& tuple = out[static_cast<std::size_t>(k)];
        tuple.diagonals.reserve(static_cast<std::size_t>(desc.tuple_width));
        for (int c = 0; c < desc.tuple_width; ++c)
            tuple.diagonals.push_back(gaussian_vector<T>(desc.rows, rng, scale));
    }
    return out;
}

}  // namespace prosum
