#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "prosum/basis.hpp"
#include "prosum/dct.hpp"
#include "prosum/fixed_matrix.hpp"
#include "prosum/matrix.hpp"
#include "prosum/rng.hpp"

using namespace prosum;

TEST_CASE("seeded_gaussian is deterministic") {
    auto a = seeded_gaussian<float>(2, 2, 42, 1.0);
    auto b = seeded_gaussian<float>(2, 2, 42, 1.0);
    for (Index i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);

    auto c = seeded_gaussian<float>(2, 2, 43, 1.0);
    CHECK(max_abs_diff(a, c) > 0.0f);
}

TEST_CASE("seeded_gaussian sample moments") {
    auto m = seeded_gaussian<double>(1000, 1000, 7, 1.0);
    double mean = 0;
    for (Index i = 0; i < m.size(); ++i) mean += m.data()[i];
    mean /= static_cast<double>(m.size());
    double var = 0;
    for (Index i = 0; i < m.size(); ++i) {
        const double d = m.data()[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(m.size() - 1);
    CHECK(mean > -0.01);
    CHECK(mean < 0.01);
    CHECK(var > 0.99);
    CHECK(var < 1.01);
    CHECK(m.all_finite());
}

TEST_CASE("seeded_gaussian scale is a pure multiplier") {
    auto one = seeded_gaussian<float>(3, 3, 11, 1.0);
    auto two = seeded_gaussian<float>(3, 3, 11, 2.0);
    for (Index i = 0; i < one.size(); ++i) CHECK(two.data()[i] == 2.0f * one.data()[i]);
}

TEST_CASE("seeded_gaussian rejects bad arguments") {
    CHECK_THROWS_AS(seeded_gaussian<float>(0, 3, 1, 1.0), InvalidArgument);
    CHECK_THROWS_AS(seeded_gaussian<float>(3, 0, 1, 1.0), InvalidArgument);
    CHECK_THROWS_AS(seeded_gaussian<float>(3, 3, 1, 0.0), InvalidArgument);
}

TEST_CASE("substream derivation is stable and distinct") {
    CHECK(substream(1, 0) == substream(1, 0));
    CHECK(substream(1, 0) != substream(1, 1));
    CHECK(substream(1, 0) != substream(2, 0));
    CHECK(substream(5, 1, 2) != substream(5, 2, 1));
}

TEST_CASE("dct2_basis 1x1 is identity") {
    auto d = dct2_basis(1, 1);
    CHECK(d.rows() == 1);
    CHECK(d(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("dct2_basis rows are orthonormal") {
    for (auto [h, w] : {std::pair{2, 2}, {1, 5}, {3, 4}, {8, 8}, {28, 28}}) {
        auto d = dct2_basis(h, w);
        auto gram = matmul_nt(d, d);
        auto eye = MatrixD::identity(d.rows());
        CHECK(max_abs_diff(gram, eye) <= 1e-10);
    }
}

TEST_CASE("constant image has DC-only spectrum") {
    const int h = 4, w = 3;
    auto d = dct2_basis(h, w);
    MatrixD img(static_cast<Index>(h) * w, 1, 2.5);
    auto coeffs = matmul(d, img);
    CHECK(coeffs(0, 0) == doctest::Approx(2.5 * std::sqrt(static_cast<double>(h) * w)).epsilon(1e-12));
    for (Index i = 1; i < coeffs.rows(); ++i) CHECK(std::abs(coeffs(i, 0)) <= 1e-12);
}

TEST_CASE("zigzag_order single row") {
    auto z = zigzag_order(1, 4);
    REQUIRE(z.size() == 4);
    for (int j = 0; j < 4; ++j) {
        CHECK(z[static_cast<std::size_t>(j)].first == 0);
        CHECK(z[static_cast<std::size_t>(j)].second == j);
    }
}

TEST_CASE("zigzag_order 2x2") {
    auto z = zigzag_order(2, 2);
    const std::vector<std::pair<int, int>> expect{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    CHECK(z == expect);
}

TEST_CASE("zigzag_order 8x8 JPEG prefix") {
    auto z = zigzag_order(8, 8);
    REQUIRE(z.size() == 64);
    const std::vector<std::pair<int, int>> expect{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1}};
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(z[i] == expect[i]);
    // must be a permutation
    std::vector<int> seen(64, 0);
    for (auto [r, c] : z) ++seen[static_cast<std::size_t>(r * 8 + c)];
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("apply_linear: identity column selection") {
    auto x = seeded_gaussian<float>(4, 3, 1, 1.0);
    auto id = FixedMatrix<float>::column_selection({0, 1, 2, 3}, 4);
    CHECK(max_abs_diff(apply_linear(id, x), x) == 0.0f);
}

TEST_CASE("apply_linear: rank1 matches densified oracle") {
    SeededRng rng(3);
    std::vector<float> u(5), v(4);
    for (auto& e : u) e = static_cast<float>(rng.normal());
    for (auto& e : v) e = static_cast<float>(rng.normal());
    auto r1 = FixedMatrix<float>::rank1(u, v);
    auto x = seeded_gaussian<float>(4, 6, 2, 1.0);
    auto direct = apply_linear(r1, x);
    auto oracle = matmul(r1.densify(), x);
    CHECK(max_abs_diff(direct, oracle) <= 1e-6f);
}

TEST_CASE("apply_linear: unit diagonal is identity") {
    auto x = seeded_gaussian<float>(4, 3, 9, 1.0);
    auto d = FixedMatrix<float>::diagonal(std::vector<float>(4, 1.0f));
    CHECK(max_abs_diff(apply_linear(d, x), x) == 0.0f);
}

TEST_CASE("apply_linear: every structured form agrees with densify") {
    auto x64 = seeded_gaussian<double>(5, 7, 21, 1.0);
    std::vector<FixedMatrix<double>> forms;
    forms.push_back(FixedMatrix<double>::dense(seeded_gaussian<double>(6, 5, 22, 1.0)));
    {
        SeededRng rng(23);
        forms.push_back(FixedMatrix<double>::rank1(gaussian_vector<double>(6, rng, 1.0),
                                                   gaussian_vector<double>(5, rng, 1.0)));
    }
    {
        SeededRng rng(24);
        forms.push_back(FixedMatrix<double>::diagonal(gaussian_vector<double>(5, rng, 1.0)));
    }
    forms.push_back(FixedMatrix<double>::column_selection({4, 0, 2, 2, 1}, 6));
    for (const auto& f : forms) {
        if (f.cols() == x64.rows()) {
            CHECK(max_abs_diff(f.apply(x64), matmul(f.densify(), x64)) <= 1e-12);
        }
        // transpose application against the dense oracle
        auto xt = seeded_gaussian<double>(f.rows(), 3, 31, 1.0);
        CHECK(max_abs_diff(f.apply_t(xt), matmul(transpose(f.densify()), xt)) <= 1e-12);
    }
}

TEST_CASE("apply_linear names both shapes on mismatch") {
    auto x = seeded_gaussian<float>(3, 2, 1, 1.0);
    auto m = FixedMatrix<float>::dense(seeded_gaussian<float>(2, 4, 1, 1.0));
    CHECK_THROWS_WITH_AS(apply_linear(m, x), doctest::Contains("2x4"), ShapeError);
}

TEST_CASE("column selection scatters rows; transpose gathers") {
    // P = columns {2, 0} of I_3 -> P is 3x2
    auto p = FixedMatrix<float>::column_selection({2, 0}, 3);
    MatrixF x(2, 1, std::vector<float>{5.f, 7.f});
    auto y = p.apply(x);
    CHECK(y(0, 0) == 7.f);
    CHECK(y(1, 0) == 0.f);
    CHECK(y(2, 0) == 5.f);
    MatrixF z(3, 1, std::vector<float>{1.f, 2.f, 3.f});
    auto g = p.apply_t(z);  // gather entries 2 and 0
    CHECK(g(0, 0) == 3.f);
    CHECK(g(1, 0) == 1.f);
}
