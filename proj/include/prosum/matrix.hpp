#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "prosum/common.hpp"
#include "prosum/rng.hpp"

namespace prosum {

// Dense row-major matrix of real scalars. float carries the training path,
// double the oracle/finite-difference path.
template <typename T>
class Matrix {
  public:
    using Scalar = T;
    using EigenType = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<EigenType>;
    using ConstMap = Eigen::Map<const EigenType>;

    Matrix() = default;
    Matrix(Index rows, Index cols) : rows_(rows), cols_(cols), data_(check_dims(rows, cols)) {}
    Matrix(Index rows, Index cols, T fill)
        : rows_(rows), cols_(cols), data_(check_dims(rows, cols), fill) {}
    Matrix(Index rows, Index cols, std::vector<T> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (static_cast<std::size_t>(check_dims(rows, cols)) != data_.size())
            throw ShapeError("Matrix: element count does not match " + shape_str());
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index size() const { return rows_ * cols_; }
    bool empty() const { return data_.empty(); }

    T& operator()(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
    T operator()(Index r, Index c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    Map map() { return Map(data_.data(), rows_, cols_); }
    ConstMap map() const { return ConstMap(data_.data(), rows_, cols_); }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out.storage()[i] = static_cast<U>(data_[i]);
        return out;
    }

    static Matrix identity(Index n) {
        Matrix m(n, n, T{0});
        for (Index i = 0; i < n; ++i) m(i, i) = T{1};
        return m;
    }

  private:
    static Index check_dims(Index rows, Index cols) {
        if (rows < 1 || cols < 1)
            throw InvalidArgument("Matrix dimensions must be positive, got " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
        return rows * cols;
    }

    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

namespace detail {
inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}
}  // namespace detail

// C = A * B
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.cols() == b.rows(),
                    "matmul: inner dimensions disagree: " + a.shape_str() + " * " + b.shape_str());
    Matrix<T> c(a.rows(), b.cols());
    c.map().noalias() = a.map() * b.map();
    return c;
}

// C = A^T * B
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.rows() == b.rows(),
                    "matmul_tn: dimensions disagree: " + a.shape_str() + "^T * " + b.shape_str());
    Matrix<T> c(a.cols(), b.cols());
    c.map().noalias() = a.map().transpose() * b.map();
    return c;
}

// C = A * B^T
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.cols() == b.cols(),
                    "matmul_nt: dimensions disagree: " + a.shape_str() + " * " + b.shape_str() + "^T");
    Matrix<T> c(a.rows(), b.rows());
    c.map().noalias() = a.map() * b.map().transpose();
    return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> t(a.cols(), a.rows());
    t.map() = a.map().transpose();
    return t;
}

// A += s * B
template <typename T>
void add_scaled(Matrix<T>& a, T s, const Matrix<T>& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                    "add_scaled: shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    a.map() += s * b.map();
}

template <typename T>
T frobenius_norm(const Matrix<T>& a) {
    return static_cast<T>(a.map().norm());
}

template <typename T>
T max_abs(const Matrix<T>& a) {
    return a.size() == 0 ? T{0} : static_cast<T>(a.map().cwiseAbs().maxCoeff());
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                    "max_abs_diff: shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    return static_cast<T>((a.map() - b.map()).cwiseAbs().maxCoeff());
}

template <typename T>
T dot(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                    "dot: shapes disagree: " + a.shape_str() + " vs " + b.shape_str());
    return static_cast<T>(a.map().cwiseProduct(b.map()).sum());
}

// Entries i.i.d. Normal(0, scale^2), filled row-major from SeededRng(seed).
// Pure function of (rows, cols, seed, scale).
template <typename T>
Matrix<T> seeded_gaussian(Index rows, Index cols, std::uint64_t seed, double scale) {
    if (rows < 1 || cols < 1)
        throw InvalidArgument("seeded_gaussian: dimensions must be positive, got " +
                              std::to_string(rows) + "x" + std::to_string(cols));
    if (!(scale > 0.0)) throw InvalidArgument("seeded_gaussian: scale must be > 0");
    Matrix<T> m(rows, cols);
    SeededRng rng(seed);
    for (T& v : m.storage()) v = static_cast<T>(scale * rng.normal());
    return m;
}

}  // namespace prosum
