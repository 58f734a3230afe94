#pragma once

#include <variant>
#include <vector>

#include "prosum/matrix.hpp"

namespace prosum {

// Non-trainable linear operator in one of four structured representations.
// Shapes: dense (r x c); rank1 u (r), v (c) meaning u*v^T; diagonal d (n),
// square; column_selection = the chosen columns of the n x n identity,
// shape n x m.
template <typename T>
class FixedMatrix {
  public:
    struct Dense {
        Matrix<T> m;
    };
    struct Rank1 {
        std::vector<T> u, v;
    };
    struct Diagonal {
        std::vector<T> d;
    };
    struct ColumnSelection {
        std::vector<Index> cols;
        Index n;
    };

    static FixedMatrix dense(Matrix<T> m) {
        FixedMatrix f;
        f.rows_ = m.rows();
        f.cols_ = m.cols();
        f.rep_ = Dense{std::move(m)};
        return f;
    }
    static FixedMatrix rank1(std::vector<T> u, std::vector<T> v) {
        if (u.empty() || v.empty()) throw InvalidArgument("rank1: empty factor vector");
        FixedMatrix f;
        f.rows_ = static_cast<Index>(u.size());
        f.cols_ = static_cast<Index>(v.size());
        f.rep_ = Rank1{std::move(u), std::move(v)};
        return f;
    }
    static FixedMatrix diagonal(std::vector<T> d) {
        if (d.empty()) throw InvalidArgument("diagonal: empty diagonal");
        FixedMatrix f;
        f.rows_ = f.cols_ = static_cast<Index>(d.size());
        f.rep_ = Diagonal{std::move(d)};
        return f;
    }
    static FixedMatrix column_selection(std::vector<Index> cols, Index n) {
        if (cols.empty()) throw InvalidArgument("column_selection: empty index list");
        for (Index c : cols)
            if (c < 0 || c >= n)
                throw InvalidArgument("column_selection: index " + std::to_string(c) +
                                      " out of range for n=" + std::to_string(n));
        FixedMatrix f;
        f.rows_ = n;
        f.cols_ = static_cast<Index>(cols.size());
        f.rep_ = ColumnSelection{std::move(cols), n};
        return f;
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }

    bool is_dense() const { return std::holds_alternative<Dense>(rep_); }
    bool is_rank1() const { return std::holds_alternative<Rank1>(rep_); }
    bool is_diagonal() const { return std::holds_alternative<Diagonal>(rep_); }
    bool is_column_selection() const { return std::holds_alternative<ColumnSelection>(rep_); }

    const Dense& as_dense() const { return std::get<Dense>(rep_); }
    const Rank1& as_rank1() const { return std::get<Rank1>(rep_); }
    const Diagonal& as_diagonal() const { return std::get<Diagonal>(rep_); }
    const ColumnSelection& as_column_selection() const { return std::get<ColumnSelection>(rep_); }

    // Scalars held at rest; rank1 stays (u, v), never r*c.
    Index stored_scalars() const {
        if (is_dense()) return rows_ * cols_;
        if (is_rank1()) return rows_ + cols_;
        if (is_diagonal()) return rows_;
        return static_cast<Index>(as_column_selection().cols.size());
    }

    Matrix<T> densify() const {
        if (is_dense()) return as_dense().m;
        Matrix<T> m(rows_, cols_, T{0});
        if (is_rank1()) {
            const auto& r = as_rank1();
            for (Index i = 0; i < rows_; ++i)
                for (Index j = 0; j < cols_; ++j) m(i, j) = r.u[i] * r.v[j];
        } else if (is_diagonal()) {
            const auto& d = as_diagonal().d;
            for (Index i = 0; i < rows_; ++i) m(i, i) = d[i];
        } else {
            const auto& cs = as_column_selection();
            for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j) m(cs.cols[j], j) = T{1};
        }
        return m;
    }

    // this * X. For column_selection this scatters the rows of X into the
    // selected positions (the transpose direction is the pixel gather).
    Matrix<T> apply(const Matrix<T>& x) const {
        if (cols_ != x.rows())
            throw ShapeError("FixedMatrix::apply: " + std::to_string(rows_) + "x" +
                             std::to_string(cols_) + " applied to " + x.shape_str());
        if (is_dense()) return matmul(as_dense().m, x);
        if (is_rank1()) {
            const auto& r = as_rank1();
            Matrix<T> out(rows_, x.cols());
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> u(r.u.data(), rows_);
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> v(r.v.data(), cols_);
            out.map().noalias() = u * (v.transpose() * x.map());
            return out;
        }
        if (is_diagonal()) {
            const auto& d = as_diagonal().d;
            Matrix<T> out(rows_, x.cols());
            for (Index i = 0; i < rows_; ++i)
                for (Index j = 0; j < x.cols(); ++j) out(i, j) = d[i] * x(i, j);
            return out;
        }
        const auto& cs = as_column_selection();
        Matrix<T> out(rows_, x.cols(), T{0});
        // accumulate: index lists may repeat a column
        for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
            for (Index b = 0; b < x.cols(); ++b) out(cs.cols[j], b) += x(j, b);
        return out;
    }

    // this^T * X. For column_selection this is a gather of the selected rows.
    Matrix<T> apply_t(const Matrix<T>& x) const {
        if (rows_ != x.rows())
            throw ShapeError("FixedMatrix::apply_t: " + std::to_string(cols_) + "x" +
                             std::to_string(rows_) + " (transposed) applied to " + x.shape_str());
        if (is_dense()) return matmul_tn(as_dense().m, x);
        if (is_rank1()) {
            const auto& r = as_rank1();
            Matrix<T> out(cols_, x.cols());
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> u(r.u.data(), rows_);
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> v(r.v.data(), cols_);
            out.map().noalias() = v * (u.transpose() * x.map());
            return out;
        }
        if (is_diagonal()) return apply(x);  // symmetric
        const auto& cs = as_column_selection();
        Matrix<T> out(cols_, x.cols());
        for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
            for (Index b = 0; b < x.cols(); ++b) out(j, b) = x(cs.cols[j], b);
        return out;
    }

    template <typename U>
    FixedMatrix<U> cast() const {
        if (is_dense()) return FixedMatrix<U>::dense(as_dense().m.template cast<U>());
        auto cast_vec = [](const std::vector<T>& v) {
            std::vector<U> out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<U>(v[i]);
            return out;
        };
        if (is_rank1()) return FixedMatrix<U>::rank1(cast_vec(as_rank1().u), cast_vec(as_rank1().v));
        if (is_diagonal()) return FixedMatrix<U>::diagonal(cast_vec(as_diagonal().d));
        return FixedMatrix<U>::column_selection(as_column_selection().cols, as_column_selection().n);
    }

  private:
    FixedMatrix() = default;
    Index rows_ = 0, cols_ = 0;
    std::variant<Dense, Rank1, Diagonal, ColumnSelection> rep_;
};

// Structured application with the dense-and-multiply contract; the oracle
// tests check each representation against densify().
template <typename T>
Matrix<T> apply_linear(const FixedMatrix<T>& m, const Matrix<T>& x) {
    return m.apply(x);
}

}  // namespace prosum
