#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "prosum/basis.hpp"
#include "prosum/fixed_matrix.hpp"
#include "prosum/matrix.hpp"

namespace prosum {

namespace detail {

// <densify(a), densify(b)> without densifying structured pairs.
template <typename T>
double structured_dot(const FixedMatrix<T>& a, const FixedMatrix<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("structured_dot: shapes disagree");
    // Normalize order so the dense/rank1-heavy cases are enumerated once.
    if (!a.is_dense() && b.is_dense()) return structured_dot(b, a);
    if (a.is_dense()) {
        const auto& m = a.as_dense().m;
        if (b.is_dense()) {
            double s = 0;
            const auto& n = b.as_dense().m;
            for (Index i = 0; i < m.size(); ++i)
                s += static_cast<double>(m.data()[i]) * static_cast<double>(n.data()[i]);
            return s;
        }
        if (b.is_rank1()) {
            const auto& r = b.as_rank1();
            double s = 0;
            for (Index i = 0; i < m.rows(); ++i) {
                double row = 0;
                for (Index j = 0; j < m.cols(); ++j)
                    row += static_cast<double>(m(i, j)) * static_cast<double>(r.v[j]);
                s += static_cast<double>(r.u[i]) * row;
            }
            return s;
        }
        if (b.is_diagonal()) {
            const auto& d = b.as_diagonal().d;
            double s = 0;
            for (Index i = 0; i < m.rows(); ++i) s += static_cast<double>(m(i, i)) * d[i];
            return s;
        }
        const auto& cs = b.as_column_selection();
        double s = 0;
        for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
            s += static_cast<double>(m(cs.cols[j], j));
        return s;
    }
    if (!a.is_rank1() && b.is_rank1()) return structured_dot(b, a);
    if (a.is_rank1()) {
        const auto& r = a.as_rank1();
        if (b.is_rank1()) {
            const auto& q = b.as_rank1();
            double uu = 0, vv = 0;
            for (Index i = 0; i < a.rows(); ++i)
                uu += static_cast<double>(r.u[i]) * static_cast<double>(q.u[i]);
            for (Index j = 0; j < a.cols(); ++j)
                vv += static_cast<double>(r.v[j]) * static_cast<double>(q.v[j]);
            return uu * vv;
        }
        if (b.is_diagonal()) {
            const auto& d = b.as_diagonal().d;
            double s = 0;
            for (Index i = 0; i < a.rows(); ++i)
                s += static_cast<double>(r.u[i]) * static_cast<double>(r.v[i]) * d[i];
            return s;
        }
        const auto& cs = b.as_column_selection();
        double s = 0;
        for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
            s += static_cast<double>(r.u[cs.cols[j]]) * static_cast<double>(r.v[j]);
        return s;
    }
    if (!a.is_diagonal() && b.is_diagonal()) return structured_dot(b, a);
    if (a.is_diagonal()) {
        const auto& d = a.as_diagonal().d;
        if (b.is_diagonal()) {
            const auto& e = b.as_diagonal().d;
            double s = 0;
            for (std::size_t i = 0; i < d.size(); ++i)
                s += static_cast<double>(d[i]) * static_cast<double>(e[i]);
            return s;
        }
        const auto& cs = b.as_column_selection();
        double s = 0;
        for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
            if (cs.cols[j] == j) s += static_cast<double>(d[j]);
        return s;
    }
    const auto& c1 = a.as_column_selection();
    const auto& c2 = b.as_column_selection();
    double s = 0;
    for (std::size_t j = 0; j < c1.cols.size(); ++j) s += (c1.cols[j] == c2.cols[j]) ? 1.0 : 0.0;
    return s;
}

// <densify(a), t> for a dense target t.
template <typename T>
double structured_dot_dense(const FixedMatrix<T>& a, const Matrix<T>& t) {
    return structured_dot(a, FixedMatrix<T>::dense(t));
}

}  // namespace detail

// One trainable term S = sum_k coeffs[k] * basis[k]; all basis elements share
// one shape. Behaves like an identity-activation linear layer in reverse
// mode. Structure caches: the non-rank1 part accumulates into a dense core
// (refreshed when coefficients change); rank-1 elements stay factored as
// column stacks so S and S^T apply without densifying them.
template <typename T>
class SumFactor {
  public:
    SumFactor(std::vector<FixedMatrix<T>> basis, std::vector<T> coeffs)
        : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
        if (basis_.empty()) throw InvalidArgument("SumFactor: empty basis");
        if (basis_.size() != coeffs_.size())
            throw ShapeError("SumFactor: " + std::to_string(coeffs_.size()) + " coeffs for " +
                             std::to_string(basis_.size()) + " basis matrices");
        rows_ = basis_.front().rows();
        cols_ = basis_.front().cols();
        for (const auto& m : basis_)
            if (m.rows() != rows_ || m.cols() != cols_)
                throw ShapeError("SumFactor: basis shapes disagree: " + std::to_string(rows_) +
                                 "x" + std::to_string(cols_) + " vs " + std::to_string(m.rows()) +
                                 "x" + std::to_string(m.cols()));
        for (std::size_t k = 0; k < basis_.size(); ++k)
            (basis_[k].is_rank1() ? rank1_idx_ : other_idx_).push_back(k);
        if (!rank1_idx_.empty()) {
            u_stack_ = Matrix<T>(rows_, static_cast<Index>(rank1_idx_.size()));
            v_stack_ = Matrix<T>(cols_, static_cast<Index>(rank1_idx_.size()));
            for (std::size_t c = 0; c < rank1_idx_.size(); ++c) {
                const auto& r = basis_[rank1_idx_[c]].as_rank1();
                for (Index i = 0; i < rows_; ++i) (*u_stack_)(i, static_cast<Index>(c)) = r.u[i];
                for (Index j = 0; j < cols_; ++j) (*v_stack_)(j, static_cast<Index>(c)) = r.v[j];
            }
        }
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index size() const { return static_cast<Index>(basis_.size()); }
    const std::vector<FixedMatrix<T>>& basis() const { return basis_; }
    const std::vector<T>& coeffs() const { return coeffs_; }
    std::vector<T>& coeffs_mut() {
        dirty_ = true;
        return coeffs_;
    }
    void mark_dirty() { dirty_ = true; }

    // S * X
    Matrix<T> apply(const Matrix<T>& x) const {
        ensure_core();
        Matrix<T> out(rows_, x.cols(), T{0});
        if (core_) out.map().noalias() = core_->map() * x.map();
        apply_rank1(x, out, false);
        return out;
    }

    // S^T * X
    Matrix<T> apply_t(const Matrix<T>& x) const {
        ensure_core();
        Matrix<T> out(cols_, x.cols(), T{0});
        if (core_) out.map().noalias() = core_->map().transpose() * x.map();
        apply_rank1(x, out, true);
        return out;
    }

    Matrix<T> materialize() const {
        ensure_core();
        Matrix<T> m = core_ ? *core_ : Matrix<T>(rows_, cols_, T{0});
        if (u_stack_) {
            for (std::size_t c = 0; c < rank1_idx_.size(); ++c) {
                const auto& r = basis_[rank1_idx_[c]].as_rank1();
                const T a = coeffs_[rank1_idx_[c]];
                if (a == T{0}) continue;
                for (Index i = 0; i < rows_; ++i) {
                    const T ua = a * r.u[i];
                    for (Index j = 0; j < cols_; ++j) m(i, j) += ua * r.v[j];
                }
            }
        }
        return m;
    }

    // d loss / d coeffs for upstream gradient `delta` (rows x B) given the
    // input this factor saw (cols x B): grad_k = <delta * x^T, basis_k>.
    std::vector<T> grad_coeffs(const Matrix<T>& x, const Matrix<T>& delta) const {
        std::vector<T> g(basis_.size(), T{0});
        // Rank-1 elements: <delta x^T, u v^T> = (u^T delta) . (v^T x) summed
        // over the batch; two thin GEMMs cover every element at once.
        if (u_stack_) {
            Matrix<T> p = matmul_tn(*u_stack_, delta);  // K1 x B
            Matrix<T> q = matmul_tn(*v_stack_, x);      // K1 x B
            for (std::size_t c = 0; c < rank1_idx_.size(); ++c) {
                T s{0};
                for (Index b = 0; b < p.cols(); ++b)
                    s += p(static_cast<Index>(c), b) * q(static_cast<Index>(c), b);
                g[rank1_idx_[c]] = s;
            }
        }
        if (!other_idx_.empty()) {
            // Shared precomputations: the dense cross-covariance for dense
            // elements, rowwise delta.x dots for diagonal elements.
            std::optional<Matrix<T>> cross;
            std::optional<std::vector<T>> rowdots;
            for (std::size_t k : other_idx_) {
                const auto& m = basis_[k];
                if (m.is_dense()) {
                    if (!cross) cross = matmul_nt(delta, x);  // rows x cols
                    g[k] = dot(*cross, m.as_dense().m);
                } else if (m.is_diagonal()) {
                    if (!rowdots) {
                        rowdots = std::vector<T>(static_cast<std::size_t>(rows_), T{0});
                        for (Index i = 0; i < rows_; ++i) {
                            T s{0};
                            for (Index b = 0; b < delta.cols(); ++b) s += delta(i, b) * x(i, b);
                            (*rowdots)[static_cast<std::size_t>(i)] = s;
                        }
                    }
                    const auto& d = m.as_diagonal().d;
                    T s{0};
                    for (Index i = 0; i < rows_; ++i) s += d[i] * (*rowdots)[static_cast<std::size_t>(i)];
                    g[k] = s;
                } else {  // column_selection: sum of delta[idx_j, b] * x[j, b]
                    const auto& cs = m.as_column_selection();
                    T s{0};
                    for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
                        for (Index b = 0; b < delta.cols(); ++b) s += delta(cs.cols[j], b) * x(j, b);
                    g[k] = s;
                }
            }
        }
        return g;
    }

  private:
    void ensure_core() const {
        if (!dirty_) return;
        if (!other_idx_.empty()) {
            if (!core_) core_ = Matrix<T>(rows_, cols_);
            core_->fill(T{0});
            for (std::size_t k : other_idx_) {
                const T a = coeffs_[k];
                if (a == T{0}) continue;
                const auto& m = basis_[k];
                if (m.is_dense()) {
                    add_scaled(*core_, a, m.as_dense().m);
                } else if (m.is_diagonal()) {
                    const auto& d = m.as_diagonal().d;
                    for (Index i = 0; i < rows_; ++i) (*core_)(i, i) += a * d[i];
                } else {
                    const auto& cs = m.as_column_selection();
                    for (Index j = 0; j < static_cast<Index>(cs.cols.size()); ++j)
                        (*core_)(cs.cols[j], j) += a;
                }
            }
        }
        dirty_ = false;
    }

    void apply_rank1(const Matrix<T>& x, Matrix<T>& out, bool transposed) const {
        if (!u_stack_) return;
        const Matrix<T>& in_stack = transposed ? *u_stack_ : *v_stack_;
        const Matrix<T>& out_stack = transposed ? *v_stack_ : *u_stack_;
        Matrix<T> t = matmul_tn(in_stack, x);  // K1 x B
        for (std::size_t c = 0; c < rank1_idx_.size(); ++c) {
            const T a = coeffs_[rank1_idx_[c]];
            for (Index b = 0; b < t.cols(); ++b) t(static_cast<Index>(c), b) *= a;
        }
        out.map().noalias() += out_stack.map() * t.map();
    }

    std::vector<FixedMatrix<T>> basis_;
    std::vector<T> coeffs_;
    Index rows_ = 0, cols_ = 0;
    std::vector<std::size_t> rank1_idx_, other_idx_;
    std::optional<Matrix<T>> u_stack_, v_stack_;  // rows x K1, cols x K1
    mutable std::optional<Matrix<T>> core_;
    mutable bool dirty_ = true;
};

// Trainable product of sums W = prod_j S_j (factor 0 leftmost), with an
// optional trainable bias. Inputs go through factors right to left, each sum
// acting as an identity-activation layer.
template <typename T>
class ProductOfSums {
  public:
    struct ForwardCache {
        // acts[p] is the input X; acts[j] = S_j * acts[j+1]; acts[0] is the
        // pre-bias output.
        std::vector<Matrix<T>> acts;
    };
    struct Grads {
        std::vector<std::vector<T>> coeff_grads;  // per factor
        std::vector<T> bias_grad;                 // empty if no bias
        Matrix<T> input_grad;
    };

    explicit ProductOfSums(std::vector<SumFactor<T>> factors,
                           std::optional<std::vector<T>> bias = std::nullopt)
        : factors_(std::move(factors)), bias_(std::move(bias)) {
        if (factors_.empty()) throw InvalidArgument("ProductOfSums: no factors");
        for (std::size_t j = 0; j + 1 < factors_.size(); ++j)
            if (factors_[j].cols() != factors_[j + 1].rows())
                throw ShapeError("ProductOfSums: factor " + std::to_string(j) + " is " +
                                 std::to_string(factors_[j].rows()) + "x" +
                                 std::to_string(factors_[j].cols()) + " but factor " +
                                 std::to_string(j + 1) + " is " +
                                 std::to_string(factors_[j + 1].rows()) + "x" +
                                 std::to_string(factors_[j + 1].cols()));
        if (bias_ && static_cast<Index>(bias_->size()) != rows())
            throw ShapeError("ProductOfSums: bias length " + std::to_string(bias_->size()) +
                             " != output rows " + std::to_string(rows()));
    }

    Index rows() const { return factors_.front().rows(); }
    Index cols() const { return factors_.back().cols(); }
    std::size_t factor_count() const { return factors_.size(); }
    std::vector<SumFactor<T>>& factors() { return factors_; }
    const std::vector<SumFactor<T>>& factors() const { return factors_; }
    std::optional<std::vector<T>>& bias() { return bias_; }
    const std::optional<std::vector<T>>& bias() const { return bias_; }

    Index param_count() const {
        Index n = 0;
        for (const auto& f : factors_) n += f.size();
        if (bias_) n += static_cast<Index>(bias_->size());
        return n;
    }

    Matrix<T> materialize() const {
        Matrix<T> m = factors_.front().materialize();
        for (std::size_t j = 1; j < factors_.size(); ++j)
            m = matmul(m, factors_[j].materialize());
        return m;
    }

    Matrix<T> apply(const Matrix<T>& x, ForwardCache* cache = nullptr) const {
        if (x.rows() != cols())
            throw ShapeError("ProductOfSums::apply: input " + x.shape_str() +
                             " does not match factor columns " + std::to_string(cols()));
        ForwardCache local;
        ForwardCache& c = cache ? *cache : local;
        c.acts.assign(factors_.size() + 1, Matrix<T>());
        c.acts[factors_.size()] = x;
        for (std::size_t j = factors_.size(); j-- > 0;)
            c.acts[j] = factors_[j].apply(c.acts[j + 1]);
        Matrix<T> out = c.acts[0];
        if (bias_) {
            for (Index i = 0; i < out.rows(); ++i) {
                const T b = (*bias_)[static_cast<std::size_t>(i)];
                for (Index col = 0; col < out.cols(); ++col) out(i, col) += b;
            }
        }
        return out;
    }

    // Reverse-mode gradients for every coefficient and the bias, plus the
    // gradient with respect to the input.
    Grads grad(const ForwardCache& cache, const Matrix<T>& upstream) const {
        if (cache.acts.size() != factors_.size() + 1)
            throw ShapeError("ProductOfSums::grad: stale forward cache");
        if (upstream.rows() != rows() || upstream.cols() != cache.acts[0].cols())
            throw ShapeError("ProductOfSums::grad: upstream " + upstream.shape_str() +
                             " does not match output " + std::to_string(rows()) + "x" +
                             std::to_string(cache.acts[0].cols()));
        Grads g;
        g.coeff_grads.resize(factors_.size());
        if (bias_) {
            g.bias_grad.assign(bias_->size(), T{0});
            for (Index i = 0; i < upstream.rows(); ++i) {
                T s{0};
                for (Index b = 0; b < upstream.cols(); ++b) s += upstream(i, b);
                g.bias_grad[static_cast<std::size_t>(i)] = s;
            }
        }
        Matrix<T> delta = upstream;
        for (std::size_t j = 0; j < factors_.size(); ++j) {
            g.coeff_grads[j] = factors_[j].grad_coeffs(cache.acts[j + 1], delta);
            delta = factors_[j].apply_t(delta);
        }
        g.input_grad = std::move(delta);
        return g;
    }

    void mark_dirty() {
        for (auto& f : factors_) f.mark_dirty();
    }

  private:
    std::vector<SumFactor<T>> factors_;
    std::optional<std::vector<T>> bias_;
};

// Least-squares refit of each factor's coefficients onto a new basis family:
// minimizes ||S_j_old - sum_k a'_k M'_k||_F per factor via the normal
// equations with a complete orthogonal decomposition (minimum-norm solution
// when the design is rank deficient).
template <typename T>
struct RefitDiagnostics {
    std::vector<double> residuals;   // per factor, Frobenius
    std::vector<bool> rank_deficient;
};

template <typename T>
struct RefitResult {
    ProductOfSums<T> refitted;
    RefitDiagnostics<T> diagnostics;
};

template <typename T>
std::pair<std::vector<double>, std::pair<double, bool>> refit_factor_coeffs(
    const Matrix<T>& target, const std::vector<FixedMatrix<T>>& new_basis) {
    const std::size_t s = new_basis.size();
    for (const auto& m : new_basis)
        if (m.rows() != target.rows() || m.cols() != target.cols())
            throw ShapeError("refit: new basis shape " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + " != factor shape " + target.shape_str());
    Eigen::MatrixXd gram(s, s);
    Eigen::VectorXd rhs(s);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = i; j < s; ++j) {
            const double v = detail::structured_dot(new_basis[i], new_basis[j]);
            gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            gram(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
        rhs(static_cast<Eigen::Index>(i)) = detail::structured_dot_dense(new_basis[i], target);
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
    const Eigen::VectorXd a = cod.solve(rhs);
    const bool deficient = cod.rank() < static_cast<Eigen::Index>(s);
    // residual evaluated directly; the normal-equation identity cancels
    // catastrophically near zero
    MatrixD fitted(target.rows(), target.cols(), 0.0);
    for (std::size_t i = 0; i < s; ++i) {
        const double c = a(static_cast<Eigen::Index>(i));
        if (c == 0.0) continue;
        add_scaled(fitted, c, new_basis[i].template cast<double>().densify());
    }
    double resid_sq = 0;
    for (Index i = 0; i < target.size(); ++i) {
        const double d = fitted.data()[i] - static_cast<double>(target.data()[i]);
        resid_sq += d * d;
    }
    std::vector<double> coeffs(s);
    for (std::size_t i = 0; i < s; ++i) coeffs[i] = a(static_cast<Eigen::Index>(i));
    return {std::move(coeffs), {std::sqrt(resid_sq), deficient}};
}

template <typename T>
RefitResult<T> refit_stage(const ProductOfSums<T>& trained,
                           const std::vector<std::vector<BasisDescriptor>>& new_descriptors) {
    if (new_descriptors.size() != trained.factor_count())
        throw ShapeError("refit_stage: " + std::to_string(new_descriptors.size()) +
                         " descriptor groups for " + std::to_string(trained.factor_count()) +
                         " factors");
    std::vector<SumFactor<T>> new_factors;
    RefitDiagnostics<T> diag;
    for (std::size_t j = 0; j < trained.factor_count(); ++j) {
        std::vector<FixedMatrix<T>> basis;
        for (const auto& d : new_descriptors[j])
            for (auto& m : materialize_basis<T>(d)) basis.push_back(std::move(m));
        const Matrix<T> target = trained.factors()[j].materialize();
        auto [coeffs, info] = refit_factor_coeffs(target, basis);
        std::vector<T> c(coeffs.size());
        for (std::size_t i = 0; i < coeffs.size(); ++i) c[i] = static_cast<T>(coeffs[i]);
        new_factors.emplace_back(std::move(basis), std::move(c));
        diag.residuals.push_back(info.first);
        diag.rank_deficient.push_back(info.second);
    }
    return RefitResult<T>{ProductOfSums<T>(std::move(new_factors), trained.bias()),
                          std::move(diag)};
}

struct DistanceOptions {
    int restarts = 10;
    double tol = 1e-9;
    int max_iters = 5000;
    double learning_rate = 0.05;
    std::uint64_t seed = 0x5eedULL;
};

template <typename T>
struct DistanceResult {
    double distance = 0;
    std::vector<std::vector<T>> coeffs;  // per factor
};

// d(W, {M_jk}) = min over coefficients of ||W - prod_j sum_k a_jk M_jk||_F.
// p=1 solves the linear least-squares problem exactly; p>1 runs `restarts`
// seeded Adam descents and returns the best value found (an upper bound on
// the true minimum; the objective is nonconvex).
template <typename T>
DistanceResult<T> decomposition_distance(const Matrix<T>& w,
                                         const std::vector<std::vector<BasisDescriptor>>& groups,
                                         const DistanceOptions& opt = {}) {
    std::vector<std::vector<FixedMatrix<T>>> bases;
    for (const auto& g : groups) {
        std::vector<FixedMatrix<T>> basis;
        for (const auto& d : g)
            for (auto& m : materialize_basis<T>(d)) basis.push_back(std::move(m));
        if (basis.empty()) throw InvalidArgument("decomposition_distance: empty factor basis");
        bases.push_back(std::move(basis));
    }
    if (bases.empty()) throw InvalidArgument("decomposition_distance: no factors");

    if (bases.size() == 1) {
        auto [coeffs, info] = refit_factor_coeffs(w, bases[0]);
        DistanceResult<T> res;
        res.distance = info.first;
        res.coeffs.emplace_back();
        for (double c : coeffs) res.coeffs.back().push_back(static_cast<T>(c));
        return res;
    }

    DistanceResult<T> best;
    best.distance = std::numeric_limits<double>::infinity();
    const Index in_cols = bases.back().front().cols();
    const Matrix<T> eye = Matrix<T>::identity(in_cols);
    for (int r = 0; r < opt.restarts; ++r) {
        std::vector<SumFactor<T>> factors;
        for (std::size_t j = 0; j < bases.size(); ++j) {
            SeededRng rng(substream(opt.seed, static_cast<std::uint64_t>(r), j));
            const double sd = 1.0 / std::sqrt(static_cast<double>(bases[j].size()));
            std::vector<T> coeffs(bases[j].size());
            for (auto& c : coeffs) c = static_cast<T>(sd * rng.normal());
            factors.emplace_back(bases[j], std::move(coeffs));
        }
        ProductOfSums<T> ps(std::move(factors));
        if (ps.rows() != w.rows() || ps.cols() != w.cols())
            throw ShapeError("decomposition_distance: factors compose to " +
                             std::to_string(ps.rows()) + "x" + std::to_string(ps.cols()) +
                             " but W is " + w.shape_str());

        // Adam on 0.5*||residual||^2 with relative-decrease stopping.
        std::vector<std::vector<double>> m1(ps.factor_count()), m2(ps.factor_count());
        for (std::size_t j = 0; j < ps.factor_count(); ++j) {
            m1[j].assign(bases[j].size(), 0.0);
            m2[j].assign(bases[j].size(), 0.0);
        }
        double prev = std::numeric_limits<double>::infinity();
        double dist = std::numeric_limits<double>::infinity();
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        for (int it = 1; it <= opt.max_iters; ++it) {
            typename ProductOfSums<T>::ForwardCache cache;
            Matrix<T> out = ps.apply(eye, &cache);
            Matrix<T> residual(out.rows(), out.cols());
            residual.map() = out.map() - w.map();
            const double obj = 0.5 * static_cast<double>(residual.map().squaredNorm());
            dist = std::sqrt(2.0 * obj);
            if (it > 1 && std::abs(prev - obj) <= opt.tol * std::max(std::abs(prev), 1e-30)) break;
            prev = obj;
            auto grads = ps.grad(cache, residual);
            const double corr1 = 1.0 - std::pow(b1, it);
            const double corr2 = 1.0 - std::pow(b2, it);
            for (std::size_t j = 0; j < ps.factor_count(); ++j) {
                auto& coeffs = ps.factors()[j].coeffs_mut();
                for (std::size_t k = 0; k < coeffs.size(); ++k) {
                    const double g = static_cast<double>(grads.coeff_grads[j][k]);
                    m1[j][k] = b1 * m1[j][k] + (1 - b1) * g;
                    m2[j][k] = b2 * m2[j][k] + (1 - b2) * g * g;
                    coeffs[k] -= static_cast<T>(opt.learning_rate * (m1[j][k] / corr1) /
                                                (std::sqrt(m2[j][k] / corr2) + eps));
                }
            }
        }
        if (dist < best.distance) {
            best.distance = dist;
            best.coeffs.clear();
            for (const auto& f : ps.factors()) best.coeffs.push_back(f.coeffs());
        }
    }
    return best;
}

}  // namespace prosum
