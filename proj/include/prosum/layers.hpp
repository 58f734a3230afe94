#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "prosum/b64.hpp"
#include "prosum/basis.hpp"
#include "prosum/prosum.hpp"

namespace prosum {

enum class Mode { train, eval };

struct Shape3 {
    Index c = 1, h = 1, w = 1;
    Index size() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
    std::string str() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

template <typename T>
struct ParamBlock {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T> grad;
};

namespace conv {

struct Geometry {
    Index cin, h, w, cout, kh, kw;  // SAME padding, stride 1
    Index pad_h() const { return (kh - 1) / 2; }
    Index pad_w() const { return (kw - 1) / 2; }
};

// Patch matrix: rows = cin*kh*kw, cols = h*w*batch, column b*(h*w)+pos.
template <typename T>
Matrix<T> im2col(const Geometry& g, const Matrix<T>& x) {
    const Index hw = g.h * g.w;
    Matrix<T> col(g.cin * g.kh * g.kw, hw * x.cols(), T{0});
    for (Index b = 0; b < x.cols(); ++b) {
        for (Index c = 0; c < g.cin; ++c) {
            for (Index ky = 0; ky < g.kh; ++ky) {
                for (Index kx = 0; kx < g.kw; ++kx) {
                    const Index row = (c * g.kh + ky) * g.kw + kx;
                    for (Index oy = 0; oy < g.h; ++oy) {
                        const Index iy = oy + ky - g.pad_h();
                        if (iy < 0 || iy >= g.h) continue;
                        for (Index ox = 0; ox < g.w; ++ox) {
                            const Index ix = ox + kx - g.pad_w();
                            if (ix < 0 || ix >= g.w) continue;
                            col(row, b * hw + oy * g.w + ox) = x((c * g.h + iy) * g.w + ix, b);
                        }
                    }
                }
            }
        }
    }
    return col;
}

template <typename T>
Matrix<T> col2im(const Geometry& g, const Matrix<T>& col, Index batch) {
    const Index hw = g.h * g.w;
    Matrix<T> x(g.cin * hw, batch, T{0});
    for (Index b = 0; b < batch; ++b) {
        for (Index c = 0; c < g.cin; ++c) {
            for (Index ky = 0; ky < g.kh; ++ky) {
                for (Index kx = 0; kx < g.kw; ++kx) {
                    const Index row = (c * g.kh + ky) * g.kw + kx;
                    for (Index oy = 0; oy < g.h; ++oy) {
                        const Index iy = oy + ky - g.pad_h();
                        if (iy < 0 || iy >= g.h) continue;
                        for (Index ox = 0; ox < g.w; ++ox) {
                            const Index ix = ox + kx - g.pad_w();
                            if (ix < 0 || ix >= g.w) continue;
                            x((c * g.h + iy) * g.w + ix, b) += col(row, b * hw + oy * g.w + ox);
                        }
                    }
                }
            }
        }
    }
    return x;
}

// kernel (cout, cin*kh*kw) applied to the patch matrix, reinterleaved into
// feature-major output columns, bias broadcast per output channel.
template <typename T>
Matrix<T> forward(const Geometry& g, const Matrix<T>& kernel, const std::vector<T>& bias,
                  const Matrix<T>& col, Index batch) {
    const Index hw = g.h * g.w;
    Matrix<T> y = matmul(kernel, col);  // cout x (hw*batch)
    Matrix<T> out(g.cout * hw, batch);
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < g.cout; ++c)
            for (Index pos = 0; pos < hw; ++pos)
                out(c * hw + pos, b) = y(c, b * hw + pos) + bias[static_cast<std::size_t>(c)];
    return out;
}

template <typename T>
Matrix<T> reinterleave_delta(const Geometry& g, const Matrix<T>& dout) {
    const Index hw = g.h * g.w;
    const Index batch = dout.cols();
    Matrix<T> dy(g.cout, hw * batch);
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < g.cout; ++c)
            for (Index pos = 0; pos < hw; ++pos) dy(c, b * hw + pos) = dout(c * hw + pos, b);
    return dy;
}

}  // namespace conv

// Base class for layers; forward stores whatever backward needs, so a layer
// instance serves one in-flight batch at a time.
template <typename T>
class Layer {
  public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    // Validates the input shape and returns the output shape; called once
    // when the network is assembled.
    virtual Shape3 connect(const Shape3& in) = 0;
    virtual Matrix<T> forward(const Matrix<T>& x, Mode mode, SeededRng* rng) = 0;
    virtual Matrix<T> backward(const Matrix<T>& dy) = 0;
    virtual std::vector<ParamBlock<T>*> params() { return {}; }
    virtual Index param_count() const { return 0; }
    // Invalidate coefficient-derived caches after an optimizer step.
    virtual void refresh() {}
    virtual nlohmann::json to_json() const = 0;
};

template <typename T>
class DenseFullLayer final : public Layer<T> {
  public:
    DenseFullLayer(Index in, Index out, std::vector<T> weights, std::vector<T> bias)
        : in_(in), out_(out), weights_(std::move(weights)), bias_(std::move(bias)) {
        if (static_cast<Index>(weights_.size()) != in * out ||
            static_cast<Index>(bias_.size()) != out)
            throw ShapeError("dense_full: parameter sizes do not match " + std::to_string(out) +
                             "x" + std::to_string(in));
        w_.name = "weights";
        b_.name = "bias";
        w_.value = &weights_;
        b_.value = &bias_;
        w_.grad.assign(weights_.size(), T{0});
        b_.grad.assign(bias_.size(), T{0});
    }
    DenseFullLayer(const DenseFullLayer&) = delete;
    DenseFullLayer& operator=(const DenseFullLayer&) = delete;

    std::string kind() const override { return "dense_full"; }
    Shape3 connect(const Shape3& in) override {
        if (in.size() != in_)
            throw ShapeError("dense_full expects " + std::to_string(in_) + " features, got " +
                             in.str());
        return Shape3{out_, 1, 1};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        x_ = x;
        Matrix<T> y(out_, x.cols());
        Eigen::Map<const typename Matrix<T>::EigenType> w(w_.value->data(), out_, in_);
        y.map().noalias() = w * x.map();
        for (Index i = 0; i < out_; ++i) {
            const T b = (*b_.value)[static_cast<std::size_t>(i)];
            for (Index col = 0; col < y.cols(); ++col) y(i, col) += b;
        }
        return y;
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        Eigen::Map<const typename Matrix<T>::EigenType> w(w_.value->data(), out_, in_);
        Eigen::Map<typename Matrix<T>::EigenType> dw(w_.grad.data(), out_, in_);
        dw.noalias() += dy.map() * x_.map().transpose();
        for (Index i = 0; i < out_; ++i) {
            T s{0};
            for (Index col = 0; col < dy.cols(); ++col) s += dy(i, col);
            b_.grad[static_cast<std::size_t>(i)] += s;
        }
        Matrix<T> dx(in_, dy.cols());
        dx.map().noalias() = w.transpose() * dy.map();
        return dx;
    }
    std::vector<ParamBlock<T>*> params() override { return {&w_, &b_}; }
    Index param_count() const override { return in_ * out_ + out_; }
    nlohmann::json to_json() const override {
        return {{"kind", kind()},
                {"in", in_},
                {"out", out_},
                {"weights", encode_f32_blob(*w_.value)},
                {"bias", encode_f32_blob(*b_.value)}};
    }

  private:
    Index in_, out_;
    std::vector<T> weights_, bias_;
    ParamBlock<T> w_, b_;
    Matrix<T> x_;
};

template <typename T>
class ProsumDenseLayer final : public Layer<T> {
  public:
    ProsumDenseLayer(std::vector<std::vector<BasisDescriptor>> descriptors, ProductOfSums<T> ps)
        : descriptors_(std::move(descriptors)), ps_(std::move(ps)) {
        if (descriptors_.size() != ps_.factor_count())
            throw ShapeError("prosum_dense: descriptor groups != factor count");
        blocks_.reserve(ps_.factor_count() + 1);
        for (std::size_t j = 0; j < ps_.factor_count(); ++j) {
            ParamBlock<T> b;
            b.name = "factor" + std::to_string(j);
            b.value = &ps_.factors()[j].coeffs_mut();
            b.grad.assign(b.value->size(), T{0});
            blocks_.push_back(std::move(b));
        }
        if (ps_.bias()) {
            ParamBlock<T> b;
            b.name = "bias";
            b.value = &*ps_.bias();
            b.grad.assign(b.value->size(), T{0});
            blocks_.push_back(std::move(b));
        }
        ps_.mark_dirty();
    }

    std::string kind() const override { return "prosum_dense"; }
    Shape3 connect(const Shape3& in) override {
        if (in.size() != ps_.cols())
            throw ShapeError("prosum_dense expects " + std::to_string(ps_.cols()) +
                             " features, got " + in.str());
        return Shape3{ps_.rows(), 1, 1};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        return ps_.apply(x, &cache_);
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        auto g = ps_.grad(cache_, dy);
        for (std::size_t j = 0; j < ps_.factor_count(); ++j)
            for (std::size_t k = 0; k < g.coeff_grads[j].size(); ++k)
                blocks_[j].grad[k] += g.coeff_grads[j][k];
        if (ps_.bias())
            for (std::size_t i = 0; i < g.bias_grad.size(); ++i)
                blocks_.back().grad[i] += g.bias_grad[i];
        return std::move(g.input_grad);
    }
    std::vector<ParamBlock<T>*> params() override {
        std::vector<ParamBlock<T>*> out;
        for (auto& b : blocks_) out.push_back(&b);
        return out;
    }
    Index param_count() const override { return ps_.param_count(); }
    void refresh() override { ps_.mark_dirty(); }
    ProductOfSums<T>& product() { return ps_; }
    const std::vector<std::vector<BasisDescriptor>>& descriptors() const { return descriptors_; }

    nlohmann::json to_json() const override {
        nlohmann::json groups = nlohmann::json::array();
        for (const auto& g : descriptors_) {
            nlohmann::json ds = nlohmann::json::array();
            for (const auto& d : g) ds.push_back(d.to_json());
            groups.push_back(std::move(ds));
        }
        nlohmann::json coeffs = nlohmann::json::array();
        for (const auto& f : ps_.factors()) coeffs.push_back(encode_f32_blob(f.coeffs()));
        nlohmann::json j{{"kind", kind()}, {"bases", std::move(groups)}, {"coeffs", std::move(coeffs)}};
        if (ps_.bias()) j["bias"] = encode_f32_blob(*ps_.bias());
        return j;
    }

  private:
    std::vector<std::vector<BasisDescriptor>> descriptors_;
    ProductOfSums<T> ps_;
    std::vector<ParamBlock<T>> blocks_;
    typename ProductOfSums<T>::ForwardCache cache_;
};

template <typename T>
class Conv2dFullLayer final : public Layer<T> {
  public:
    Conv2dFullLayer(Index cin, Index cout, Index k, std::vector<T> filters, std::vector<T> bias)
        : cin_(cin), cout_(cout), k_(k), filters_(std::move(filters)), bias_(std::move(bias)) {
        if (static_cast<Index>(filters_.size()) != cout * cin * k * k ||
            static_cast<Index>(bias_.size()) != cout)
            throw ShapeError("conv2d_full: parameter sizes do not match");
        f_.name = "filters";
        b_.name = "bias";
        f_.value = &filters_;
        b_.value = &bias_;
        f_.grad.assign(filters_.size(), T{0});
        b_.grad.assign(bias_.size(), T{0});
    }
    Conv2dFullLayer(const Conv2dFullLayer&) = delete;
    Conv2dFullLayer& operator=(const Conv2dFullLayer&) = delete;

    std::string kind() const override { return "conv2d_full"; }
    Shape3 connect(const Shape3& in) override {
        if (in.c != cin_)
            throw ShapeError("conv2d_full expects " + std::to_string(cin_) + " channels, got " +
                             in.str());
        geom_ = conv::Geometry{cin_, in.h, in.w, cout_, k_, k_};
        return Shape3{cout_, in.h, in.w};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        col_ = conv::im2col(geom_, x);
        Matrix<T> kernel(cout_, cin_ * k_ * k_, *f_.value);
        return conv::forward(geom_, kernel, *b_.value, col_, x.cols());
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        const Index batch = dy.cols();
        Matrix<T> d = conv::reinterleave_delta(geom_, dy);
        Eigen::Map<typename Matrix<T>::EigenType> df(f_.grad.data(), cout_, cin_ * k_ * k_);
        df.noalias() += d.map() * col_.map().transpose();
        for (Index c = 0; c < cout_; ++c) {
            T s{0};
            for (Index i = 0; i < d.cols(); ++i) s += d(c, i);
            b_.grad[static_cast<std::size_t>(c)] += s;
        }
        Eigen::Map<const typename Matrix<T>::EigenType> kernel(f_.value->data(), cout_,
                                                               cin_ * k_ * k_);
        Matrix<T> dcol(cin_ * k_ * k_, d.cols());
        dcol.map().noalias() = kernel.transpose() * d.map();
        return conv::col2im(geom_, dcol, batch);
    }
    std::vector<ParamBlock<T>*> params() override { return {&f_, &b_}; }
    Index param_count() const override { return cout_ * cin_ * k_ * k_ + cout_; }
    nlohmann::json to_json() const override {
        return {{"kind", kind()},       {"cin", cin_},
                {"cout", cout_},        {"k", k_},
                {"filters", encode_f32_blob(*f_.value)}, {"bias", encode_f32_blob(*b_.value)}};
    }

  private:
    Index cin_, cout_, k_;
    conv::Geometry geom_{};
    std::vector<T> filters_, bias_;
    ParamBlock<T> f_, b_;
    Matrix<T> col_;
};

// Convolution by a coefficient-weighted sum of fixed filter banks: the
// filters are summed first, then convolved once (linearity).
template <typename T>
class SumConv2dLayer final : public Layer<T> {
  public:
    SumConv2dLayer(BasisDescriptor filter_bank, Index cin, Index cout, Index k,
                   std::vector<T> coeffs, std::vector<T> bias)
        : desc_(std::move(filter_bank)),
          cin_(cin),
          cout_(cout),
          k_(k),
          factor_(materialize_basis<T>(desc_), std::move(coeffs)) {
        if (desc_.rows != cout || desc_.cols != cin * k * k)
            throw InvalidDescriptor("sum_conv2d: filter bank shape " + std::to_string(desc_.rows) +
                                    "x" + std::to_string(desc_.cols) + " != " +
                                    std::to_string(cout) + "x" + std::to_string(cin * k * k));
        if (static_cast<Index>(bias.size()) != cout)
            throw ShapeError("sum_conv2d: bias length != out channels");
        bias_ = std::move(bias);
        c_.name = "coeffs";
        c_.value = &factor_.coeffs_mut();
        c_.grad.assign(c_.value->size(), T{0});
        b_.name = "bias";
        b_.value = &bias_;
        b_.grad.assign(bias_.size(), T{0});
        factor_.mark_dirty();
    }
    SumConv2dLayer(const SumConv2dLayer&) = delete;
    SumConv2dLayer& operator=(const SumConv2dLayer&) = delete;

    std::string kind() const override { return "sum_conv2d"; }
    Shape3 connect(const Shape3& in) override {
        if (in.c != cin_)
            throw ShapeError("sum_conv2d expects " + std::to_string(cin_) + " channels, got " +
                             in.str());
        geom_ = conv::Geometry{cin_, in.h, in.w, cout_, k_, k_};
        return Shape3{cout_, in.h, in.w};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        col_ = conv::im2col(geom_, x);
        return conv::forward(geom_, factor_.materialize(), *b_.value, col_, x.cols());
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        const Index batch = dy.cols();
        Matrix<T> d = conv::reinterleave_delta(geom_, dy);
        Matrix<T> dkernel = matmul_nt(d, col_);
        // coefficient gradients: <dKernel, F_k>
        const auto& basis = factor_.basis();
        for (std::size_t k = 0; k < basis.size(); ++k)
            c_.grad[k] += static_cast<T>(detail::structured_dot_dense(basis[k], dkernel));
        for (Index c = 0; c < cout_; ++c) {
            T s{0};
            for (Index i = 0; i < d.cols(); ++i) s += d(c, i);
            b_.grad[static_cast<std::size_t>(c)] += s;
        }
        Matrix<T> dcol = factor_.apply_t(d);
        return conv::col2im(geom_, dcol, batch);
    }
    std::vector<ParamBlock<T>*> params() override { return {&c_, &b_}; }
    Index param_count() const override {
        return factor_.size() + static_cast<Index>(b_.value->size());
    }
    void refresh() override { factor_.mark_dirty(); }
    nlohmann::json to_json() const override {
        return {{"kind", kind()},
                {"bank", desc_.to_json()},
                {"cin", cin_},
                {"cout", cout_},
                {"k", k_},
                {"coeffs", encode_f32_blob(*c_.value)},
                {"bias", encode_f32_blob(*b_.value)}};
    }

  private:
    BasisDescriptor desc_;
    Index cin_, cout_, k_;
    conv::Geometry geom_{};
    SumFactor<T> factor_;
    std::vector<T> bias_;
    ParamBlock<T> c_, b_;
    Matrix<T> col_;
};

// Per-channel elementwise product in the transform domain. Each basis
// element is a tuple of `width` diagonals sharing one coefficient; output
// channel c applies sum_k coeff_k * d_kc to the input map (single-channel
// input broadcast, or channel c with matching multi-channel input), plus a
// per-channel scalar bias.
template <typename T>
class HadamardLayer final : public Layer<T> {
  public:
    // Tuples provided explicitly (stored in checkpoints as blobs).
    HadamardLayer(Index n, std::vector<DiagonalTuple<T>> tuples, std::vector<T> coeffs,
                  std::vector<T> bias)
        : tuples_(std::move(tuples)),
          width_(tuples_.empty() ? 0 : static_cast<Index>(tuples_.front().diagonals.size())),
          n_(n),
          explicit_tuples_(true) {
        if (tuples_.empty()) throw InvalidArgument("hadamard: no tuples");
        for (const auto& t : tuples_) {
            if (static_cast<Index>(t.diagonals.size()) != width_)
                throw ShapeError("hadamard: tuple widths disagree");
            for (const auto& d : t.diagonals)
                if (static_cast<Index>(d.size()) != n_)
                    throw ShapeError("hadamard: diagonal length != " + std::to_string(n_));
        }
        init_blocks(std::move(coeffs), std::move(bias), static_cast<Index>(tuples_.size()));
    }

    HadamardLayer(BasisDescriptor tuples_desc, std::vector<T> coeffs, std::vector<T> bias)
        : desc_(std::move(tuples_desc)),
          tuples_(materialize_diagonal_tuples<T>(desc_)),
          width_(desc_.tuple_width),
          n_(desc_.rows) {
        init_blocks(std::move(coeffs), std::move(bias), desc_.count);
    }
    HadamardLayer(const HadamardLayer&) = delete;
    HadamardLayer& operator=(const HadamardLayer&) = delete;

    std::string kind() const override { return "hadamard"; }
    Shape3 connect(const Shape3& in) override {
        const Index map_len = in.h * in.w;
        if (in.c != 1 && in.c != width_)
            throw ShapeError("hadamard: input " + in.str() + " incompatible with width " +
                             std::to_string(width_));
        if (map_len != n_)
            throw ShapeError("hadamard: diagonal length " + std::to_string(n_) +
                             " != map length " + std::to_string(map_len));
        cin_ = in.c;
        return Shape3{width_, in.h, in.w};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        x_ = x;
        compose_diagonals();
        Matrix<T> out(width_ * n_, x.cols());
        for (Index c = 0; c < width_; ++c) {
            const Index src_off = (cin_ == 1) ? 0 : c * n_;
            const T bias = (*b_.value)[static_cast<std::size_t>(c)];
            for (Index i = 0; i < n_; ++i) {
                const T d = composed_(c, i);
                for (Index b = 0; b < x.cols(); ++b)
                    out(c * n_ + i, b) = d * x(src_off + i, b) + bias;
            }
        }
        return out;
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        // d composed diagonal, then chain to the shared tuple coefficients
        Matrix<T> dcomposed(width_, n_, T{0});
        for (Index c = 0; c < width_; ++c) {
            const Index src_off = (cin_ == 1) ? 0 : c * n_;
            T bias_grad{0};
            for (Index i = 0; i < n_; ++i) {
                T s{0};
                for (Index b = 0; b < dy.cols(); ++b) {
                    const T g = dy(c * n_ + i, b);
                    s += g * x_(src_off + i, b);
                    bias_grad += g;
                }
                dcomposed(c, i) = s;
            }
            b_.grad[static_cast<std::size_t>(c)] += bias_grad;
        }
        for (std::size_t k = 0; k < tuples_.size(); ++k) {
            T s{0};
            for (Index c = 0; c < width_; ++c) {
                const auto& d = tuples_[k].diagonals[static_cast<std::size_t>(c)];
                for (Index i = 0; i < n_; ++i) s += dcomposed(c, i) * d[static_cast<std::size_t>(i)];
            }
            c_.grad[k] += s;
        }
        Matrix<T> dx(cin_ * n_, dy.cols(), T{0});
        for (Index c = 0; c < width_; ++c) {
            const Index src_off = (cin_ == 1) ? 0 : c * n_;
            for (Index i = 0; i < n_; ++i) {
                const T d = composed_(c, i);
                for (Index b = 0; b < dy.cols(); ++b) dx(src_off + i, b) += d * dy(c * n_ + i, b);
            }
        }
        return dx;
    }
    std::vector<ParamBlock<T>*> params() override { return {&c_, &b_}; }
    Index param_count() const override {
        return static_cast<Index>(c_.value->size() + b_.value->size());
    }
    void refresh() override { dirty_ = true; }
    nlohmann::json to_json() const override {
        nlohmann::json j{{"kind", kind()},
                         {"coeffs", encode_f32_blob(*c_.value)},
                         {"bias", encode_f32_blob(*b_.value)}};
        if (explicit_tuples_) {
            nlohmann::json ts = nlohmann::json::array();
            for (const auto& t : tuples_) {
                nlohmann::json ds = nlohmann::json::array();
                for (const auto& d : t.diagonals) ds.push_back(encode_f32_blob(d));
                ts.push_back(std::move(ds));
            }
            j["explicit_tuples"] = std::move(ts);
            j["n"] = n_;
        } else {
            j["tuples"] = desc_.to_json();
        }
        return j;
    }

  private:
    void init_blocks(std::vector<T> coeffs, std::vector<T> bias, Index expected_count) {
        if (static_cast<Index>(coeffs.size()) != expected_count)
            throw ShapeError("hadamard: coeff count != tuple count");
        if (static_cast<Index>(bias.size()) != width_)
            throw ShapeError("hadamard: bias length " + std::to_string(bias.size()) +
                             " != tuple width " + std::to_string(width_));
        coeffs_ = std::move(coeffs);
        bias_ = std::move(bias);
        c_.name = "coeffs";
        c_.value = &coeffs_;
        b_.name = "bias";
        b_.value = &bias_;
        c_.grad.assign(coeffs_.size(), T{0});
        b_.grad.assign(bias_.size(), T{0});
    }

    void compose_diagonals() {
        if (!dirty_ && composed_.size() > 0) return;
        composed_ = Matrix<T>(width_, n_, T{0});
        for (std::size_t k = 0; k < tuples_.size(); ++k) {
            const T a = (*c_.value)[k];
            if (a == T{0}) continue;
            for (Index c = 0; c < width_; ++c) {
                const auto& d = tuples_[k].diagonals[static_cast<std::size_t>(c)];
                for (Index i = 0; i < n_; ++i) composed_(c, i) += a * d[static_cast<std::size_t>(i)];
            }
        }
        dirty_ = false;
    }

    BasisDescriptor desc_;
    std::vector<DiagonalTuple<T>> tuples_;
    Index width_, n_, cin_ = 1;
    std::vector<T> coeffs_, bias_;
    ParamBlock<T> c_, b_;
    Matrix<T> x_, composed_;
    bool dirty_ = true;
};

// Fixed (non-trainable) linear map, optionally applied transposed, and
// optionally applied independently to each input channel.
template <typename T>
class FixedLinearLayer final : public Layer<T> {
  public:
    FixedLinearLayer(BasisDescriptor desc, bool transposed, bool per_channel)
        : desc_(std::move(desc)), transposed_(transposed), per_channel_(per_channel) {
        auto mats = materialize_basis<T>(desc_);
        if (mats.size() != 1)
            throw InvalidDescriptor("fixed_linear: descriptor must yield exactly one matrix");
        op_ = std::make_unique<FixedMatrix<T>>(std::move(mats[0]));
    }

    std::string kind() const override { return "fixed_linear"; }
    Shape3 connect(const Shape3& in) override {
        const Index from = transposed_ ? op_->rows() : op_->cols();
        const Index to = transposed_ ? op_->cols() : op_->rows();
        if (per_channel_) {
            if (in.h * in.w != from)
                throw ShapeError("fixed_linear(per-channel) expects maps of " +
                                 std::to_string(from) + ", got " + in.str());
            channels_ = in.c;
            return Shape3{in.c, to, 1};
        }
        if (in.size() != from)
            throw ShapeError("fixed_linear expects " + std::to_string(from) + " features, got " +
                             in.str());
        channels_ = 1;
        return Shape3{to, 1, 1};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        return apply_dir(x, transposed_);
    }
    Matrix<T> backward(const Matrix<T>& dy) override { return apply_dir(dy, !transposed_); }
    nlohmann::json to_json() const override {
        return {{"kind", kind()},
                {"op", desc_.to_json()},
                {"transposed", transposed_},
                {"per_channel", per_channel_}};
    }

  private:
    Matrix<T> apply_dir(const Matrix<T>& x, bool t) const {
        const Index from = t ? op_->rows() : op_->cols();
        const Index to = t ? op_->cols() : op_->rows();
        if (channels_ == 1) return t ? op_->apply_t(x) : op_->apply(x);
        Matrix<T> out(channels_ * to, x.cols());
        Matrix<T> slice(from, x.cols());
        for (Index c = 0; c < channels_; ++c) {
            for (Index i = 0; i < from; ++i)
                for (Index b = 0; b < x.cols(); ++b) slice(i, b) = x(c * from + i, b);
            Matrix<T> y = t ? op_->apply_t(slice) : op_->apply(slice);
            for (Index i = 0; i < to; ++i)
                for (Index b = 0; b < x.cols(); ++b) out(c * to + i, b) = y(i, b);
        }
        return out;
    }

    BasisDescriptor desc_;
    bool transposed_, per_channel_;
    Index channels_ = 1;
    std::unique_ptr<FixedMatrix<T>> op_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
  public:
    std::string kind() const override { return "relu"; }
    Shape3 connect(const Shape3& in) override { return in; }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        mask_ = Matrix<T>(x.rows(), x.cols());
        Matrix<T> y(x.rows(), x.cols());
        for (Index i = 0; i < x.size(); ++i) {
            const bool on = x.data()[i] > T{0};
            mask_.data()[i] = on ? T{1} : T{0};
            y.data()[i] = on ? x.data()[i] : T{0};
        }
        return y;
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        Matrix<T> dx(dy.rows(), dy.cols());
        for (Index i = 0; i < dy.size(); ++i) dx.data()[i] = dy.data()[i] * mask_.data()[i];
        return dx;
    }
    nlohmann::json to_json() const override { return {{"kind", kind()}}; }

  private:
    Matrix<T> mask_;
};

template <typename T>
class MaxPool2x2Layer final : public Layer<T> {
  public:
    std::string kind() const override { return "maxpool2x2"; }
    Shape3 connect(const Shape3& in) override {
        if (in.h % 2 != 0 || in.w % 2 != 0)
            throw ShapeError("maxpool2x2 needs even spatial dims, got " + in.str());
        shape_ = in;
        return Shape3{in.c, in.h / 2, in.w / 2};
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override {
        const Index oh = shape_.h / 2, ow = shape_.w / 2;
        Matrix<T> y(shape_.c * oh * ow, x.cols());
        argmax_.assign(static_cast<std::size_t>(y.size()), 0);
        for (Index b = 0; b < x.cols(); ++b) {
            for (Index c = 0; c < shape_.c; ++c) {
                for (Index oy = 0; oy < oh; ++oy) {
                    for (Index ox = 0; ox < ow; ++ox) {
                        Index best = ((c * shape_.h + 2 * oy) * shape_.w) + 2 * ox;
                        T best_v = x(best, b);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const Index idx =
                                    (c * shape_.h + 2 * oy + dy) * shape_.w + 2 * ox + dx;
                                if (x(idx, b) > best_v) {
                                    best_v = x(idx, b);
                                    best = idx;
                                }
                            }
                        const Index out_idx = (c * oh + oy) * ow + ox;
                        y(out_idx, b) = best_v;
                        argmax_[static_cast<std::size_t>(out_idx * x.cols() + b)] = best;
                    }
                }
            }
        }
        return y;
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        Matrix<T> dx(shape_.size(), dy.cols(), T{0});
        for (Index i = 0; i < dy.rows(); ++i)
            for (Index b = 0; b < dy.cols(); ++b)
                dx(argmax_[static_cast<std::size_t>(i * dy.cols() + b)], b) += dy(i, b);
        return dx;
    }
    nlohmann::json to_json() const override { return {{"kind", kind()}}; }

  private:
    Shape3 shape_;
    std::vector<Index> argmax_;
};

// Inverted dropout: training scales kept activations by 1/keep_prob so that
// eval mode is the identity (and deterministic).
template <typename T>
class DropoutLayer final : public Layer<T> {
  public:
    explicit DropoutLayer(double keep_prob) : keep_(keep_prob) {
        if (!(keep_ > 0.0 && keep_ <= 1.0))
            throw InvalidArgument("dropout: keep_prob must be in (0, 1]");
    }
    std::string kind() const override { return "dropout"; }
    Shape3 connect(const Shape3& in) override { return in; }
    Matrix<T> forward(const Matrix<T>& x, Mode mode, SeededRng* rng) override {
        if (mode == Mode::eval) {
            train_pass_ = false;
            return x;
        }
        if (!rng) throw InvalidArgument("dropout: training forward needs an rng");
        train_pass_ = true;
        mask_ = Matrix<T>(x.rows(), x.cols());
        Matrix<T> y(x.rows(), x.cols());
        const T inv = static_cast<T>(1.0 / keep_);
        for (Index i = 0; i < x.size(); ++i) {
            const bool on = rng->uniform() < keep_;
            mask_.data()[i] = on ? inv : T{0};
            y.data()[i] = x.data()[i] * mask_.data()[i];
        }
        return y;
    }
    Matrix<T> backward(const Matrix<T>& dy) override {
        if (!train_pass_) return dy;
        Matrix<T> dx(dy.rows(), dy.cols());
        for (Index i = 0; i < dy.size(); ++i) dx.data()[i] = dy.data()[i] * mask_.data()[i];
        return dx;
    }
    nlohmann::json to_json() const override { return {{"kind", kind()}, {"keep_prob", keep_}}; }

  private:
    double keep_;
    Matrix<T> mask_;
    bool train_pass_ = false;
};

template <typename T>
class FlattenLayer final : public Layer<T> {
  public:
    std::string kind() const override { return "flatten"; }
    Shape3 connect(const Shape3& in) override { return Shape3{in.size(), 1, 1}; }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override { return x; }
    Matrix<T> backward(const Matrix<T>& dy) override { return dy; }
    nlohmann::json to_json() const override { return {{"kind", kind()}}; }
};

template <typename T>
class ReshapeLayer final : public Layer<T> {
  public:
    explicit ReshapeLayer(Shape3 to) : to_(to) {}
    std::string kind() const override { return "reshape"; }
    Shape3 connect(const Shape3& in) override {
        if (in.size() != to_.size())
            throw ShapeError("reshape: " + in.str() + " has " + std::to_string(in.size()) +
                             " elements, target " + to_.str() + " has " +
                             std::to_string(to_.size()));
        return to_;
    }
    Matrix<T> forward(const Matrix<T>& x, Mode, SeededRng*) override { return x; }
    Matrix<T> backward(const Matrix<T>& dy) override { return dy; }
    nlohmann::json to_json() const override {
        return {{"kind", kind()}, {"c", to_.c}, {"h", to_.h}, {"w", to_.w}};
    }

  private:
    Shape3 to_;
};

}  // namespace prosum
