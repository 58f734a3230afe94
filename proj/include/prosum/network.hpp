#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <vector>

#include "prosum/layers.hpp"

namespace prosum {

template <typename T>
struct SoftmaxXent {
    double loss;        // mean over the batch
    Matrix<T> dlogits;  // gradient of the mean loss
};

// Mean softmax cross-entropy over the batch (one column per sample).
template <typename T>
SoftmaxXent<T> softmax_xent(const Matrix<T>& logits, const std::vector<int>& labels) {
    if (static_cast<Index>(labels.size()) != logits.cols())
        throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.cols()) + " samples");
    SoftmaxXent<T> r{0.0, Matrix<T>(logits.rows(), logits.cols())};
    const double inv_b = 1.0 / static_cast<double>(logits.cols());
    for (Index b = 0; b < logits.cols(); ++b) {
        const int label = labels[static_cast<std::size_t>(b)];
        if (label < 0 || label >= logits.rows())
            throw InvalidArgument("softmax_xent: label " + std::to_string(label) + " out of range");
        T mx = logits(0, b);
        for (Index i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, b));
        double z = 0;
        for (Index i = 0; i < logits.rows(); ++i)
            z += std::exp(static_cast<double>(logits(i, b) - mx));
        r.loss += -(static_cast<double>(logits(label, b) - mx) - std::log(z)) * inv_b;
        for (Index i = 0; i < logits.rows(); ++i) {
            const double p = std::exp(static_cast<double>(logits(i, b) - mx)) / z;
            r.dlogits(i, b) = static_cast<T>((p - (i == label ? 1.0 : 0.0)) * inv_b);
        }
    }
    return r;
}

template <typename T>
std::vector<int> argmax_columns(const Matrix<T>& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.cols()));
    for (Index b = 0; b < logits.cols(); ++b) {
        int best = 0;
        for (Index i = 1; i < logits.rows(); ++i)
            if (logits(i, b) > logits(best, b)) best = static_cast<int>(i);  // ties -> lowest
        out[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

// Feed-forward layer chain. Single-threaded; one in-flight batch per
// instance (forward stores what backward consumes).
template <typename T>
class Network {
  public:
    Network(Shape3 input_shape, Index class_count)
        : input_shape_(input_shape), class_count_(class_count) {}

    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void add(std::unique_ptr<Layer<T>> layer) {
        const Shape3 in = shapes_.empty() ? input_shape_ : shapes_.back();
        try {
            shapes_.push_back(layer->connect(in));
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(layers_.size()) + " (" + layer->kind() +
                             "): " + e.what());
        }
        layers_.push_back(std::move(layer));
    }

    void finalize() const {
        if (layers_.empty()) throw ShapeError("network has no layers");
        if (shapes_.back().size() != class_count_)
            throw ShapeError("final layer yields " + std::to_string(shapes_.back().size()) +
                             " features, expected " + std::to_string(class_count_) + " classes");
    }

    const Shape3& input_shape() const { return input_shape_; }
    Index class_count() const { return class_count_; }
    std::size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
    const Shape3& out_shape(std::size_t i) const { return shapes_[i]; }

    Matrix<T> forward(const Matrix<T>& batch, Mode mode, SeededRng* rng = nullptr) {
        if (batch.rows() != input_shape_.size())
            throw ShapeError("network input has " + std::to_string(batch.rows()) +
                             " features, expected " + input_shape_.str());
        Matrix<T> x = batch;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            try {
                x = layers_[i]->forward(x, mode, rng);
            } catch (const ShapeError& e) {
                throw ShapeError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                                 "): " + e.what());
            }
        }
        return x;
    }

    // Backward from d(loss)/d(logits); accumulates into every ParamBlock.
    void backward(const Matrix<T>& dlogits) {
        Matrix<T> d = dlogits;
        for (std::size_t i = layers_.size(); i-- > 0;) d = layers_[i]->backward(d);
    }

    std::vector<ParamBlock<T>*> params() {
        std::vector<ParamBlock<T>*> out;
        for (auto& l : layers_)
            for (auto* b : l->params()) out.push_back(b);
        return out;
    }

    void zero_grads() {
        for (auto* b : params()) std::fill(b->grad.begin(), b->grad.end(), T{0});
    }

    void refresh() {
        for (auto& l : layers_) l->refresh();
    }

    Index param_count() const {
        Index n = 0;
        for (const auto& l : layers_) n += l->param_count();
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : layers_) layers.push_back(l->to_json());
        return {{"input_shape", {input_shape_.c, input_shape_.h, input_shape_.w}},
                {"class_count", class_count_},
                {"layers", std::move(layers)}};
    }

    static Network from_json(const nlohmann::json& j);

  private:
    Shape3 input_shape_;
    Index class_count_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::vector<Shape3> shapes_;
};

namespace detail {

template <typename T>
std::vector<T> init_gaussian_vec(Index n, std::uint64_t seed, double scale) {
    SeededRng rng(seed);
    return gaussian_vector<T>(n, rng, scale);
}

}  // namespace detail

template <typename T>
std::unique_ptr<Layer<T>> layer_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    auto decode = [](const nlohmann::json& field, std::size_t n) {
        return decode_f32_blob<T>(field.template get<std::string>(), n);
    };
    if (kind == "dense_full") {
        const Index in = j.at("in").get<Index>();
        const Index out = j.at("out").get<Index>();
        return std::make_unique<DenseFullLayer<T>>(
            in, out, decode(j.at("weights"), static_cast<std::size_t>(in * out)),
            decode(j.at("bias"), static_cast<std::size_t>(out)));
    }
    if (kind == "prosum_dense") {
        std::vector<std::vector<BasisDescriptor>> groups;
        std::vector<SumFactor<T>> factors;
        const auto& bases = j.at("bases");
        const auto& coeffs = j.at("coeffs");
        for (std::size_t g = 0; g < bases.size(); ++g) {
            std::vector<BasisDescriptor> group;
            std::vector<FixedMatrix<T>> basis;
            for (const auto& dj : bases[g]) {
                auto d = BasisDescriptor::from_json(dj);
                for (auto& m : materialize_basis<T>(d)) basis.push_back(std::move(m));
                group.push_back(std::move(d));
            }
            auto c = decode(coeffs.at(g), basis.size());
            factors.emplace_back(std::move(basis), std::move(c));
            groups.push_back(std::move(group));
        }
        std::optional<std::vector<T>> bias;
        if (j.contains("bias")) {
            const std::size_t n = static_cast<std::size_t>(factors.front().rows());
            bias = decode(j.at("bias"), n);
        }
        return std::make_unique<ProsumDenseLayer<T>>(
            std::move(groups), ProductOfSums<T>(std::move(factors), std::move(bias)));
    }
    if (kind == "conv2d_full") {
        const Index cin = j.at("cin").get<Index>();
        const Index cout = j.at("cout").get<Index>();
        const Index k = j.at("k").get<Index>();
        return std::make_unique<Conv2dFullLayer<T>>(
            cin, cout, k, decode(j.at("filters"), static_cast<std::size_t>(cout * cin * k * k)),
            decode(j.at("bias"), static_cast<std::size_t>(cout)));
    }
    if (kind == "sum_conv2d") {
        auto bank = BasisDescriptor::from_json(j.at("bank"));
        const Index cin = j.at("cin").get<Index>();
        const Index cout = j.at("cout").get<Index>();
        const Index k = j.at("k").get<Index>();
        return std::make_unique<SumConv2dLayer<T>>(
            std::move(bank), cin, cout, k,
            decode(j.at("coeffs"), static_cast<std::size_t>(j.at("bank").at("count").get<int>())),
            decode(j.at("bias"), static_cast<std::size_t>(cout)));
    }
    if (kind == "hadamard") {
        auto tuples = BasisDescriptor::from_json(j.at("tuples"));
        const std::size_t count = static_cast<std::size_t>(tuples.count);
        const std::size_t width = static_cast<std::size_t>(tuples.tuple_width);
        return std::make_unique<HadamardLayer<T>>(std::move(tuples),
                                                  decode(j.at("coeffs"), count),
                                                  decode(j.at("bias"), width));
    }
    if (kind == "fixed_linear") {
        return std::make_unique<FixedLinearLayer<T>>(BasisDescriptor::from_json(j.at("op")),
                                                     j.at("transposed").get<bool>(),
                                                     j.at("per_channel").get<bool>());
    }
    if (kind == "relu") return std::make_unique<ReluLayer<T>>();
    if (kind == "maxpool2x2") return std::make_unique<MaxPool2x2Layer<T>>();
    if (kind == "dropout")
        return std::make_unique<DropoutLayer<T>>(j.at("keep_prob").get<double>());
    if (kind == "flatten") return std::make_unique<FlattenLayer<T>>();
    if (kind == "reshape")
        return std::make_unique<ReshapeLayer<T>>(
            Shape3{j.at("c").get<Index>(), j.at("h").get<Index>(), j.at("w").get<Index>()});
    throw ParseError("unknown layer kind: " + kind);
}

template <typename T>
Network<T> Network<T>::from_json(const nlohmann::json& j) {
    const auto& shape = j.at("input_shape");
    Network<T> net(Shape3{shape.at(0).get<Index>(), shape.at(1).get<Index>(),
                          shape.at(2).get<Index>()},
                   j.at("class_count").get<Index>());
    for (const auto& lj : j.at("layers")) net.add(layer_from_json<T>(lj));
    net.finalize();
    return net;
}

// Accuracy of argmax predictions; eval mode, deterministic.
template <typename T>
double evaluate_accuracy(Network<T>& net, const Matrix<T>& images, const std::vector<int>& labels,
                         Index batch_size = 100) {
    if (images.cols() == 0 || labels.empty()) throw InvalidArgument("evaluate: empty dataset");
    if (static_cast<Index>(labels.size()) != images.cols())
        throw ShapeError("evaluate: label count != sample count");
    Index correct = 0;
    for (Index start = 0; start < images.cols(); start += batch_size) {
        const Index n = std::min(batch_size, images.cols() - start);
        Matrix<T> batch(images.rows(), n);
        for (Index i = 0; i < images.rows(); ++i)
            for (Index b = 0; b < n; ++b) batch(i, b) = images(i, start + b);
        auto logits = net.forward(batch, Mode::eval);
        auto pred = argmax_columns(logits);
        for (Index b = 0; b < n; ++b)
            if (pred[static_cast<std::size_t>(b)] == labels[static_cast<std::size_t>(start + b)])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(images.cols());
}

}  // namespace prosum
