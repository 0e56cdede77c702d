#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flowkd/nn_ops.hpp"
#include "flowkd/rng.hpp"
#include "flowkd/tensor.hpp"

namespace flowkd {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// A model is an ordered list of layers plus the indices whose outputs are
// exported as representations (transfer points). A trailing classification
// head, when present, sits after the last transfer point.

template <class T>
struct Layer {
    virtual ~Layer() = default;
    virtual TensorT<T> forward(const TensorT<T>& x, bool training) = 0;
    virtual void collect_params(const std::string& prefix,
                                std::vector<std::pair<std::string, TensorT<T>>>& out) {}
    virtual void collect_buffers(const std::string& prefix,
                                 std::vector<std::pair<std::string, std::vector<T>*>>& out) {}
    virtual std::string kind() const = 0;
    virtual std::vector<int> hyper() const { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual void init(Rng&) {}
};

template <class T>
struct DenseLayer final : Layer<T> {
    int out_features, in_features;
    TensorT<T> weight;  // {out, in}
    TensorT<T> bias;    // {out}

    DenseLayer(int out_f, int in_f)
        : out_features(out_f), in_features(in_f),
          weight(TensorT<T>::zeros({out_f, in_f}, true)),
          bias(TensorT<T>::zeros({out_f}, true)) {}

    TensorT<T> forward(const TensorT<T>& x, bool) override {
        return add_rowvec(matmul_nt(x, weight), bias);
    }
    void collect_params(const std::string& p, std::vector<std::pair<std::string, TensorT<T>>>& out) override {
        out.push_back({p + ".weight", weight});
        out.push_back({p + ".bias", bias});
    }
    std::string kind() const override { return "dense"; }
    std::vector<int> hyper() const override { return {out_features, in_features}; }
    std::unique_ptr<Layer<T>> clone() const override {
        auto c = std::make_unique<DenseLayer>(out_features, in_features);
        c->weight.value_mut() = weight.value();
        c->bias.value_mut() = bias.value();
        return c;
    }
    void init(Rng& rng) override {
        const double s = std::sqrt(2.0 / in_features);
        for (auto& w : weight.value_mut()) w = static_cast<T>(rng.normal() * s);
        for (auto& b : bias.value_mut()) b = T(0);
    }
};

template <class T>
struct Conv2dLayer final : Layer<T> {
    int out_ch, in_ch, ksize, stride;
    TensorT<T> weight;  // {OC, IC, K, K}
    TensorT<T> bias;    // {OC}

    Conv2dLayer(int oc, int ic, int k, int s)
        : out_ch(oc), in_ch(ic), ksize(k), stride(s),
          weight(TensorT<T>::zeros({oc, ic, k, k}, true)),
          bias(TensorT<T>::zeros({oc}, true)) {}

    TensorT<T> forward(const TensorT<T>& x, bool) override {
        return conv2d(x, weight, bias, stride);
    }
    void collect_params(const std::string& p, std::vector<std::pair<std::string, TensorT<T>>>& out) override {
        out.push_back({p + ".weight", weight});
        out.push_back({p + ".bias", bias});
    }
    std::string kind() const override { return "conv2d"; }
    std::vector<int> hyper() const override { return {out_ch, in_ch, ksize, stride}; }
    std::unique_ptr<Layer<T>> clone() const override {
        auto c = std::make_unique<Conv2dLayer>(out_ch, in_ch, ksize, stride);
        c->weight.value_mut() = weight.value();
        c->bias.value_mut() = bias.value();
        return c;
    }
    void init(Rng& rng) override {
        const double s = std::sqrt(2.0 / (in_ch * ksize * ksize));
        for (auto& w : weight.value_mut()) w = static_cast<T>(rng.normal() * s);
        for (auto& b : bias.value_mut()) b = T(0);
    }
};

template <class T>
struct ReluLayer final : Layer<T> {
    TensorT<T> forward(const TensorT<T>& x, bool) override { return relu(x); }
    std::string kind() const override { return "relu"; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReluLayer>(); }
};

// Batchnorm over channels of an NCHW tensor. Training mode normalizes by the
// batch statistics (biased variance) and updates the running estimates; eval
// mode uses the running estimates as constants.
template <class T>
struct BatchNormLayer final : Layer<T> {
    int channels;
    TensorT<T> gamma, beta;
    std::vector<T> running_mean, running_var;

    explicit BatchNormLayer(int ch)
        : channels(ch),
          gamma(TensorT<T>::full({ch}, T(1), true)),
          beta(TensorT<T>::zeros({ch}, true)),
          running_mean(ch, T(0)), running_var(ch, T(1)) {}

    TensorT<T> forward(const TensorT<T>& x, bool training) override {
        if (training) {
            auto mu = channel_mean(x);
            auto xc = add_chan(x, neg(mu));
            auto var = channel_mean(mul(xc, xc));
            auto inv_std = pow_scalar(add_scalar(var, static_cast<T>(kBnEps)), -0.5);
            auto xhat = mul_chan(xc, inv_std);
            const T m = static_cast<T>(kBnMomentum);
            for (int c = 0; c < channels; ++c) {
                running_mean[c] = (T(1) - m) * running_mean[c] + m * mu.value()[c];
                running_var[c] = (T(1) - m) * running_var[c] + m * var.value()[c];
            }
            return add_chan(mul_chan(xhat, gamma), beta);
        }
        std::vector<T> nm(channels), inv(channels);
        for (int c = 0; c < channels; ++c) {
            nm[c] = -running_mean[c];
            inv[c] = T(1) / std::sqrt(running_var[c] + static_cast<T>(kBnEps));
        }
        auto xc = add_chan(x, TensorT<T>::from_data({channels}, std::move(nm)));
        auto xhat = mul_chan(xc, TensorT<T>::from_data({channels}, std::move(inv)));
        return add_chan(mul_chan(xhat, gamma), beta);
    }
    void collect_params(const std::string& p, std::vector<std::pair<std::string, TensorT<T>>>& out) override {
        out.push_back({p + ".gamma", gamma});
        out.push_back({p + ".beta", beta});
    }
    void collect_buffers(const std::string& p, std::vector<std::pair<std::string, std::vector<T>*>>& out) override {
        out.push_back({p + ".running_mean", &running_mean});
        out.push_back({p + ".running_var", &running_var});
    }
    std::string kind() const override { return "batchnorm"; }
    std::vector<int> hyper() const override { return {channels}; }
    std::unique_ptr<Layer<T>> clone() const override {
        auto c = std::make_unique<BatchNormLayer>(channels);
        c->gamma.value_mut() = gamma.value();
        c->beta.value_mut() = beta.value();
        c->running_mean = running_mean;
        c->running_var = running_var;
        return c;
    }
};

template <class T>
struct MaxPool2Layer final : Layer<T> {
    TensorT<T> forward(const TensorT<T>& x, bool) override { return maxpool2(x); }
    std::string kind() const override { return "maxpool2"; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2Layer>(); }
};

template <class T>
struct GlobalAvgPoolLayer final : Layer<T> {
    TensorT<T> forward(const TensorT<T>& x, bool) override { return global_avg_pool(x); }
    std::string kind() const override { return "gap"; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPoolLayer>(); }
};

template <class T>
struct FlattenLayer final : Layer<T> {
    TensorT<T> forward(const TensorT<T>& x, bool) override {
        int rest = 1;
        for (int i = 1; i < x.ndim(); ++i) rest *= x.dim(i);
        return reshape(x, {x.dim(0), rest});
    }
    std::string kind() const override { return "flatten"; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FlattenLayer>(); }
};

// ---------------------------------------------------------------------------

template <class T>
struct LayerGraph {
    std::string arch_id;              // registry name, informational
    std::vector<int> input_shape;     // per-sample shape, e.g. {C,H,W} or {d}
    std::vector<std::unique_ptr<Layer<T>>> layers;
    std::vector<int> transfer_points;
    int head_layers = 0;              // trailing layers excluded from representations

    LayerGraph() = default;
    LayerGraph(LayerGraph&&) = default;
    LayerGraph& operator=(LayerGraph&&) = default;

    LayerGraph clone() const {
        LayerGraph g;
        g.arch_id = arch_id;
        g.input_shape = input_shape;
        g.transfer_points = transfer_points;
        g.head_layers = head_layers;
        for (const auto& l : layers) g.layers.push_back(l->clone());
        return g;
    }

    int num_transfer_points() const { return static_cast<int>(transfer_points.size()); }
    bool has_head() const { return head_layers > 0; }

    void validate() const {
        const int body_last = static_cast<int>(layers.size()) - 1 - head_layers;
        for (size_t i = 0; i < transfer_points.size(); ++i) {
            if (i > 0 && transfer_points[i] <= transfer_points[i - 1])
                throw std::invalid_argument("graph: transfer points must be strictly increasing");
            if (transfer_points[i] < 0 || transfer_points[i] > body_last)
                throw std::invalid_argument("graph: transfer point out of range");
        }
        if (!transfer_points.empty() && transfer_points.back() != body_last)
            throw std::invalid_argument("graph: last transfer point must be the final representation layer");
    }

    void check_input(const TensorT<T>& x) const {
        if (x.ndim() != static_cast<int>(input_shape.size()) + 1)
            throw std::invalid_argument("forward: input rank mismatch");
        for (size_t i = 0; i < input_shape.size(); ++i)
            if (x.dim(static_cast<int>(i) + 1) != input_shape[i])
                throw std::invalid_argument("forward: input shape mismatch");
    }

    std::vector<std::pair<std::string, TensorT<T>>> named_parameters() const {
        std::vector<std::pair<std::string, TensorT<T>>> out;
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i]->collect_params("l" + std::to_string(i), out);
        return out;
    }

    std::vector<TensorT<T>> parameters() const {
        std::vector<TensorT<T>> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i]->collect_buffers("l" + std::to_string(i), out);
        return out;
    }

    void init(Rng& rng) {
        for (auto& l : layers) l->init(rng);
    }
};

template <class T>
TensorT<T> as_rows(const TensorT<T>& x) {
    if (x.ndim() == 2) return x;
    int rest = 1;
    for (int i = 1; i < x.ndim(); ++i) rest *= x.dim(i);
    return reshape(x, {x.dim(0), rest});
}

// Activation at layer index `upto` (inclusive); upto = -1 runs all layers.
template <class T>
TensorT<T> forward(const LayerGraph<T>& graph, const TensorT<T>& input, int upto = -1, bool training = false) {
    graph.check_input(input);
    const int last = upto < 0 ? static_cast<int>(graph.layers.size()) - 1 : upto;
    if (last >= static_cast<int>(graph.layers.size()))
        throw std::invalid_argument("forward: layer index out of range");
    TensorT<T> x = input;
    for (int i = 0; i <= last; ++i) {
        x = graph.layers[static_cast<size_t>(i)]->forward(x, training);
        if (!x.all_finite())
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                               graph.layers[static_cast<size_t>(i)]->kind() + ")");
    }
    return x;
}

template <class T>
struct ForwardReps {
    std::vector<TensorT<T>> transfer;  // flattened to {N, d}, one per transfer point
    TensorT<T> output;                 // last layer output (logits when a head exists)
};

// One pass collecting every transfer-point representation on a shared tape.
template <class T>
ForwardReps<T> forward_collect(const LayerGraph<T>& graph, const TensorT<T>& input, bool training = false) {
    graph.check_input(input);
    ForwardReps<T> reps;
    TensorT<T> x = input;
    size_t next_tp = 0;
    for (size_t i = 0; i < graph.layers.size(); ++i) {
        x = graph.layers[i]->forward(x, training);
        if (!x.all_finite())
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                               graph.layers[i]->kind() + ")");
        while (next_tp < graph.transfer_points.size() &&
               graph.transfer_points[next_tp] == static_cast<int>(i)) {
            reps.transfer.push_back(as_rows(x));
            ++next_tp;
        }
    }
    reps.output = x;
    if (graph.layers.empty()) reps.output = input;
    return reps;
}

}  // namespace flowkd
