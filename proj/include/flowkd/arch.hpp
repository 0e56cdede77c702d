#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowkd/nn.hpp"

namespace flowkd {

// Model registry. Two families with matching block structure and transfer
// points after each block, so every member pairs one-to-one with any other
// member of its family:
//
//   cnn1l/cnn1/cnn1a/cnn1h  3x [conv3x3-bn-relu-(pool|gap)] + dense embedding,
//                           widths scale x0.5 / x1 / x2 / x4
//   mlp1l/mlp1/mlp1a/mlp1h  3x [dense-relu] + dense embedding, same scaling
//
// The "a" member (double width) is the auxiliary-teacher size; "h" doubles
// it again. A classification head (dense with num_classes outputs) is
// appended when requested and is never a transfer point.

struct ArchSpec {
    std::string family;  // "cnn" or "mlp"
    int c1, c2, c3, embed;
};

inline const std::map<std::string, ArchSpec>& arch_registry() {
    static const std::map<std::string, ArchSpec> reg = {
        {"cnn1l", {"cnn", 4, 8, 16, 32}},   {"cnn1", {"cnn", 8, 16, 32, 64}},
        {"cnn1a", {"cnn", 16, 32, 64, 128}}, {"cnn1h", {"cnn", 32, 64, 128, 256}},
        {"mlp1l", {"mlp", 16, 16, 16, 8}},  {"mlp1", {"mlp", 32, 32, 32, 16}},
        {"mlp1a", {"mlp", 64, 64, 64, 32}}, {"mlp1h", {"mlp", 128, 128, 128, 64}},
    };
    return reg;
}

template <class T>
LayerGraph<T> make_arch(const std::string& id, const std::vector<int>& input_shape,
                        int num_classes = 0) {
    auto it = arch_registry().find(id);
    if (it == arch_registry().end()) throw std::invalid_argument("unknown architecture: " + id);
    const ArchSpec& a = it->second;

    LayerGraph<T> g;
    g.arch_id = id;
    g.input_shape = input_shape;
    if (a.family == "cnn") {
        if (input_shape.size() != 3)
            throw std::invalid_argument("architecture " + id + " expects C,H,W input");
        const int in_ch = input_shape[0];
        if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
            throw std::invalid_argument("architecture " + id + " needs spatial dims divisible by 4");
        g.layers.push_back(std::make_unique<Conv2dLayer<T>>(a.c1, in_ch, 3, 1));
        g.layers.push_back(std::make_unique<BatchNormLayer<T>>(a.c1));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.layers.push_back(std::make_unique<MaxPool2Layer<T>>());
        g.transfer_points.push_back(3);
        g.layers.push_back(std::make_unique<Conv2dLayer<T>>(a.c2, a.c1, 3, 1));
        g.layers.push_back(std::make_unique<BatchNormLayer<T>>(a.c2));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.layers.push_back(std::make_unique<MaxPool2Layer<T>>());
        g.transfer_points.push_back(7);
        g.layers.push_back(std::make_unique<Conv2dLayer<T>>(a.c3, a.c2, 3, 1));
        g.layers.push_back(std::make_unique<BatchNormLayer<T>>(a.c3));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.layers.push_back(std::make_unique<GlobalAvgPoolLayer<T>>());
        g.transfer_points.push_back(11);
        g.layers.push_back(std::make_unique<DenseLayer<T>>(a.embed, a.c3));
        g.transfer_points.push_back(12);
    } else {
        if (input_shape.size() != 1)
            throw std::invalid_argument("architecture " + id + " expects vector input");
        const int in_d = input_shape[0];
        g.layers.push_back(std::make_unique<DenseLayer<T>>(a.c1, in_d));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.transfer_points.push_back(1);
        g.layers.push_back(std::make_unique<DenseLayer<T>>(a.c2, a.c1));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.transfer_points.push_back(3);
        g.layers.push_back(std::make_unique<DenseLayer<T>>(a.c3, a.c2));
        g.layers.push_back(std::make_unique<ReluLayer<T>>());
        g.transfer_points.push_back(5);
        g.layers.push_back(std::make_unique<DenseLayer<T>>(a.embed, a.c3));
        g.transfer_points.push_back(6);
    }
    if (num_classes > 0) {
        g.layers.push_back(std::make_unique<DenseLayer<T>>(num_classes, a.embed));
        g.head_layers = 1;
    }
    g.validate();
    return g;
}

}  // namespace flowkd
