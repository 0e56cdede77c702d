#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowkd/arch.hpp"
#include "flowkd/nn.hpp"

namespace flowkd {

// Versioned model container: magic, version, JSON header describing the
// graph, then raw little-endian float64 blobs for every named parameter and
// buffer in header order. Values are stored as doubles in both precision
// modes, so load(save(m)) reproduces m bit-exactly.

inline constexpr char kCheckpointMagic[4] = {'F', 'K', 'D', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

template <class T>
void write_block(std::ostream& os, const std::vector<T>& v) {
    for (T x : v) {
        const double d = static_cast<double>(x);
        os.write(reinterpret_cast<const char*>(&d), 8);
    }
}

template <class T>
void read_block(std::istream& is, std::vector<T>& v, size_t n) {
    v.resize(n);
    for (size_t i = 0; i < n; ++i) {
        double d = 0;
        is.read(reinterpret_cast<char*>(&d), 8);
        v[i] = static_cast<T>(d);
    }
}

}  // namespace detail

template <class T>
void save_model(const std::string& path, LayerGraph<T>& graph) {
    nlohmann::json header;
    header["format"] = "flowkd-model";
    header["arch"] = graph.arch_id;
    header["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
    header["input_shape"] = graph.input_shape;
    header["transfer_points"] = graph.transfer_points;
    header["head_layers"] = graph.head_layers;
    nlohmann::json layers = nlohmann::json::array();
    for (auto& l : graph.layers) layers.push_back({{"kind", l->kind()}, {"hyper", l->hyper()}});
    header["layers"] = layers;

    auto params = graph.named_parameters();
    auto buffers = graph.named_buffers();
    nlohmann::json pj = nlohmann::json::array(), bj = nlohmann::json::array();
    for (auto& [name, p] : params) pj.push_back({{"name", name}, {"size", p.numel()}});
    for (auto& [name, b] : buffers) bj.push_back({{"name", name}, {"size", b->size()}});
    header["params"] = pj;
    header["buffers"] = bj;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot write " + path);
    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);
    const std::string hs = header.dump();
    detail::write_u64(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& [name, p] : params) detail::write_block(os, p.value());
    for (auto& [name, b] : buffers) detail::write_block(os, *b);
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

template <class T>
LayerGraph<T> load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const uint64_t hlen = detail::read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw DataError("checkpoint: truncated header in " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: corrupt header in " + path + ": " + e.what());
    }

    LayerGraph<T> g;
    g.arch_id = header.value("arch", "");
    g.input_shape = header["input_shape"].get<std::vector<int>>();
    g.transfer_points = header["transfer_points"].get<std::vector<int>>();
    g.head_layers = header.value("head_layers", 0);
    for (auto& lj : header["layers"]) {
        const std::string kind = lj["kind"].get<std::string>();
        const auto hyper = lj["hyper"].get<std::vector<int>>();
        if (kind == "dense")
            g.layers.push_back(std::make_unique<DenseLayer<T>>(hyper.at(0), hyper.at(1)));
        else if (kind == "conv2d")
            g.layers.push_back(std::make_unique<Conv2dLayer<T>>(hyper.at(0), hyper.at(1), hyper.at(2), hyper.at(3)));
        else if (kind == "batchnorm")
            g.layers.push_back(std::make_unique<BatchNormLayer<T>>(hyper.at(0)));
        else if (kind == "relu")
            g.layers.push_back(std::make_unique<ReluLayer<T>>());
        else if (kind == "maxpool2")
            g.layers.push_back(std::make_unique<MaxPool2Layer<T>>());
        else if (kind == "gap")
            g.layers.push_back(std::make_unique<GlobalAvgPoolLayer<T>>());
        else if (kind == "flatten")
            g.layers.push_back(std::make_unique<FlattenLayer<T>>());
        else
            throw DataError("checkpoint: unknown layer kind '" + kind + "'");
    }
    g.validate();

    auto params = g.named_parameters();
    auto buffers = g.named_buffers();
    if (header["params"].size() != params.size() || header["buffers"].size() != buffers.size())
        throw DataError("checkpoint: parameter table mismatch in " + path);
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& pj = header["params"][i];
        if (pj["name"].get<std::string>() != params[i].first ||
            pj["size"].get<size_t>() != params[i].second.numel())
            throw DataError("checkpoint: parameter layout mismatch for " + params[i].first);
        std::vector<T> block;
        detail::read_block(is, block, params[i].second.numel());
        params[i].second.value_mut() = std::move(block);
    }
    for (size_t i = 0; i < buffers.size(); ++i) {
        const auto& bj = header["buffers"][i];
        if (bj["name"].get<std::string>() != buffers[i].first ||
            bj["size"].get<size_t>() != buffers[i].second->size())
            throw DataError("checkpoint: buffer layout mismatch for " + buffers[i].first);
        detail::read_block(is, *buffers[i].second, buffers[i].second->size());
    }
    if (!is) throw DataError("checkpoint: truncated data in " + path);
    return g;
}

inline std::string checkpoint_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    detail::read_u32(is);
    const uint64_t hlen = detail::read_u64(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw DataError("checkpoint: truncated header in " + path);
    return nlohmann::json::parse(hs).value("dtype", "f64");
}

}  // namespace flowkd
