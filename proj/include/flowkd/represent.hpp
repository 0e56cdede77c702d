#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/hog.hpp"
#include "flowkd/nn.hpp"
#include "flowkd/threads.hpp"

namespace flowkd {

// Extract value-only (untaped) representations from a model at every
// transfer point, for the given sample indices. Evaluation mode; batches are
// processed in deterministic chunks, optionally in parallel over chunks
// (disjoint row writes, so results are identical for any thread count).
template <class T>
std::vector<Mat<T>> collect_representations(const LayerGraph<T>& graph, const Dataset<T>& ds,
                                            const std::vector<int>& indices, int batch_size = 128,
                                            int threads = 1) {
    const int n = static_cast<int>(indices.size());
    const int num_tp = graph.num_transfer_points();
    std::vector<Mat<T>> reps(static_cast<size_t>(num_tp));
    if (n == 0) return reps;

    const int chunks = (n + batch_size - 1) / batch_size;
    // Size the outputs from the first chunk, then fill the rest.
    std::vector<int> widths(static_cast<size_t>(num_tp), 0);
    {
        std::vector<int> first(indices.begin(), indices.begin() + std::min(batch_size, n));
        auto fr = forward_collect(graph, batch_tensor(ds, first), false);
        for (int t = 0; t < num_tp; ++t) {
            widths[t] = fr.transfer[t].dim(1);
            reps[t] = Mat<T>(n, widths[t]);
            const auto& v = fr.transfer[t].value();
            std::copy(v.begin(), v.end(), reps[t].v.begin());
        }
    }
    parallel_for(chunks - 1, threads, [&](int ci) {
        const int c = ci + 1;
        const int lo = c * batch_size;
        const int hi = std::min(lo + batch_size, n);
        std::vector<int> part(indices.begin() + lo, indices.begin() + hi);
        auto fr = forward_collect(graph, batch_tensor(ds, part), false);
        for (int t = 0; t < num_tp; ++t) {
            const auto& v = fr.transfer[t].value();
            std::copy(v.begin(), v.end(), reps[t].v.begin() + static_cast<size_t>(lo) * widths[t]);
        }
    });
    return reps;
}

template <class T>
std::vector<int> all_indices(const Dataset<T>& ds) {
    std::vector<int> idx(static_cast<size_t>(ds.n()));
    for (int i = 0; i < ds.n(); ++i) idx[i] = i;
    return idx;
}

// Final-representation shortcut (last transfer point).
template <class T>
Mat<T> collect_embeddings(const LayerGraph<T>& graph, const Dataset<T>& ds, int batch_size = 128,
                          int threads = 1) {
    auto reps = collect_representations(graph, ds, all_indices(ds), batch_size, threads);
    if (reps.empty()) throw std::invalid_argument("collect_embeddings: model has no transfer points");
    return std::move(reps.back());
}

// ---------------------------------------------------------------------------
// knowledge sources for distillation: a frozen model or a handcrafted
// feature extractor.

template <class T>
class RepSource {
public:
    virtual ~RepSource() = default;
    // Representations for a batch tensor ({B,C,H,W} or {B,d}), one matrix per
    // exported point, outermost-first.
    virtual std::vector<Mat<T>> representations(const TensorT<T>& batch) const = 0;
    virtual int num_points() const = 0;
    // Classifier logits, when the source has a classification head.
    virtual bool has_logits() const { return false; }
    virtual Mat<T> logits(const TensorT<T>&) const {
        throw std::invalid_argument("source: no classification head");
    }
    virtual std::string describe() const = 0;
};

template <class T>
class ModelSource final : public RepSource<T> {
public:
    explicit ModelSource(const LayerGraph<T>& graph) : graph_(graph.clone()) {}
    explicit ModelSource(LayerGraph<T>&& graph) : graph_(std::move(graph)) {}

    std::vector<Mat<T>> representations(const TensorT<T>& batch) const override {
        auto fr = forward_collect(graph_, batch, false);
        std::vector<Mat<T>> out;
        out.reserve(fr.transfer.size());
        for (auto& t : fr.transfer) out.push_back(t.to_mat());
        return out;
    }
    int num_points() const override { return graph_.num_transfer_points(); }
    bool has_logits() const override { return graph_.has_head(); }
    Mat<T> logits(const TensorT<T>& batch) const override {
        if (!graph_.has_head()) throw std::invalid_argument("source: model has no classification head");
        return as_rows(forward(graph_, batch, -1, false)).to_mat();
    }
    std::string describe() const override { return "model:" + graph_.arch_id; }
    const LayerGraph<T>& graph() const { return graph_; }

private:
    LayerGraph<T> graph_;
};

template <class T>
class HogSource final : public RepSource<T> {
public:
    explicit HogSource(HogSpec spec) : spec_(spec) { spec_.validate(); }

    std::vector<Mat<T>> representations(const TensorT<T>& batch) const override {
        if (batch.ndim() != 4) throw std::invalid_argument("hog source: expected image batch");
        const int B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
        if (C != 1 && C != 3) throw std::invalid_argument("hog source: expected 1 or 3 channels");
        Mat<T> out(B, spec_.feature_size());
        const int ss = C * H * W;
        for (int i = 0; i < B; ++i) {
            const T* img = batch.value().data() + static_cast<size_t>(i) * ss;
            std::vector<T> feat;
            if (C == 3) {
                auto gray = rgb_to_gray(img, H, W);
                feat = hog_extract(gray.data(), H, W, spec_);
            } else {
                feat = hog_extract(img, H, W, spec_);
            }
            std::copy(feat.begin(), feat.end(), out.row(i));
        }
        return {std::move(out)};
    }
    int num_points() const override { return 1; }
    std::string describe() const override { return "hog"; }

private:
    HogSpec spec_;
};

}  // namespace flowkd
