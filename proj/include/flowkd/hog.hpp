#pragma once

#include <cmath>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/mat.hpp"

namespace flowkd {

// Histogram-of-oriented-gradients extractor over a cells x cells grid
// (2x2 by default). Gradients use centered [-1,0,1] filters with replicated
// borders, so constant images produce an all-zero feature and adding a
// constant to every pixel changes nothing. Orientations are unsigned by
// default (angle mod pi) with hard binning; the concatenated histogram is
// L2-normalized globally unless it is all zero.
struct HogSpec {
    int cells = 2;              // grid cells per side
    int orientation_bins = 9;
    bool signed_orientations = false;
    bool normalize = true;

    void validate() const {
        if (cells < 1) throw std::invalid_argument("hog: cells must be >= 1");
        if (orientation_bins < 2) throw std::invalid_argument("hog: need at least 2 orientation bins");
    }
    int feature_size() const { return cells * cells * orientation_bins; }
};

template <class T>
std::vector<T> hog_extract(const T* img, int H, int W, const HogSpec& spec) {
    spec.validate();
    if (H % spec.cells != 0 || W % spec.cells != 0)
        throw std::invalid_argument("hog: image dims must be divisible by the cell grid");
    const int bins = spec.orientation_bins;
    const double pi = 3.14159265358979323846;
    const double range = spec.signed_orientations ? 2 * pi : pi;
    const int ch = H / spec.cells, cw = W / spec.cells;

    std::vector<double> hist(static_cast<size_t>(spec.feature_size()), 0.0);
    auto px = [&](int y, int x) {
        y = std::min(std::max(y, 0), H - 1);
        x = std::min(std::max(x, 0), W - 1);
        return static_cast<double>(img[static_cast<size_t>(y) * W + x]);
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double gx = px(y, x + 1) - px(y, x - 1);
            const double gy = px(y + 1, x) - px(y - 1, x);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0) continue;
            double ang = std::atan2(gy, gx);
            if (spec.signed_orientations) {
                if (ang < 0) ang += 2 * pi;
            } else {
                if (ang < 0) ang += pi;
                if (ang >= pi) ang -= pi;
            }
            int bin = static_cast<int>(ang / range * bins);
            if (bin >= bins) bin = 0;
            const int cell = (y / ch) * spec.cells + (x / cw);
            hist[static_cast<size_t>(cell) * bins + bin] += mag;
        }

    if (spec.normalize) {
        double norm2 = 0;
        for (double h : hist) norm2 += h * h;
        if (norm2 > 0) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (double& h : hist) h *= inv;
        }
    }
    std::vector<T> out(hist.size());
    for (size_t i = 0; i < hist.size(); ++i) out[i] = static_cast<T>(hist[i]);
    return out;
}

// Rec. 601 luma conversion for 3-channel images.
template <class T>
std::vector<T> rgb_to_gray(const T* img, int H, int W) {
    std::vector<T> g(static_cast<size_t>(H) * W);
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t i = 0; i < plane; ++i)
        g[i] = static_cast<T>(0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i]);
    return g;
}

// HoG features for every image in a dataset; 3-channel inputs are converted
// to grayscale first.
template <class T>
Mat<T> hog_features(const Dataset<T>& ds, const HogSpec& spec) {
    if (ds.sample_shape.size() != 3)
        throw std::invalid_argument("hog: dataset is not image-shaped (C,H,W)");
    const int C = ds.sample_shape[0], H = ds.sample_shape[1], W = ds.sample_shape[2];
    if (C != 1 && C != 3) throw std::invalid_argument("hog: expected 1 or 3 channels");
    Mat<T> out(ds.n(), spec.feature_size());
    for (int i = 0; i < ds.n(); ++i) {
        std::vector<T> feat;
        if (C == 3) {
            auto gray = rgb_to_gray(ds.sample(i), H, W);
            feat = hog_extract(gray.data(), H, W, spec);
        } else {
            feat = hog_extract(ds.sample(i), H, W, spec);
        }
        std::copy(feat.begin(), feat.end(), out.row(i));
    }
    return out;
}

}  // namespace flowkd
