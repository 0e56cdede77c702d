#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "flowkd/errors.hpp"
#include "flowkd/mat.hpp"
#include "flowkd/rng.hpp"
#include "flowkd/tensor.hpp"

namespace flowkd {

struct LabelBatch {
    std::vector<int> labels;
    int num_classes = 0;

    int n() const { return static_cast<int>(labels.size()); }
    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("labels: need at least one class");
        for (int l : labels)
            if (l < 0 || l >= num_classes) throw std::invalid_argument("labels: class id out of range");
    }
};

enum class Split { Train, Test, Unlabeled };

// Sample container: images as {C,H,W} per sample or plain vectors as {d}.
template <class T>
struct Dataset {
    std::vector<int> sample_shape;
    std::vector<T> data;
    std::optional<LabelBatch> labels;
    Split split = Split::Train;

    int sample_size() const {
        int s = 1;
        for (int d : sample_shape) s *= d;
        return s;
    }
    int n() const { return sample_shape.empty() ? 0 : static_cast<int>(data.size()) / sample_size(); }
    const T* sample(int i) const { return data.data() + static_cast<size_t>(i) * sample_size(); }

    void validate() const {
        if (n() <= 0) throw DataError("dataset: empty");
        if (labels && labels->n() != n()) throw DataError("dataset: label count does not match sample count");
    }
};

// Gather samples by index into a batch tensor of shape {B, sample_shape...}.
template <class T>
TensorT<T> batch_tensor(const Dataset<T>& ds, const std::vector<int>& indices) {
    const int ss = ds.sample_size();
    std::vector<T> out(indices.size() * static_cast<size_t>(ss));
    for (size_t b = 0; b < indices.size(); ++b)
        std::copy_n(ds.sample(indices[b]), ss, out.data() + b * static_cast<size_t>(ss));
    std::vector<int> shape{static_cast<int>(indices.size())};
    shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
    return TensorT<T>::from_data(std::move(shape), std::move(out));
}

template <class T>
std::vector<int> batch_labels(const Dataset<T>& ds, const std::vector<int>& indices) {
    if (!ds.labels) throw DataError("dataset: labels required but absent");
    std::vector<int> out(indices.size());
    for (size_t b = 0; b < indices.size(); ++b) out[b] = ds.labels->labels[indices[b]];
    return out;
}

// ---------------------------------------------------------------------------
// synthetic clusters

// Gaussian clusters around fixed class centers. When classes <= dim the
// centers sit on scaled coordinate axes with exact pairwise distance
// `separation`; otherwise directions are drawn from the seed's center
// substream.
template <class T>
Dataset<T> make_blobs(int n_per_class, int classes, int dim, double sigma, uint64_t seed,
                      double separation = 4.0) {
    if (!(sigma > 0)) throw std::invalid_argument("make_blobs: sigma must be positive");
    if (n_per_class < 1 || classes < 1 || dim < 1)
        throw std::invalid_argument("make_blobs: counts must be positive");
    SplitRng split_rng(seed);
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim, 0.0));
    if (classes <= dim) {
        const double r = separation / std::sqrt(2.0);
        for (int c = 0; c < classes; ++c) centers[c][c] = r;
    } else {
        auto crng = split_rng.substream("blob-centers");
        for (int c = 0; c < classes; ++c) {
            double norm2 = 0;
            for (int k = 0; k < dim; ++k) {
                centers[c][k] = crng.normal();
                norm2 += centers[c][k] * centers[c][k];
            }
            const double inv = separation / std::max(std::sqrt(norm2), 1e-12);
            for (int k = 0; k < dim; ++k) centers[c][k] *= inv;
        }
    }
    Dataset<T> ds;
    ds.sample_shape = {dim};
    ds.data.reserve(static_cast<size_t>(n_per_class) * classes * dim);
    LabelBatch lb;
    lb.num_classes = classes;
    auto rng = split_rng.substream("blob-samples");
    for (int c = 0; c < classes; ++c)
        for (int k = 0; k < n_per_class; ++k) {
            for (int j = 0; j < dim; ++j)
                ds.data.push_back(static_cast<T>(centers[c][j] + sigma * rng.normal()));
            lb.labels.push_back(c);
        }
    ds.labels = std::move(lb);
    return ds;
}

// ---------------------------------------------------------------------------
// oriented-grating images (toy set for handcrafted-feature cloning)

// Grayscale sinusoidal gratings; class c fixes the orientation, phase is
// random per sample.
template <class T>
Dataset<T> make_gratings(int n_per_class, int classes, int size, double noise_sigma, uint64_t seed) {
    if (n_per_class < 1 || classes < 1 || size < 4)
        throw std::invalid_argument("make_gratings: bad dimensions");
    SplitRng split_rng(seed);
    auto rng = split_rng.substream("gratings");
    Dataset<T> ds;
    ds.sample_shape = {1, size, size};
    LabelBatch lb;
    lb.num_classes = classes;
    const double two_pi = 6.283185307179586476925286766559;
    const double freq = 2.0;
    for (int c = 0; c < classes; ++c) {
        const double theta = 3.14159265358979323846 * c / classes;
        const double dx = std::cos(theta), dy = std::sin(theta);
        for (int k = 0; k < n_per_class; ++k) {
            const double phase = rng.uniform_real01() * two_pi;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double u = (x * dx + y * dy) / size;
                    double v = 0.5 + 0.5 * std::sin(two_pi * freq * u + phase);
                    if (noise_sigma > 0) v += noise_sigma * rng.normal();
                    ds.data.push_back(static_cast<T>(v));
                }
            lb.labels.push_back(c);
        }
    }
    ds.labels = std::move(lb);
    return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format

namespace detail {

inline constexpr int kCifarRecordBytes = 3073;  // 1 label byte + 3*1024 pixels
inline constexpr int kCifarPixels = 3072;

struct RawCifar {
    std::vector<uint8_t> labels;
    std::vector<uint8_t> pixels;  // per record: 3072 bytes, CHW order
};

inline void read_cifar_file(const std::filesystem::path& path, RawCifar& out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cifar10: cannot open " + path.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<long long>(f.tellg());
    f.seekg(0);
    if (bytes <= 0 || bytes % kCifarRecordBytes != 0)
        throw DataError("cifar10: " + path.string() + " size is not a multiple of 3073 bytes");
    const auto records = bytes / kCifarRecordBytes;
    std::vector<uint8_t> buf(static_cast<size_t>(bytes));
    f.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (!f) throw DataError("cifar10: short read on " + path.string());
    for (long long r = 0; r < records; ++r) {
        const uint8_t* rec = buf.data() + static_cast<size_t>(r) * kCifarRecordBytes;
        if (rec[0] > 9) throw DataError("cifar10: label byte out of range in " + path.string());
        out.labels.push_back(rec[0]);
        out.pixels.insert(out.pixels.end(), rec + 1, rec + kCifarRecordBytes);
    }
}

// Deterministic stratified pick: per-class indices are shuffled by their own
// substream, the first k taken, and the result sorted ascending.
inline std::vector<int> stratified_pick(const std::vector<uint8_t>& labels, int per_class,
                                        const SplitRng& rng, const std::string& tag) {
    std::vector<int> chosen;
    for (int c = 0; c < 10; ++c) {
        std::vector<int> idx;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(static_cast<int>(i));
        if (static_cast<int>(idx.size()) < per_class)
            throw DataError("cifar10: class " + std::to_string(c) + " has only " +
                            std::to_string(idx.size()) + " samples, need " + std::to_string(per_class));
        auto r = rng.substream(tag, static_cast<uint64_t>(c));
        r.shuffle(idx);
        idx.resize(static_cast<size_t>(per_class));
        chosen.insert(chosen.end(), idx.begin(), idx.end());
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

template <class T>
Dataset<T> build_cifar_subset(const RawCifar& raw, const std::vector<int>& picked, Split split) {
    Dataset<T> ds;
    ds.sample_shape = {3, 32, 32};
    ds.split = split;
    ds.data.reserve(picked.size() * static_cast<size_t>(kCifarPixels));
    LabelBatch lb;
    lb.num_classes = 10;
    for (int i : picked) {
        const uint8_t* px = raw.pixels.data() + static_cast<size_t>(i) * kCifarPixels;
        for (int k = 0; k < kCifarPixels; ++k) ds.data.push_back(static_cast<T>(px[k] / 255.0));
        lb.labels.push_back(raw.labels[static_cast<size_t>(i)]);
    }
    ds.labels = std::move(lb);
    return ds;
}

}  // namespace detail

// Reads the standard 3073-byte-record batches (data_batch_*.bin,
// test_batch.bin), scales pixels to [0,1], and standardizes per channel with
// constants computed from the loaded training subset. subset_per_class <= 0
// loads everything; test_per_class < 0 mirrors subset_per_class.
template <class T>
std::pair<Dataset<T>, Dataset<T>> load_cifar10(const std::string& dir, int subset_per_class,
                                               uint64_t seed, int test_per_class = -1) {
    namespace fs = std::filesystem;
    detail::RawCifar train_raw, test_raw;
    int found = 0;
    for (int b = 1; b <= 5; ++b) {
        fs::path p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
        if (fs::exists(p)) {
            detail::read_cifar_file(p, train_raw);
            ++found;
        }
    }
    if (found == 0) throw DataError("cifar10: no data_batch_*.bin found in " + dir);
    fs::path tp = fs::path(dir) / "test_batch.bin";
    if (!fs::exists(tp)) throw DataError("cifar10: missing test_batch.bin in " + dir);
    detail::read_cifar_file(tp, test_raw);

    SplitRng rng(seed);
    std::vector<int> train_idx, test_idx;
    if (subset_per_class > 0) {
        train_idx = detail::stratified_pick(train_raw.labels, subset_per_class, rng, "cifar-train");
    } else {
        train_idx.resize(train_raw.labels.size());
        std::iota(train_idx.begin(), train_idx.end(), 0);
    }
    const int tpc = test_per_class < 0 ? subset_per_class : test_per_class;
    if (tpc > 0) {
        test_idx = detail::stratified_pick(test_raw.labels, tpc, rng, "cifar-test");
    } else {
        test_idx.resize(test_raw.labels.size());
        std::iota(test_idx.begin(), test_idx.end(), 0);
    }

    auto train = detail::build_cifar_subset<T>(train_raw, train_idx, Split::Train);
    auto test = detail::build_cifar_subset<T>(test_raw, test_idx, Split::Test);

    // Per-channel standardization constants from the training subset.
    const size_t chan = 1024;
    for (int c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        size_t cnt = 0;
        for (int i = 0; i < train.n(); ++i) {
            const T* px = train.sample(i) + static_cast<size_t>(c) * chan;
            for (size_t k = 0; k < chan; ++k) {
                s += px[k];
                s2 += static_cast<double>(px[k]) * px[k];
                ++cnt;
            }
        }
        const double mean = s / static_cast<double>(cnt);
        const double var = std::max(s2 / static_cast<double>(cnt) - mean * mean, 0.0);
        const double inv = 1.0 / std::max(std::sqrt(var), 1e-8);
        auto standardize = [&](Dataset<T>& ds) {
            for (int i = 0; i < ds.n(); ++i) {
                T* px = ds.data.data() + static_cast<size_t>(i) * ds.sample_size() + static_cast<size_t>(c) * chan;
                for (size_t k = 0; k < chan; ++k)
                    px[k] = static_cast<T>((px[k] - mean) * inv);
            }
        };
        standardize(train);
        standardize(test);
    }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// augmentation

struct AugmentSpec {
    double hflip_prob = 0.5;
    int crop_padding = 4;
    double rotation_deg = 0.0;  // off by default
    uint64_t seed = 0;

    void validate() const {
        if (hflip_prob < 0 || hflip_prob > 1) throw std::invalid_argument("augment: hflip_prob must be in [0,1]");
        if (crop_padding < 0) throw std::invalid_argument("augment: crop_padding must be >= 0");
        if (rotation_deg < 0) throw std::invalid_argument("augment: rotation_deg must be >= 0");
    }
    bool is_identity() const { return hflip_prob == 0 && crop_padding == 0 && rotation_deg == 0; }
};

namespace detail {

template <class T>
void hflip_inplace(T* img, int C, int H, int W) {
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y) {
            T* row = img + (static_cast<size_t>(c) * H + y) * W;
            std::reverse(row, row + W);
        }
}

// Crop an HxW window from the zero-padded canvas at offset (dy, dx).
template <class T>
void crop_from_padded(const T* src, T* dst, int C, int H, int W, int pad, int dy, int dx) {
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = y + dy - pad;
                const int sx = x + dx - pad;
                dst[(static_cast<size_t>(c) * H + y) * W + x] =
                    (sy >= 0 && sy < H && sx >= 0 && sx < W)
                        ? src[(static_cast<size_t>(c) * H + sy) * W + sx]
                        : T(0);
            }
}

// Bilinear rotation about the image center, zero outside.
template <class T>
void rotate_bilinear(const T* src, T* dst, int C, int H, int W, double angle_rad) {
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double ry = y - cy, rx = x - cx;
                const double sy = ca * ry - sa * rx + cy;
                const double sx = sa * ry + ca * rx + cx;
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                const double fy = sy - y0, fx = sx - x0;
                double acc = 0;
                for (int ky = 0; ky <= 1; ++ky)
                    for (int kx = 0; kx <= 1; ++kx) {
                        const int yy = y0 + ky, xx = x0 + kx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        const double w = (ky ? fy : 1 - fy) * (kx ? fx : 1 - fx);
                        acc += w * src[(static_cast<size_t>(c) * H + yy) * W + xx];
                    }
                dst[(static_cast<size_t>(c) * H + y) * W + x] = static_cast<T>(acc);
            }
}

}  // namespace detail

// Deterministic per (spec.seed, epoch, sample index); draw order within a
// sample is: flip u01, crop dy, crop dx, rotation angle.
template <class T>
std::vector<T> augment_sample(const T* img, int C, int H, int W, const AugmentSpec& spec,
                              int epoch, int index) {
    std::vector<T> out(img, img + static_cast<size_t>(C) * H * W);
    if (spec.is_identity()) return out;
    auto rng = SplitRng(spec.seed).substream("augment", static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(index));
    if (spec.hflip_prob > 0 && rng.uniform_real01() < spec.hflip_prob)
        detail::hflip_inplace(out.data(), C, H, W);
    if (spec.crop_padding > 0) {
        const int p = spec.crop_padding;
        const int dy = static_cast<int>(rng.uniform_u64_below(static_cast<uint64_t>(2 * p + 1)));
        const int dx = static_cast<int>(rng.uniform_u64_below(static_cast<uint64_t>(2 * p + 1)));
        std::vector<T> cropped(out.size());
        detail::crop_from_padded(out.data(), cropped.data(), C, H, W, p, dy, dx);
        out = std::move(cropped);
    }
    if (spec.rotation_deg > 0) {
        const double deg = rng.uniform_real(-spec.rotation_deg, spec.rotation_deg);
        std::vector<T> rotated(out.size());
        detail::rotate_bilinear(out.data(), rotated.data(), C, H, W, deg * 3.14159265358979323846 / 180.0);
        out = std::move(rotated);
    }
    return out;
}

// Batch gather with augmentation; image datasets only.
template <class T>
TensorT<T> augmented_batch(const Dataset<T>& ds, const std::vector<int>& indices,
                           const AugmentSpec& spec, int epoch) {
    if (ds.sample_shape.size() != 3)
        throw std::invalid_argument("augment: dataset is not image-shaped (C,H,W)");
    const int C = ds.sample_shape[0], H = ds.sample_shape[1], W = ds.sample_shape[2];
    const int ss = ds.sample_size();
    std::vector<T> out(indices.size() * static_cast<size_t>(ss));
    for (size_t b = 0; b < indices.size(); ++b) {
        auto aug = augment_sample(ds.sample(indices[b]), C, H, W, spec, epoch, indices[b]);
        std::copy(aug.begin(), aug.end(), out.data() + b * static_cast<size_t>(ss));
    }
    return TensorT<T>::from_data({static_cast<int>(indices.size()), C, H, W}, std::move(out));
}

}  // namespace flowkd
