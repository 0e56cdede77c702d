#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/kernels.hpp"
#include "flowkd/represent.hpp"

namespace flowkd {

// Information-flow analysis: per-layer mutual-information estimates between
// representations and labels, the flow vectors built from them, the squared
// divergence between two flows, the layer matching that minimizes it, and a
// nearest-centroid probe of per-layer discriminativeness.

struct FlowVector {
    std::vector<double> omega;  // one MI estimate per transfer point
    std::string source;

    int size() const { return static_cast<int>(omega.size()); }
};

struct LayerMatching {
    std::vector<int> kappa;  // teacher transfer-point index per student point
};

// Quadratic mutual information from kernel information potentials:
//   V_in  = (1/N^2) sum_c sum_{i,j in c} K(x_i, x_j)
//   V_all = (1/N^2) (sum_c (N_c/N)^2) sum_{i,j} K(x_i, x_j)
//   V_btw = (1/N^2) sum_c (N_c/N) sum_{i in c} sum_j K(x_i, x_j)
//   QMI   = V_in + V_all - 2 V_btw
template <class T>
double qmi_estimate(const Mat<T>& reps, const LabelBatch& labels, const KernelKind& kernel) {
    const int n = reps.rows;
    if (n < 2) throw std::invalid_argument("qmi: need at least 2 samples");
    if (labels.n() != n) throw std::invalid_argument("qmi: label count mismatch");
    labels.validate();
    const int C = labels.num_classes;

    std::vector<int> class_count(static_cast<size_t>(C), 0);
    for (int l : labels.labels) ++class_count[static_cast<size_t>(l)];

    // Full kernel matrix including the diagonal.
    Mat<double> K(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double k = kernel_value(kernel, reps.row(i), reps.row(j), reps.cols);
            K.at(i, j) = k;
            K.at(j, i) = k;
        }

    double v_in = 0, total = 0, v_btw = 0;
    std::vector<double> row_total(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) row_total[static_cast<size_t>(i)] += K.at(i, j);
        total += row_total[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (labels.labels[i] == labels.labels[j]) v_in += K.at(i, j);

    double prior2 = 0;
    for (int c = 0; c < C; ++c) {
        const double pc = static_cast<double>(class_count[static_cast<size_t>(c)]) / n;
        prior2 += pc * pc;
    }
    for (int i = 0; i < n; ++i) {
        const double pc = static_cast<double>(class_count[static_cast<size_t>(labels.labels[i])]) / n;
        v_btw += pc * row_total[static_cast<size_t>(i)];
    }
    const double n2 = static_cast<double>(n) * n;
    return v_in / n2 + prior2 * total / n2 - 2.0 * v_btw / n2;
}

// MI per transfer point, averaged over fixed-size evaluation batches taken
// in dataset order. A trailing partial batch is kept when it still holds at
// least two samples.
template <class T>
FlowVector flow_vector(const LayerGraph<T>& graph, const Dataset<T>& ds, const KernelKind& kernel,
                       int batch_size = 128, int threads = 1) {
    if (graph.num_transfer_points() < 1)
        throw std::invalid_argument("flow_vector: model has no transfer points");
    if (!ds.labels) throw DataError("flow_vector: dataset has no labels");
    auto reps = collect_representations(graph, ds, all_indices(ds), batch_size, threads);

    FlowVector fv;
    fv.source = graph.arch_id;
    const int n = ds.n();
    for (auto& rep : reps) {
        double acc = 0;
        int batches = 0;
        for (int lo = 0; lo < n; lo += batch_size) {
            const int hi = std::min(lo + batch_size, n);
            if (hi - lo < 2) break;
            Mat<T> sub(hi - lo, rep.cols);
            std::copy(rep.v.begin() + static_cast<size_t>(lo) * rep.cols,
                      rep.v.begin() + static_cast<size_t>(hi) * rep.cols, sub.v.begin());
            LabelBatch lb;
            lb.num_classes = ds.labels->num_classes;
            lb.labels.assign(ds.labels->labels.begin() + lo, ds.labels->labels.begin() + hi);
            acc += qmi_estimate(sub, lb, kernel);
            ++batches;
        }
        if (batches == 0) throw DataError("flow_vector: dataset too small for one batch");
        fv.omega.push_back(acc / batches);
    }
    return fv;
}

// kappa[i] = argmin_j (omega_s[i] - omega_t[j])^2 with ties to the lowest j;
// the last student point always maps to the last teacher point.
inline LayerMatching match_layers(const FlowVector& student, const FlowVector& teacher) {
    if (student.size() < 1 || teacher.size() < 1)
        throw std::invalid_argument("match_layers: empty flow vector");
    LayerMatching m;
    m.kappa.resize(static_cast<size_t>(student.size()));
    for (int i = 0; i < student.size(); ++i) {
        if (i == student.size() - 1) {
            m.kappa[static_cast<size_t>(i)] = teacher.size() - 1;
            continue;
        }
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < teacher.size(); ++j) {
            const double d = (student.omega[static_cast<size_t>(i)] - teacher.omega[static_cast<size_t>(j)]) *
                             (student.omega[static_cast<size_t>(i)] - teacher.omega[static_cast<size_t>(j)]);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        m.kappa[static_cast<size_t>(i)] = best;
    }
    return m;
}

inline double flow_divergence(const FlowVector& student, const FlowVector& teacher,
                              const LayerMatching& matching) {
    if (static_cast<int>(matching.kappa.size()) != student.size())
        throw std::invalid_argument("flow_divergence: matching length mismatch");
    double d = 0;
    for (int i = 0; i < student.size(); ++i) {
        const int j = matching.kappa[static_cast<size_t>(i)];
        if (j < 0 || j >= teacher.size()) throw std::invalid_argument("flow_divergence: index out of range");
        const double diff = student.omega[static_cast<size_t>(i)] - teacher.omega[static_cast<size_t>(j)];
        d += diff * diff;
    }
    return d;
}

// Nearest-centroid classification accuracy: centroids from the train split,
// euclidean assignment on the test split, distance ties to the lowest class.
template <class T>
double ncc_probe(const Mat<T>& train_reps, const LabelBatch& train_labels, const Mat<T>& test_reps,
                 const LabelBatch& test_labels) {
    if (train_reps.rows != train_labels.n() || test_reps.rows != test_labels.n())
        throw std::invalid_argument("ncc: label count mismatch");
    if (train_reps.cols != test_reps.cols) throw std::invalid_argument("ncc: dimension mismatch");
    train_labels.validate();
    const int C = train_labels.num_classes;
    const int d = train_reps.cols;

    std::vector<std::vector<double>> centroid(static_cast<size_t>(C), std::vector<double>(d, 0.0));
    std::vector<int> count(static_cast<size_t>(C), 0);
    for (int i = 0; i < train_reps.rows; ++i) {
        const int c = train_labels.labels[i];
        ++count[static_cast<size_t>(c)];
        for (int k = 0; k < d; ++k) centroid[static_cast<size_t>(c)][k] += train_reps.at(i, k);
    }
    for (int c = 0; c < C; ++c) {
        if (count[static_cast<size_t>(c)] > 0)
            for (int k = 0; k < d; ++k) centroid[static_cast<size_t>(c)][k] /= count[static_cast<size_t>(c)];
    }
    for (int l : test_labels.labels)
        if (l >= C || count[static_cast<size_t>(l)] == 0)
            throw std::invalid_argument("ncc: test class absent from train split");

    int correct = 0;
    for (int i = 0; i < test_reps.rows; ++i) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < C; ++c) {
            if (count[static_cast<size_t>(c)] == 0) continue;
            double dist = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = test_reps.at(i, k) - centroid[static_cast<size_t>(c)][k];
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        if (best == test_labels.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / test_reps.rows;
}

}  // namespace flowkd
