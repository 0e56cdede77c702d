#pragma once

// Brute-force reference implementations used only by tests. These are kept
// deliberately naive (explicit loops, no shared code with the library paths
// they check) so they can serve as independent oracles.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flowkd/mat.hpp"

namespace oracle {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> row_of(const flowkd::Mat<double>& m, int i) {
    return std::vector<double>(m.row(i), m.row(i) + m.cols);
}

inline double cosine_kernel(const std::vector<double>& a, const std::vector<double>& b) {
    return 0.5 * (dot(a, b) / ((norm(a) + 1e-8) * (norm(b) + 1e-8)) + 1.0);
}

inline double tstudent_kernel(const std::vector<double>& a, const std::vector<double>& b, int degree) {
    double sq = 0;
    for (size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    double p = 1.0;
    const double d = std::sqrt(sq);
    for (int k = 0; k < degree; ++k) p *= d;
    return 1.0 / (1.0 + p);
}

inline double kernel(bool cosine, int degree, const std::vector<double>& a, const std::vector<double>& b) {
    return cosine ? cosine_kernel(a, b) : tstudent_kernel(a, b, degree);
}

// Two-loop conditional probability matrix: kernels, zero diagonal, column
// normalization over i != j, floor at 1e-7, renormalize.
inline flowkd::Mat<double> cond_prob(const flowkd::Mat<double>& x, bool cosine, int degree = 1) {
    const int n = x.rows;
    flowkd::Mat<double> p(n, n, 0.0);
    for (int j = 0; j < n; ++j) {
        double colsum = 0;
        for (int i = 0; i < n; ++i) {
            if (i == j) continue;
            colsum += kernel(cosine, degree, row_of(x, i), row_of(x, j));
        }
        for (int i = 0; i < n; ++i) {
            if (i == j) continue;
            p.at(i, j) = kernel(cosine, degree, row_of(x, i), row_of(x, j)) / colsum;
            if (p.at(i, j) < 1e-7) p.at(i, j) = 1e-7;
        }
        double renorm = 0;
        for (int i = 0; i < n; ++i)
            if (i != j) renorm += p.at(i, j);
        for (int i = 0; i < n; ++i)
            if (i != j) p.at(i, j) /= renorm;
    }
    return p;
}

inline double jeffreys(const flowkd::Mat<double>& a, const flowkd::Mat<double>& b) {
    double s = 0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) {
            if (i == j) continue;
            s += (a.at(i, j) - b.at(i, j)) * (std::log(a.at(i, j)) - std::log(b.at(i, j)));
        }
    return s;
}

// Triple-loop QMI from information potentials.
inline double qmi(const flowkd::Mat<double>& x, const std::vector<int>& labels, int classes,
                  bool cosine, int degree = 1) {
    const int n = x.rows;
    const double n2 = static_cast<double>(n) * n;
    double v_in = 0, v_all = 0, v_btw = 0;
    for (int c = 0; c < classes; ++c) {
        int nc = 0;
        for (int l : labels)
            if (l == c) ++nc;
        if (nc == 0) continue;
        const double pc = static_cast<double>(nc) / n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double k = kernel(cosine, degree, row_of(x, i), row_of(x, j));
                if (labels[i] == c && labels[j] == c) v_in += k / n2;
                v_all += pc * pc * k / n2;
                if (labels[i] == c) v_btw += pc * k / n2;
            }
    }
    return v_in + v_all - 2.0 * v_btw;
}

inline double flow_divergence(const std::vector<double>& ws, const std::vector<double>& wt,
                              const std::vector<int>& kappa) {
    double s = 0;
    for (size_t i = 0; i < ws.size(); ++i) s += (ws[i] - wt[kappa[i]]) * (ws[i] - wt[kappa[i]]);
    return s;
}

inline std::vector<int> match_layers(const std::vector<double>& ws, const std::vector<double>& wt) {
    std::vector<int> kappa(ws.size());
    for (size_t i = 0; i < ws.size(); ++i) {
        if (i + 1 == ws.size()) {
            kappa[i] = static_cast<int>(wt.size()) - 1;
            break;
        }
        int best = 0;
        double bd = (ws[i] - wt[0]) * (ws[i] - wt[0]);
        for (size_t j = 1; j < wt.size(); ++j) {
            const double d = (ws[i] - wt[j]) * (ws[i] - wt[j]);
            if (d < bd) {
                bd = d;
                best = static_cast<int>(j);
            }
        }
        kappa[i] = best;
    }
    return kappa;
}

// Exhaustive ranked-list average precision; ties by database index, relevance
// by exact label match.
inline double average_precision(const flowkd::Mat<double>& db, const std::vector<int>& db_labels,
                                const std::vector<double>& q, int q_label, bool cosine) {
    const int n = db.rows;
    std::vector<std::pair<double, int>> scored;
    for (int i = 0; i < n; ++i) {
        double s;
        if (cosine) {
            s = cosine_kernel(row_of(db, i), q);
        } else {
            double sq = 0;
            for (int k = 0; k < db.cols; ++k) sq += (db.at(i, k) - q[k]) * (db.at(i, k) - q[k]);
            s = -sq;
        }
        scored.push_back({s, i});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    int total_rel = 0;
    for (int l : db_labels)
        if (l == q_label) ++total_rel;
    double ap = 0;
    int hits = 0;
    for (int r = 0; r < n; ++r) {
        if (db_labels[scored[static_cast<size_t>(r)].second] == q_label) {
            ++hits;
            ap += static_cast<double>(hits) / (r + 1);
        }
    }
    return ap / total_rel;
}

inline double topk(const flowkd::Mat<double>& db, const std::vector<int>& db_labels,
                   const std::vector<double>& q, int q_label, int k, bool cosine) {
    const int n = db.rows;
    std::vector<std::pair<double, int>> scored;
    for (int i = 0; i < n; ++i) {
        double s;
        if (cosine) {
            s = cosine_kernel(row_of(db, i), q);
        } else {
            double sq = 0;
            for (int kk = 0; kk < db.cols; ++kk) sq += (db.at(i, kk) - q[kk]) * (db.at(i, kk) - q[kk]);
            s = -sq;
        }
        scored.push_back({s, i});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    int hits = 0;
    for (int r = 0; r < k; ++r)
        if (db_labels[scored[static_cast<size_t>(r)].second] == q_label) ++hits;
    return static_cast<double>(hits) / k;
}

}  // namespace oracle
