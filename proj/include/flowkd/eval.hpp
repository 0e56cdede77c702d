#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/kernels.hpp"
#include "flowkd/nn.hpp"
#include "flowkd/threads.hpp"

namespace flowkd {

// Retrieval evaluation: mean average precision over the full ranked database
// and top-K precision, under euclidean or cosine similarity. An item is
// relevant iff its label equals the query label; similarity ties are broken
// by database index.

enum class SimilarityMetric { Euclidean, Cosine };

template <class T>
struct RetrievalIndex {
    Mat<T> database;  // N x d
    std::vector<int> labels;
    SimilarityMetric metric = SimilarityMetric::Cosine;

    void validate() const {
        if (database.rows == 0) throw std::invalid_argument("retrieval: empty database");
        if (static_cast<int>(labels.size()) != database.rows)
            throw std::invalid_argument("retrieval: label count mismatch");
    }
};

namespace detail {

// Ranked database indices for one query, most similar first, ties by index.
template <class T>
std::vector<int> rank_database(const RetrievalIndex<T>& index, const T* query) {
    const int n = index.database.rows;
    const int d = index.database.cols;
    std::vector<double> score(static_cast<size_t>(n));
    if (index.metric == SimilarityMetric::Cosine) {
        for (int i = 0; i < n; ++i) score[static_cast<size_t>(i)] = cosine_kernel(index.database.row(i), query, d);
    } else {
        for (int i = 0; i < n; ++i) {
            double sq = 0;
            const T* row = index.database.row(i);
            for (int k = 0; k < d; ++k) {
                const double diff = static_cast<double>(row[k]) - query[k];
                sq += diff * diff;
            }
            score[static_cast<size_t>(i)] = -sq;
        }
    }
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
    });
    return order;
}

}  // namespace detail

template <class T>
double average_precision(const RetrievalIndex<T>& index, const T* query, int query_label) {
    auto order = detail::rank_database(index, query);
    int relevant_total = 0;
    for (int l : index.labels)
        if (l == query_label) ++relevant_total;
    if (relevant_total == 0) throw std::invalid_argument("retrieval: query label absent from database");
    double ap = 0;
    int hits = 0;
    for (size_t r = 0; r < order.size(); ++r) {
        if (index.labels[static_cast<size_t>(order[r])] == query_label) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return ap / relevant_total;
}

template <class T>
double map_score(const RetrievalIndex<T>& index, const Mat<T>& queries,
                 const std::vector<int>& query_labels, int threads = 1) {
    index.validate();
    if (queries.rows != static_cast<int>(query_labels.size()))
        throw std::invalid_argument("retrieval: query label count mismatch");
    if (queries.cols != index.database.cols)
        throw std::invalid_argument("retrieval: dimension mismatch");
    std::vector<double> ap(static_cast<size_t>(queries.rows));
    parallel_for(queries.rows, threads, [&](int q) {
        ap[static_cast<size_t>(q)] = average_precision(index, queries.row(q), query_labels[static_cast<size_t>(q)]);
    });
    double s = 0;
    for (double a : ap) s += a;
    return s / queries.rows;
}

template <class T>
double topk_precision(const RetrievalIndex<T>& index, const Mat<T>& queries,
                      const std::vector<int>& query_labels, int k, int threads = 1) {
    index.validate();
    if (k < 1 || k > index.database.rows)
        throw std::invalid_argument("retrieval: k must be in [1, database size]");
    if (queries.rows != static_cast<int>(query_labels.size()))
        throw std::invalid_argument("retrieval: query label count mismatch");
    std::vector<double> prec(static_cast<size_t>(queries.rows));
    parallel_for(queries.rows, threads, [&](int q) {
        auto order = detail::rank_database(index, queries.row(q));
        int hits = 0;
        for (int r = 0; r < k; ++r)
            if (index.labels[static_cast<size_t>(order[static_cast<size_t>(r)])] == query_labels[static_cast<size_t>(q)]) ++hits;
        prec[static_cast<size_t>(q)] = static_cast<double>(hits) / k;
    });
    double s = 0;
    for (double p : prec) s += p;
    return s / queries.rows;
}

// Argmax accuracy of a model with a classification head; logit ties resolve
// to the lowest class index.
template <class T>
double classification_accuracy(const LayerGraph<T>& graph, const Dataset<T>& ds, int batch_size = 128) {
    if (!graph.has_head()) throw std::invalid_argument("accuracy: model has no classification head");
    if (!ds.labels) throw DataError("accuracy: dataset has no labels");
    int correct = 0;
    const int n = ds.n();
    for (int lo = 0; lo < n; lo += batch_size) {
        const int hi = std::min(lo + batch_size, n);
        std::vector<int> idx(static_cast<size_t>(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        auto logits = as_rows(forward(graph, batch_tensor(ds, idx), -1, false));
        const int C = logits.dim(1);
        for (int b = 0; b < hi - lo; ++b) {
            int best = 0;
            T best_v = logits.value()[static_cast<size_t>(b) * C];
            for (int c = 1; c < C; ++c) {
                const T v = logits.value()[static_cast<size_t>(b) * C + c];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            if (best == ds.labels->labels[static_cast<size_t>(lo + b)]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

struct RetrievalReport {
    double map_euclidean = 0;
    double map_cosine = 0;
    double topk_euclidean = 0;
    double topk_cosine = 0;
    int k = 0;
    double accuracy = std::nan("");  // only when the model has a head
};

// Full protocol: train split is the database, test split queries it.
template <class T>
RetrievalReport evaluate_retrieval(const Mat<T>& db, const std::vector<int>& db_labels,
                                   const Mat<T>& queries, const std::vector<int>& query_labels,
                                   int k, int threads = 1) {
    RetrievalReport rep;
    rep.k = k;
    RetrievalIndex<T> index{db, db_labels, SimilarityMetric::Euclidean};
    rep.map_euclidean = map_score(index, queries, query_labels, threads);
    rep.topk_euclidean = topk_precision(index, queries, query_labels, k, threads);
    index.metric = SimilarityMetric::Cosine;
    rep.map_cosine = map_score(index, queries, query_labels, threads);
    rep.topk_cosine = topk_precision(index, queries, query_labels, k, threads);
    return rep;
}

}  // namespace flowkd
