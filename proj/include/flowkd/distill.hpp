#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/eval.hpp"
#include "flowkd/kernels.hpp"
#include "flowkd/optim.hpp"
#include "flowkd/represent.hpp"
#include "flowkd/rng.hpp"

namespace flowkd {

// Three-stage pipeline: a teacher (model or handcrafted extractor) feeds an
// auxiliary model via single-layer probability matching; the student then
// mimics the auxiliary layer by layer under an epoch-decayed weighting that
// emphasizes intermediate layers during the first training epochs.

enum class DistillMethod { Proposed, PktSingle, PktMulti, Hint, SoftLabel, None };

struct Supervision {
    enum class Kind { None, Contrastive, CrossEntropy };
    Kind kind = Kind::None;
    double margin = 1.0;    // contrastive
    double weight = 0.1;    // contrastive weight in the combined loss
};

struct DistillPlan {
    std::vector<std::pair<int, int>> pairs;  // (teacher point, student point); empty = one-to-one
    double alpha_init = 100.0;
    double gamma = 0.7;
    std::optional<std::vector<double>> alpha_override;  // fixed per-pair weights
    DistillMethod method = DistillMethod::Proposed;
    Supervision supervision;
    int kernel_degree = 1;
    double temperature = 2.0;  // soft-label baseline

    void validate() const {
        if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("plan: gamma must lie in (0,1)");
        if (!(alpha_init > 0)) throw std::invalid_argument("plan: alpha_init must be positive");
        if (kernel_degree < 1) throw std::invalid_argument("plan: kernel degree must be >= 1");
        if (alpha_override && alpha_override->size() != pairs.size())
            throw std::invalid_argument("plan: alpha override length must match pair count");
        const bool needs_pairs = method == DistillMethod::Proposed || method == DistillMethod::PktSingle ||
                                 method == DistillMethod::PktMulti || method == DistillMethod::Hint;
        if (needs_pairs && !pairs.empty()) {
            for (auto& [t, s] : pairs)
                if (t < 0 || s < 0) throw std::invalid_argument("plan: negative pair index");
        }
        (void)needs_pairs;
    }
};

// Weight of pair i at epoch k: the last transfer point keeps weight 1, every
// earlier one starts at alpha_init and decays by gamma each epoch.
inline double alpha_schedule(double alpha_init, double gamma, int layer, int epoch, int n_layers) {
    if (layer < 0 || layer >= n_layers) throw std::invalid_argument("alpha_schedule: layer out of range");
    if (layer == n_layers - 1) return 1.0;
    return alpha_init * std::pow(gamma, static_cast<double>(epoch));
}

inline double alpha_schedule(const DistillPlan& plan, int layer, int epoch, int n_layers) {
    return alpha_schedule(plan.alpha_init, plan.gamma, layer, epoch, n_layers);
}

// Effective weight for pair index i under the plan's method.
inline double pair_weight(const DistillPlan& plan, int pair_index, int epoch) {
    if (plan.alpha_override) return (*plan.alpha_override)[static_cast<size_t>(pair_index)];
    switch (plan.method) {
        case DistillMethod::Proposed:
            return alpha_schedule(plan, pair_index, epoch, static_cast<int>(plan.pairs.size()));
        default:
            return 1.0;
    }
}

// ---------------------------------------------------------------------------
// loss building blocks

// Row-wise log-softmax; the row max is subtracted as a constant (softmax is
// shift invariant, so the gradient is unaffected).
template <class T>
TensorT<T> log_softmax_rows(const TensorT<T>& logits) {
    if (logits.ndim() != 2) throw std::invalid_argument("log_softmax: expected N x C tensor");
    const int N = logits.dim(0), C = logits.dim(1);
    std::vector<T> neg_max(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) {
        T m = logits.value()[static_cast<size_t>(i) * C];
        for (int c = 1; c < C; ++c) m = std::max(m, logits.value()[static_cast<size_t>(i) * C + c]);
        neg_max[static_cast<size_t>(i)] = -m;
    }
    auto z = add_colvec(logits, TensorT<T>::from_data({N}, std::move(neg_max)));
    auto lse = log(row_sums(exp(z)));
    return add_colvec(z, neg(lse));
}

template <class T>
TensorT<T> cross_entropy_loss(const TensorT<T>& logits, const std::vector<int>& labels) {
    return neg(mean(pick_class(log_softmax_rows(logits), labels)));
}

// Temperature-scaled KL between teacher and student softmaxes, averaged over
// the batch and scaled by T^2.
template <class T>
TensorT<T> softlabel_loss(const Mat<T>& teacher_logits, const TensorT<T>& student_logits,
                          double temperature) {
    if (student_logits.ndim() != 2 || teacher_logits.rows != student_logits.dim(0) ||
        teacher_logits.cols != student_logits.dim(1))
        throw std::invalid_argument("softlabel: class count mismatch");
    const int N = teacher_logits.rows, C = teacher_logits.cols;
    Mat<T> pt(N, C);
    Mat<T> log_pt(N, C);
    for (int i = 0; i < N; ++i) {
        double m = teacher_logits.at(i, 0) / temperature;
        for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(teacher_logits.at(i, c)) / temperature);
        double s = 0;
        for (int c = 0; c < C; ++c) s += std::exp(static_cast<double>(teacher_logits.at(i, c)) / temperature - m);
        const double lse = m + std::log(s);
        for (int c = 0; c < C; ++c) {
            const double lp = static_cast<double>(teacher_logits.at(i, c)) / temperature - lse;
            log_pt.at(i, c) = static_cast<T>(lp);
            pt.at(i, c) = static_cast<T>(std::exp(lp));
        }
    }
    auto log_ps = log_softmax_rows(mul_scalar(student_logits, static_cast<T>(1.0 / temperature)));
    auto kl = sum(mul(TensorT<T>::from_mat(pt), sub(TensorT<T>::from_mat(log_pt), log_ps)));
    return mul_scalar(kl, static_cast<T>(temperature * temperature / N));
}

// Mean squared error between the (optionally projected) student batch and
// the teacher batch.
template <class T>
TensorT<T> hint_loss(const Mat<T>& teacher, const TensorT<T>& student, DenseLayer<T>* projection) {
    TensorT<T> s = student;
    if (projection) s = projection->forward(s, true);
    if (s.ndim() != 2 || s.dim(0) != teacher.rows || s.dim(1) != teacher.cols)
        throw std::invalid_argument("hint: dimension mismatch (projection required?)");
    auto diff = sub(s, TensorT<T>::from_mat(teacher));
    return mul_scalar(sum(mul(diff, diff)), static_cast<T>(1.0 / (static_cast<double>(teacher.rows) * teacher.cols)));
}

// Pairwise contrastive objective over aligned rows: d^2 for same-label
// pairs, max(0, margin - d)^2 for different-label pairs, mean over pairs.
template <class T>
TensorT<T> contrastive_loss(const TensorT<T>& a, const TensorT<T>& b, const std::vector<bool>& same,
                            double margin) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape() != b.shape())
        throw std::invalid_argument("contrastive: batch shape mismatch");
    const int P = a.dim(0);
    if (P == 0 || same.empty()) throw std::invalid_argument("contrastive: empty pair set");
    if (static_cast<int>(same.size()) != P) throw std::invalid_argument("contrastive: mask length mismatch");
    std::vector<T> pos_mask(static_cast<size_t>(P)), neg_mask(static_cast<size_t>(P));
    for (int i = 0; i < P; ++i) {
        pos_mask[static_cast<size_t>(i)] = same[static_cast<size_t>(i)] ? T(1) : T(0);
        neg_mask[static_cast<size_t>(i)] = same[static_cast<size_t>(i)] ? T(0) : T(1);
    }
    auto d = sub(a, b);
    auto d2 = row_sums(mul(d, d));
    auto dist = sqrt(add_scalar(d2, static_cast<T>(detail::kSqGuard)));
    auto hinge = relu(add_scalar(neg(dist), static_cast<T>(margin)));
    auto pos_term = mul(TensorT<T>::from_data({P}, std::move(pos_mask)), d2);
    auto neg_term = mul(TensorT<T>::from_data({P}, std::move(neg_mask)), mul(hinge, hinge));
    return mul_scalar(sum(add(pos_term, neg_term)), static_cast<T>(1.0 / P));
}

// Within-batch contrastive term: consecutive disjoint pairs (0,1), (2,3), ...
// with same/different decided by label equality.
template <class T>
TensorT<T> batch_contrastive(const TensorT<T>& embeddings, const std::vector<int>& labels,
                             double margin) {
    const int N = embeddings.dim(0);
    if (N < 2) throw std::invalid_argument("contrastive: need at least 2 samples");
    std::vector<int> ia, ib;
    std::vector<bool> same;
    for (int i = 0; i + 1 < N; i += 2) {
        ia.push_back(i);
        ib.push_back(i + 1);
        same.push_back(labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(i + 1)]);
    }
    return contrastive_loss(gather_rows(embeddings, ia), gather_rows(embeddings, ib), same, margin);
}

// ---------------------------------------------------------------------------
// combined distillation loss

template <class T>
struct DistillLossParts {
    TensorT<T> total;
    std::vector<double> kd_components;  // weighted, one per pair
    double kd_total = 0;
    double supervision = 0;
};

// Weighted sum of per-pair hybrid losses plus the configured supervision
// term. teacher_batches[i] pairs with student_batches[i] in plan order.
template <class T>
DistillLossParts<T> distill_loss(const DistillPlan& plan, const std::vector<Mat<T>>& teacher_batches,
                                 const std::vector<TensorT<T>>& student_batches, int epoch,
                                 const std::vector<int>* labels = nullptr,
                                 const TensorT<T>* student_logits = nullptr,
                                 const TensorT<T>* student_embedding = nullptr,
                                 const Mat<T>* teacher_logits = nullptr,
                                 DenseLayer<T>* hint_projection = nullptr) {
    plan.validate();
    DistillLossParts<T> parts;
    parts.total = TensorT<T>::scalar(T(0));

    const bool kd_pairs = plan.method == DistillMethod::Proposed ||
                          plan.method == DistillMethod::PktSingle ||
                          plan.method == DistillMethod::PktMulti;
    if (kd_pairs) {
        if (teacher_batches.size() != plan.pairs.size() || student_batches.size() != plan.pairs.size())
            throw std::invalid_argument("distill_loss: batch lists misaligned with plan pairs");
        if (plan.pairs.empty()) throw std::invalid_argument("distill_loss: plan has no pairs");
        for (size_t i = 0; i < plan.pairs.size(); ++i) {
            auto pair_loss = hybrid_layer_loss(teacher_batches[i], student_batches[i], plan.kernel_degree);
            if (!std::isfinite(static_cast<double>(pair_loss.item())))
                throw NumericError("non-finite KD loss at epoch " + std::to_string(epoch) + " for pair (" +
                                   std::to_string(plan.pairs[i].first) + "," +
                                   std::to_string(plan.pairs[i].second) + ")");
            const double w = pair_weight(plan, static_cast<int>(i), epoch);
            auto weighted = mul_scalar(pair_loss, static_cast<T>(w));
            parts.kd_components.push_back(static_cast<double>(weighted.item()));
            parts.kd_total += parts.kd_components.back();
            parts.total = add(parts.total, weighted);
        }
    } else if (plan.method == DistillMethod::Hint) {
        if (teacher_batches.size() != 1 || student_batches.size() != 1)
            throw std::invalid_argument("distill_loss: hint uses exactly one pair");
        auto l = hint_loss(teacher_batches[0], student_batches[0], hint_projection);
        parts.kd_components.push_back(static_cast<double>(l.item()));
        parts.kd_total = parts.kd_components.back();
        parts.total = add(parts.total, l);
    } else if (plan.method == DistillMethod::SoftLabel) {
        if (!teacher_logits || !student_logits)
            throw std::invalid_argument("distill_loss: soft-label method needs logits on both sides");
        auto l = softlabel_loss(*teacher_logits, *student_logits, plan.temperature);
        parts.kd_components.push_back(static_cast<double>(l.item()));
        parts.kd_total = parts.kd_components.back();
        parts.total = add(parts.total, l);
    }

    if (plan.supervision.kind == Supervision::Kind::CrossEntropy) {
        if (!labels || !student_logits)
            throw std::invalid_argument("distill_loss: cross-entropy supervision needs labels and a head");
        auto ce = cross_entropy_loss(*student_logits, *labels);
        parts.supervision = static_cast<double>(ce.item());
        parts.total = add(parts.total, ce);
    } else if (plan.supervision.kind == Supervision::Kind::Contrastive) {
        if (!labels || !student_embedding)
            throw std::invalid_argument("distill_loss: contrastive supervision needs labels and embeddings");
        auto c = mul_scalar(batch_contrastive(*student_embedding, *labels, plan.supervision.margin),
                            static_cast<T>(plan.supervision.weight));
        parts.supervision = static_cast<double>(c.item());
        parts.total = add(parts.total, c);
    }
    if (!std::isfinite(static_cast<double>(parts.total.item())))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    return parts;
}

// ---------------------------------------------------------------------------
// training loops

struct TrainOptions {
    int epochs = 25;
    int batch_size = 128;
    OptimizerConfig optimizer;
    uint64_t seed = 0;
    bool augment = false;
    AugmentSpec augment_spec;
    int eval_every = 1;
    int eval_top_k = 10;
    int threads = 1;
    bool freeze_params = false;  // diagnostic: compute and log losses, skip updates
};

struct EpochRow {
    int epoch = 0;
    double total_loss = 0;
    double kd_loss = 0;
    std::vector<double> kd_pairs;
    double supervision_loss = 0;
    double map_e = std::nan("");
    double map_c = std::nan("");
    double top_k = std::nan("");
    double accuracy = std::nan("");
    double wallclock_s = 0;
};

struct TrainState {
    std::vector<EpochRow> history;
    std::vector<double> step_losses;
    int epochs_completed = 0;
};

namespace detail {

// Full batches of size batch_size (clamped to n) over a shuffled index set;
// a trailing partial batch is dropped so the loss scale stays comparable.
inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    rng.shuffle(idx);
    const int b = std::min(batch_size, n);
    std::vector<std::vector<int>> batches;
    for (int lo = 0; lo + b <= n; lo += b)
        batches.emplace_back(idx.begin() + lo, idx.begin() + lo + b);
    return batches;
}

template <class T>
TensorT<T> make_input(const Dataset<T>& ds, const std::vector<int>& indices, const TrainOptions& opts,
                      int epoch) {
    if (opts.augment && ds.sample_shape.size() == 3)
        return augmented_batch(ds, indices, opts.augment_spec, epoch);
    return batch_tensor(ds, indices);
}

template <class T>
void eval_epoch(EpochRow& row, const LayerGraph<T>& model, const Dataset<T>& train,
                const Dataset<T>& test, const TrainOptions& opts) {
    auto db = collect_embeddings(model, train, opts.batch_size, opts.threads);
    auto queries = collect_embeddings(model, test, opts.batch_size, opts.threads);
    if (!train.labels || !test.labels) return;
    const int k = std::min(opts.eval_top_k, db.rows);
    auto rep = evaluate_retrieval(db, train.labels->labels, queries, test.labels->labels, k, opts.threads);
    row.map_e = rep.map_euclidean;
    row.map_c = rep.map_cosine;
    row.top_k = rep.topk_cosine;
    if (model.has_head()) row.accuracy = classification_accuracy(model, test, opts.batch_size);
}

}  // namespace detail

// Supervised cross-entropy training of a model with a classification head.
template <class T>
TrainState train_supervised(LayerGraph<T>& model, const Dataset<T>& train, const Dataset<T>& test,
                            const TrainOptions& opts,
                            const std::function<void(int, const LayerGraph<T>&)>& epoch_hook = {}) {
    if (!model.has_head()) throw std::invalid_argument("train_supervised: model has no classification head");
    if (!train.labels) throw DataError("train_supervised: dataset has no labels");
    train.validate();
    SplitRng rng(opts.seed);
    Optimizer<T> opt(opts.optimizer, model.parameters());
    TrainState state;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto shuffle_rng = rng.substream("shuffle", static_cast<uint64_t>(epoch));
        auto batches = detail::epoch_batches(train.n(), opts.batch_size, shuffle_rng);
        EpochRow row;
        row.epoch = epoch;
        for (auto& batch : batches) {
            auto input = detail::make_input(train, batch, opts, epoch);
            auto logits = as_rows(forward_collect(model, input, true).output);
            auto loss = cross_entropy_loss(logits, batch_labels(train, batch));
            opt.zero_grad();
            backward(loss);
            if (!opts.freeze_params) opt.step();
            const double l = static_cast<double>(loss.item());
            row.total_loss += l;
            state.step_losses.push_back(l);
        }
        if (!batches.empty()) row.total_loss /= static_cast<double>(batches.size());
        if (opts.eval_every > 0 && (epoch % opts.eval_every == 0 || epoch == opts.epochs - 1))
            detail::eval_epoch(row, model, train, test, opts);
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state.history.push_back(std::move(row));
        state.epochs_completed = epoch + 1;
        if (epoch_hook) epoch_hook(epoch, model);
    }
    return state;
}

// Single-layer probability matching from the teacher's exported
// representation into the auxiliary model's final transfer point.
template <class T>
TrainState train_auxiliary(const RepSource<T>& teacher, LayerGraph<T>& aux, const Dataset<T>& train,
                           const Dataset<T>& test, const TrainOptions& opts, int kernel_degree = 1,
                           const std::function<void(int, const LayerGraph<T>&)>& epoch_hook = {}) {
    if (aux.num_transfer_points() < 1) throw std::invalid_argument("train_auxiliary: no transfer points");
    train.validate();
    SplitRng rng(opts.seed);
    Optimizer<T> opt(opts.optimizer, aux.parameters());
    TrainState state;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto shuffle_rng = rng.substream("shuffle", static_cast<uint64_t>(epoch));
        auto batches = detail::epoch_batches(train.n(), opts.batch_size, shuffle_rng);
        EpochRow row;
        row.epoch = epoch;
        for (auto& batch : batches) {
            auto input = detail::make_input(train, batch, opts, epoch);
            auto teacher_rep = teacher.representations(input).back();
            auto reps = forward_collect(aux, input, true);
            auto loss = hybrid_layer_loss(teacher_rep, reps.transfer.back(), kernel_degree);
            if (!std::isfinite(static_cast<double>(loss.item())))
                throw NumericError("non-finite matching loss at epoch " + std::to_string(epoch));
            opt.zero_grad();
            backward(loss);
            if (!opts.freeze_params) opt.step();
            const double l = static_cast<double>(loss.item());
            row.total_loss += l;
            row.kd_loss += l;
            state.step_losses.push_back(l);
        }
        if (!batches.empty()) {
            row.total_loss /= static_cast<double>(batches.size());
            row.kd_loss /= static_cast<double>(batches.size());
        }
        row.kd_pairs = {row.kd_loss};
        if (opts.eval_every > 0 && (epoch % opts.eval_every == 0 || epoch == opts.epochs - 1))
            detail::eval_epoch(row, aux, train, test, opts);
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state.history.push_back(std::move(row));
        state.epochs_completed = epoch + 1;
        if (epoch_hook) epoch_hook(epoch, aux);
    }
    return state;
}

// Resolve plan pairs against a teacher source and student graph.
template <class T>
DistillPlan resolve_plan(DistillPlan plan, const RepSource<T>& teacher, const LayerGraph<T>& student) {
    plan.validate();
    const int tp = teacher.num_points();
    const int sp = student.num_transfer_points();
    switch (plan.method) {
        case DistillMethod::Proposed:
        case DistillMethod::PktMulti:
            if (plan.pairs.empty()) {
                if (tp != sp)
                    throw std::invalid_argument(
                        "plan: one-to-one matching needs equal transfer point counts (teacher " +
                        std::to_string(tp) + ", student " + std::to_string(sp) + ")");
                for (int i = 0; i < sp; ++i) plan.pairs.push_back({i, i});
            }
            break;
        case DistillMethod::PktSingle:
        case DistillMethod::Hint:
            if (plan.pairs.empty()) plan.pairs.push_back({tp - 1, sp - 1});
            if (plan.pairs.size() != 1)
                throw std::invalid_argument("plan: single-layer method takes exactly one pair");
            break;
        case DistillMethod::SoftLabel:
        case DistillMethod::None:
            plan.pairs.clear();
            break;
    }
    for (auto& [t, s] : plan.pairs)
        if (t >= tp || s >= sp) throw std::invalid_argument("plan: pair index out of range");
    return plan;
}

// Knowledge-distillation training of the student against a frozen source.
template <class T>
TrainState distill_student(const RepSource<T>& teacher, LayerGraph<T>& student, DistillPlan plan,
                           const Dataset<T>& train, const Dataset<T>& test, const TrainOptions& opts,
                           const std::function<void(int, const LayerGraph<T>&)>& epoch_hook = {}) {
    train.validate();
    plan = resolve_plan(plan, teacher, student);
    const bool needs_labels = plan.supervision.kind != Supervision::Kind::None;
    if (needs_labels && !train.labels) throw DataError("distill: supervision needs labels");
    if (plan.supervision.kind == Supervision::Kind::CrossEntropy && !student.has_head())
        throw std::invalid_argument("distill: cross-entropy supervision needs a classification head");
    if (plan.method == DistillMethod::SoftLabel) {
        if (!teacher.has_logits()) throw std::invalid_argument("distill: soft-label method needs teacher logits");
        if (!student.has_head()) throw std::invalid_argument("distill: soft-label method needs a student head");
    }

    SplitRng rng(opts.seed);
    auto params = student.parameters();

    // Hint projection: learned linear map, trained jointly, created only when
    // the paired dimensions differ.
    std::unique_ptr<DenseLayer<T>> projection;
    if (plan.method == DistillMethod::Hint) {
        std::vector<int> probe_idx{0, std::min(1, train.n() - 1)};
        auto probe = batch_tensor(train, probe_idx);
        const int td = teacher.representations(probe)[static_cast<size_t>(plan.pairs[0].first)].cols;
        const int sd = forward_collect(student, probe, false)
                           .transfer[static_cast<size_t>(plan.pairs[0].second)].dim(1);
        if (td != sd) {
            projection = std::make_unique<DenseLayer<T>>(td, sd);
            auto prng = rng.substream("hint-projection");
            projection->init(prng);
        }
    }
    if (projection) {
        std::vector<std::pair<std::string, TensorT<T>>> pp;
        projection->collect_params("projection", pp);
        for (auto& [name, p] : pp) params.push_back(p);
    }
    Optimizer<T> opt(opts.optimizer, params);

    TrainState state;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto shuffle_rng = rng.substream("shuffle", static_cast<uint64_t>(epoch));
        auto batches = detail::epoch_batches(train.n(), opts.batch_size, shuffle_rng);
        EpochRow row;
        row.epoch = epoch;
        row.kd_pairs.assign(plan.pairs.size(), 0.0);
        for (auto& batch : batches) {
            auto input = detail::make_input(train, batch, opts, epoch);
            auto all_teacher = teacher.representations(input);
            std::vector<Mat<T>> teacher_batches;
            for (auto& [t, s] : plan.pairs) teacher_batches.push_back(all_teacher[static_cast<size_t>(t)]);

            auto reps = forward_collect(student, input, true);
            std::vector<TensorT<T>> student_batches;
            for (auto& [t, s] : plan.pairs) student_batches.push_back(reps.transfer[static_cast<size_t>(s)]);

            std::vector<int> labels;
            if (train.labels) labels = batch_labels(train, batch);
            TensorT<T> logits;
            if (student.has_head()) logits = as_rows(reps.output);
            TensorT<T> embedding = reps.transfer.empty() ? as_rows(reps.output) : reps.transfer.back();
            Mat<T> teacher_logits;
            if (plan.method == DistillMethod::SoftLabel) teacher_logits = teacher.logits(input);

            auto parts = distill_loss(plan, teacher_batches, student_batches, epoch,
                                      train.labels ? &labels : nullptr,
                                      student.has_head() ? &logits : nullptr, &embedding,
                                      plan.method == DistillMethod::SoftLabel ? &teacher_logits : nullptr,
                                      projection.get());
            opt.zero_grad();
            backward(parts.total);
            if (!opts.freeze_params) opt.step();
            const double l = static_cast<double>(parts.total.item());
            row.total_loss += l;
            row.kd_loss += parts.kd_total;
            row.supervision_loss += parts.supervision;
            if (row.kd_pairs.size() < parts.kd_components.size())
                row.kd_pairs.resize(parts.kd_components.size(), 0.0);
            for (size_t i = 0; i < parts.kd_components.size(); ++i) row.kd_pairs[i] += parts.kd_components[i];
            state.step_losses.push_back(l);
        }
        if (!batches.empty()) {
            const double inv = 1.0 / static_cast<double>(batches.size());
            row.total_loss *= inv;
            row.kd_loss *= inv;
            row.supervision_loss *= inv;
            for (auto& v : row.kd_pairs) v *= inv;
        }
        if (opts.eval_every > 0 && (epoch % opts.eval_every == 0 || epoch == opts.epochs - 1))
            detail::eval_epoch(row, student, train, test, opts);
        row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state.history.push_back(std::move(row));
        state.epochs_completed = epoch + 1;
        if (epoch_hook) epoch_hook(epoch, student);
    }
    return state;
}

}  // namespace flowkd
