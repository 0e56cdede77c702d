#pragma once

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "flowkd/arch.hpp"
#include "flowkd/checkpoint.hpp"
#include "flowkd/config.hpp"
#include "flowkd/csv.hpp"
#include "flowkd/distill.hpp"
#include "flowkd/eval.hpp"
#include "flowkd/infoflow.hpp"

namespace flowkd::cli {

// Commands validate and load everything first, then create the output
// directory and write results, so an invalid run never leaves partial
// outputs behind.

template <class T>
struct LoadedData {
    Dataset<T> train;
    Dataset<T> test;
};

template <class T>
LoadedData<T> build_datasets(const RunConfig& cfg) {
    const SplitRng rng(cfg.seed);
    const auto& d = cfg.dataset;
    if (d.type == "blobs") {
        return {make_blobs<T>(d.n_per_class, d.classes, d.dim, d.sigma,
                              rng.substream_seed("data-train"), d.separation),
                make_blobs<T>(d.test_per_class, d.classes, d.dim, d.sigma,
                              rng.substream_seed("data-test"), d.separation)};
    }
    if (d.type == "gratings") {
        return {make_gratings<T>(d.n_per_class, d.classes, d.image_size, d.noise,
                                 rng.substream_seed("data-train")),
                make_gratings<T>(d.test_per_class, d.classes, d.image_size, d.noise,
                                 rng.substream_seed("data-test"))};
    }
    auto [train, test] = load_cifar10<T>(d.dir, d.subset_per_class, cfg.seed, d.test_per_class);
    return {std::move(train), std::move(test)};
}

inline void ensure_out_dir(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.out_dir) / name).string();
}

inline void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError("config: " + what + " is required");
    if (!std::filesystem::exists(path)) throw ConfigError("config: " + what + " not found: " + path);
}

// Shared metrics schema across the training commands.
inline std::vector<std::string> metrics_header(size_t kd_pairs) {
    std::vector<std::string> h{"epoch", "total_loss", "kd_loss"};
    for (size_t i = 0; i < kd_pairs; ++i) h.push_back("kd_loss_pair" + std::to_string(i));
    h.insert(h.end(), {"supervision_loss", "eval_mAP_e", "eval_mAP_c", "eval_top_k",
                       "eval_accuracy", "wallclock_s"});
    return h;
}

inline void write_metrics_csv(const std::string& path, const TrainState& state, size_t kd_pairs,
                              bool timing) {
    CsvWriter csv(path, metrics_header(kd_pairs));
    for (const auto& row : state.history) {
        std::vector<std::string> cells{std::to_string(row.epoch), csv_double(row.total_loss),
                                       csv_double(row.kd_loss)};
        for (size_t i = 0; i < kd_pairs; ++i)
            cells.push_back(csv_double(i < row.kd_pairs.size() ? row.kd_pairs[i] : 0.0));
        cells.push_back(csv_double(row.supervision_loss));
        cells.push_back(csv_double(row.map_e));
        cells.push_back(csv_double(row.map_c));
        cells.push_back(csv_double(row.top_k));
        cells.push_back(csv_double(row.accuracy));
        // real timing is opt-in: it breaks byte-level reproducibility
        cells.push_back(csv_double(timing ? row.wallclock_s : 0.0));
        csv.row(cells);
    }
    csv.flush();
}

template <class T>
std::function<void(int, const LayerGraph<T>&)> checkpoint_hook(const RunConfig& cfg,
                                                               const std::string& stem) {
    if (cfg.checkpoint_every <= 0) return {};
    const int every = cfg.checkpoint_every;
    const std::string dir = cfg.out_dir;
    return [every, dir, stem](int epoch, const LayerGraph<T>& g) {
        if ((epoch + 1) % every != 0) return;
        auto copy = g.clone();
        save_model((std::filesystem::path(dir) / (stem + "_epoch" + std::to_string(epoch) + ".ckpt")).string(),
                   copy);
    };
}

// ---------------------------------------------------------------------------

template <class T>
int cmd_train_teacher(const RunConfig& cfg) {
    validate_run_config(cfg);
    auto data = build_datasets<T>(cfg);
    auto model = make_arch<T>(cfg.model_arch, data.train.sample_shape, resolved_num_classes(cfg));
    auto rng = SplitRng(cfg.seed).substream("init");
    model.init(rng);

    ensure_out_dir(cfg);
    auto opts = train_options(cfg);
    auto state = train_supervised(model, data.train, data.test, opts,
                                  checkpoint_hook<T>(cfg, "teacher"));
    save_model(out_path(cfg, "teacher.ckpt"), model);
    write_metrics_csv(out_path(cfg, "metrics.csv"), state, 0, cfg.timing);
    if (!state.history.empty()) {
        const auto& last = state.history.back();
        std::cout << "epochs " << state.epochs_completed << " loss " << csv_double(last.total_loss)
                  << " accuracy " << csv_double(last.accuracy) << "\n";
    }
    std::cout << "checkpoint " << out_path(cfg, "teacher.ckpt") << "\n";
    return 0;
}

template <class T>
std::unique_ptr<RepSource<T>> resolve_teacher(const RunConfig& cfg) {
    if (cfg.teacher_hog) return std::make_unique<HogSource<T>>(cfg.hog);
    require_file(cfg.teacher_checkpoint, "teacher checkpoint");
    return std::make_unique<ModelSource<T>>(load_model<T>(cfg.teacher_checkpoint));
}

template <class T>
int cmd_train_aux(const RunConfig& cfg) {
    validate_run_config(cfg);
    auto data = build_datasets<T>(cfg);
    auto teacher = resolve_teacher<T>(cfg);
    auto aux = make_arch<T>(cfg.aux_arch, data.train.sample_shape);
    auto rng = SplitRng(cfg.seed).substream("init");
    aux.init(rng);

    ensure_out_dir(cfg);
    auto opts = train_options(cfg);
    auto state = train_auxiliary(*teacher, aux, data.train, data.test, opts, cfg.kernel_degree,
                                 checkpoint_hook<T>(cfg, "aux"));
    save_model(out_path(cfg, "aux.ckpt"), aux);
    write_metrics_csv(out_path(cfg, "metrics.csv"), state, 1, cfg.timing);
    std::cout << "checkpoint " << out_path(cfg, "aux.ckpt") << "\n";
    return 0;
}

template <class T>
int cmd_distill(const RunConfig& cfg) {
    validate_run_config(cfg);
    auto data = build_datasets<T>(cfg);
    auto teacher = resolve_teacher<T>(cfg);
    const int classes = cfg.supervision == "crossentropy" || cfg.method == "softlabel"
                            ? resolved_num_classes(cfg)
                            : 0;
    auto student = make_arch<T>(cfg.student_arch, data.train.sample_shape, classes);
    auto rng = SplitRng(cfg.seed).substream("init");
    student.init(rng);
    auto plan = resolve_plan(distill_plan(cfg), *teacher, student);

    ensure_out_dir(cfg);
    auto opts = train_options(cfg);
    auto state = distill_student(*teacher, student, plan, data.train, data.test, opts,
                                 checkpoint_hook<T>(cfg, "student"));
    save_model(out_path(cfg, "student.ckpt"), student);
    write_metrics_csv(out_path(cfg, "metrics.csv"), state, plan.pairs.size(), cfg.timing);
    if (!state.history.empty()) {
        const auto& last = state.history.back();
        std::cout << "epochs " << state.epochs_completed << " loss " << csv_double(last.total_loss)
                  << " mAP_c " << csv_double(last.map_c) << "\n";
    }
    std::cout << "checkpoint " << out_path(cfg, "student.ckpt") << "\n";
    return 0;
}

template <class T>
int cmd_eval(const RunConfig& cfg) {
    validate_run_config(cfg);
    require_file(cfg.checkpoint, "checkpoint");
    auto model = load_model<T>(cfg.checkpoint);
    auto data = build_datasets<T>(cfg);
    if (!data.train.labels || !data.test.labels) throw DataError("eval: labeled data required");

    auto db = collect_embeddings(model, data.train, cfg.batch_size, cfg.threads);
    auto queries = collect_embeddings(model, data.test, cfg.batch_size, cfg.threads);
    const int k = std::min(cfg.eval_top_k, db.rows);
    auto rep = evaluate_retrieval(db, data.train.labels->labels, queries, data.test.labels->labels,
                                  k, cfg.threads);
    if (model.has_head()) rep.accuracy = classification_accuracy(model, data.test, cfg.batch_size);

    ensure_out_dir(cfg);
    CsvWriter csv(out_path(cfg, "report.csv"),
                  {"model", "mAP_e", "mAP_c", "top_k_e", "top_k_c", "k", "accuracy"});
    csv.row({model.arch_id, csv_double(rep.map_euclidean), csv_double(rep.map_cosine),
             csv_double(rep.topk_euclidean), csv_double(rep.topk_cosine), std::to_string(rep.k),
             csv_double(rep.accuracy)});
    csv.flush();
    std::cout << "mAP_e " << csv_double(rep.map_euclidean) << " mAP_c " << csv_double(rep.map_cosine)
              << " top" << rep.k << "_e " << csv_double(rep.topk_euclidean) << " top" << rep.k
              << "_c " << csv_double(rep.topk_cosine) << " accuracy " << csv_double(rep.accuracy)
              << "\n";
    return 0;
}

template <class T>
void flow_rows(CsvWriter& csv, const LayerGraph<T>& model, const LoadedData<T>& data,
               const RunConfig& cfg, FlowVector& fv_out) {
    const auto kernel = KernelKind::tstudent(cfg.kernel_degree);
    fv_out = flow_vector(model, data.train, kernel, cfg.flow_batch, cfg.threads);
    auto train_reps = collect_representations(model, data.train, all_indices(data.train),
                                              cfg.batch_size, cfg.threads);
    auto test_reps = collect_representations(model, data.test, all_indices(data.test),
                                             cfg.batch_size, cfg.threads);
    for (int l = 0; l < model.num_transfer_points(); ++l) {
        const double ncc = ncc_probe(train_reps[static_cast<size_t>(l)], *data.train.labels,
                                     test_reps[static_cast<size_t>(l)], *data.test.labels);
        csv.row({model.arch_id.empty() ? "model" : model.arch_id, std::to_string(l),
                 csv_double(fv_out.omega[static_cast<size_t>(l)]), csv_double(ncc)});
    }
}

template <class T>
int cmd_flow_report(const RunConfig& cfg) {
    validate_run_config(cfg);
    require_file(cfg.checkpoint, "checkpoint");
    auto model = load_model<T>(cfg.checkpoint);
    auto data = build_datasets<T>(cfg);
    if (!data.train.labels || !data.test.labels) throw DataError("flow-report: labeled data required");

    LayerGraph<T> second;
    const bool has_second = !cfg.checkpoint_b.empty();
    if (has_second) {
        require_file(cfg.checkpoint_b, "checkpoint_b");
        second = load_model<T>(cfg.checkpoint_b);
    }

    ensure_out_dir(cfg);
    CsvWriter csv(out_path(cfg, "flow.csv"), {"model", "layer_index", "qmi", "ncc_accuracy"});
    FlowVector fv_a, fv_b;
    flow_rows(csv, model, data, cfg, fv_a);
    if (has_second) {
        flow_rows(csv, second, data, cfg, fv_b);
        auto matching = match_layers(fv_a, fv_b);
        std::cout << "kappa(" << model.arch_id << " -> " << second.arch_id << "):";
        for (size_t i = 0; i < matching.kappa.size(); ++i)
            std::cout << " " << i << "->" << matching.kappa[i];
        std::cout << "\n";
    }
    csv.flush();
    std::cout << "flow report " << out_path(cfg, "flow.csv") << "\n";
    return 0;
}

// Canned gradient-check battery over every differentiable objective; runs in
// the 64-bit reference mode only.
inline int cmd_gradcheck(const RunConfig& cfg, double step, double tol) {
    if (cfg.f32) throw ConfigError("gradcheck: requires the 64-bit mode (drop --f32)");
    using Tensor = TensorT<double>;
    Rng rng(SplitRng(cfg.seed).substream_seed("gradcheck"));
    auto batch = [&](int n, int d) {
        Mat<double> m(n, d);
        for (auto& v : m.v) v = rng.normal();
        return m;
    };
    bool all_ok = true;
    auto report_line = [&](const std::string& name, const GradCheckReport& rep) {
        all_ok = all_ok && rep.passed;
        std::cout << (rep.passed ? "[PASS] " : "[FAIL] ") << name << " max_rel_error "
                  << csv_double(rep.max_rel_error) << " tol " << csv_double(rep.tolerance) << "\n";
    };

    {
        auto p = Tensor::from_mat(batch(4, 3), true);
        report_line("quadratic", gradient_check([&] { return sum(mul(p, p)); }, {{"p", p}}, step, 1e-8));
    }
    {
        auto t = batch(8, 4);
        auto s = Tensor::from_mat(batch(8, 4), true);
        report_line("hybrid_layer_loss",
                    gradient_check([&] { return hybrid_layer_loss(t, s, cfg.kernel_degree); },
                                   {{"student", s}}, step, tol));
    }
    {
        auto t0 = batch(6, 4), t1 = batch(6, 5);
        auto s0 = Tensor::from_mat(batch(6, 4), true);
        auto s1 = Tensor::from_mat(batch(6, 5), true);
        DistillPlan plan;
        plan.pairs = {{0, 0}, {1, 1}};
        report_line("distill_loss",
                    gradient_check([&] { return distill_loss<double>(plan, {t0, t1}, {s0, s1}, 1).total; },
                                   {{"s0", s0}, {"s1", s1}}, step, tol));
    }
    {
        auto tl = batch(6, 3);
        auto sl = Tensor::from_mat(batch(6, 3), true);
        report_line("softlabel", gradient_check([&] { return softlabel_loss(tl, sl, cfg.temperature); },
                                                {{"logits", sl}}, step, tol));
    }
    {
        auto t = batch(6, 4);
        auto s = Tensor::from_mat(batch(6, 4), true);
        report_line("hint", gradient_check([&] { return hint_loss<double>(t, s, nullptr); },
                                           {{"student", s}}, step, tol));
    }
    {
        auto emb = Tensor::from_mat(batch(6, 3), true);
        std::vector<int> labels{0, 1, 1, 0, 1, 0};
        report_line("contrastive", gradient_check([&] { return batch_contrastive(emb, labels, cfg.margin); },
                                                  {{"emb", emb}}, step, tol));
    }
    {
        // end-to-end: hybrid loss through a small conv net's parameters
        auto g = make_arch<double>("cnn1l", {1, 8, 8});
        auto irng = SplitRng(cfg.seed).substream("gradcheck-init");
        g.init(irng);
        Mat<double> imgs(4, 64);
        for (auto& v : imgs.v) v = rng.normal() * 0.5;
        auto input = Tensor::from_data({4, 1, 8, 8}, imgs.v);
        auto t = batch(4, 8);
        auto lossfn = [&] {
            auto reps = forward_collect(g, input, true);
            return hybrid_layer_loss(t, reps.transfer.back(), 1);
        };
        report_line("conv_net_end_to_end", gradient_check(lossfn, g.named_parameters(), step, tol));
    }
    std::cout << (all_ok ? "gradient checks passed" : "gradient checks FAILED") << "\n";
    if (!all_ok) throw NumericError("gradient check failure");
    return 0;
}

}  // namespace flowkd::cli
