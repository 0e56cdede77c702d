#include "flowkd/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "flowkd/errors.hpp"

namespace flowkd {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw ConfigError("config: " + msg); }

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            bad(std::string("bad value for '") + key + "'");
        }
    }
}

void check_known(const json& j, const std::set<std::string>& known, const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) bad("unknown key '" + it.key() + "' in " + scope);
}

void parse_dataset(const json& j, DatasetConfig& d) {
    check_known(j, {"type", "classes", "dim", "n_per_class", "test_per_class", "sigma", "separation",
                    "dir", "subset_per_class", "image_size", "noise"},
                "dataset");
    take(j, "type", d.type);
    take(j, "classes", d.classes);
    take(j, "dim", d.dim);
    take(j, "n_per_class", d.n_per_class);
    take(j, "test_per_class", d.test_per_class);
    take(j, "sigma", d.sigma);
    take(j, "separation", d.separation);
    take(j, "dir", d.dir);
    take(j, "subset_per_class", d.subset_per_class);
    take(j, "image_size", d.image_size);
    take(j, "noise", d.noise);
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream f(path);
    if (!f) bad("cannot open " + path);
    json j;
    try {
        j = json::parse(f, nullptr, true, true);  // allow comments
    } catch (const json::exception& e) {
        bad("parse error in " + path + ": " + e.what());
    }
    check_known(j, {"seed", "out", "threads", "f32", "timing", "dataset", "model", "student", "aux",
                    "teacher_checkpoint", "teacher_hog", "hog", "checkpoint", "checkpoint_b", "train",
                    "distill", "augment", "eval", "num_classes", "flow_batch"},
                "top level");
    take(j, "seed", cfg.seed);
    take(j, "out", cfg.out_dir);
    take(j, "threads", cfg.threads);
    take(j, "f32", cfg.f32);
    take(j, "timing", cfg.timing);
    if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
    if (j.contains("model")) take(j.at("model"), "arch", cfg.model_arch);
    if (j.contains("student")) take(j.at("student"), "arch", cfg.student_arch);
    if (j.contains("aux")) take(j.at("aux"), "arch", cfg.aux_arch);
    take(j, "teacher_checkpoint", cfg.teacher_checkpoint);
    take(j, "teacher_hog", cfg.teacher_hog);
    if (j.contains("hog")) {
        const auto& h = j.at("hog");
        check_known(h, {"cells", "orientation_bins", "signed", "normalize"}, "hog");
        take(h, "cells", cfg.hog.cells);
        take(h, "orientation_bins", cfg.hog.orientation_bins);
        take(h, "signed", cfg.hog.signed_orientations);
        take(h, "normalize", cfg.hog.normalize);
    }
    take(j, "checkpoint", cfg.checkpoint);
    take(j, "checkpoint_b", cfg.checkpoint_b);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_known(t, {"epochs", "batch_size", "optimizer", "lr", "beta1", "beta2", "adam_eps",
                        "eval_every", "eval_top_k", "checkpoint_every"},
                    "train");
        take(t, "epochs", cfg.epochs);
        take(t, "batch_size", cfg.batch_size);
        take(t, "optimizer", cfg.optimizer);
        take(t, "lr", cfg.lr);
        take(t, "beta1", cfg.beta1);
        take(t, "beta2", cfg.beta2);
        take(t, "adam_eps", cfg.adam_eps);
        take(t, "eval_every", cfg.eval_every);
        take(t, "eval_top_k", cfg.eval_top_k);
        take(t, "checkpoint_every", cfg.checkpoint_every);
    }
    if (j.contains("distill")) {
        const auto& d = j.at("distill");
        check_known(d, {"method", "alpha_init", "gamma", "kernel_degree", "supervision", "margin",
                        "contrastive_weight", "temperature", "pairs", "alpha_override",
                        "freeze_student"},
                    "distill");
        take(d, "method", cfg.method);
        take(d, "alpha_init", cfg.alpha_init);
        take(d, "gamma", cfg.gamma);
        take(d, "kernel_degree", cfg.kernel_degree);
        take(d, "supervision", cfg.supervision);
        take(d, "margin", cfg.margin);
        take(d, "contrastive_weight", cfg.contrastive_weight);
        take(d, "temperature", cfg.temperature);
        take(d, "freeze_student", cfg.freeze_student);
        if (d.contains("pairs")) {
            for (const auto& p : d.at("pairs")) {
                if (!p.is_array() || p.size() != 2) bad("distill.pairs entries must be [teacher, student]");
                cfg.pairs.push_back({p[0].get<int>(), p[1].get<int>()});
            }
        }
        if (d.contains("alpha_override"))
            cfg.alpha_override = d.at("alpha_override").get<std::vector<double>>();
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        check_known(a, {"enabled", "hflip_prob", "crop_padding", "rotation_deg"}, "augment");
        take(a, "enabled", cfg.augment);
        take(a, "hflip_prob", cfg.hflip_prob);
        take(a, "crop_padding", cfg.crop_padding);
        take(a, "rotation_deg", cfg.rotation_deg);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_known(e, {"every", "top_k"}, "eval");
        take(e, "every", cfg.eval_every);
        take(e, "top_k", cfg.eval_top_k);
    }
    take(j, "num_classes", cfg.num_classes);
    take(j, "flow_batch", cfg.flow_batch);
    return cfg;
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.threads < 1) bad("threads must be >= 1");
    if (cfg.epochs < 0) bad("epochs must be >= 0");
    if (cfg.batch_size < 2) bad("batch_size must be >= 2");
    if (!(cfg.lr > 0)) bad("lr must be positive");
    if (!(cfg.beta1 > 0 && cfg.beta1 < 1 && cfg.beta2 > 0 && cfg.beta2 < 1))
        bad("adam betas must lie in (0,1)");
    if (!(cfg.gamma > 0 && cfg.gamma < 1)) bad("gamma must lie in (0,1)");
    if (!(cfg.alpha_init > 0)) bad("alpha_init must be positive");
    if (cfg.kernel_degree < 1) bad("kernel_degree must be >= 1");
    if (cfg.hflip_prob < 0 || cfg.hflip_prob > 1) bad("hflip_prob must be in [0,1]");
    if (cfg.crop_padding < 0) bad("crop_padding must be >= 0");
    if (cfg.eval_top_k < 1) bad("eval_top_k must be >= 1");
    if (cfg.optimizer != "adam" && cfg.optimizer != "sgd") bad("optimizer must be adam or sgd");
    static const std::set<std::string> methods{"proposed", "pkt_single", "pkt_multi",
                                               "hint", "softlabel", "none"};
    if (!methods.count(cfg.method)) bad("unknown method '" + cfg.method + "'");
    static const std::set<std::string> sups{"none", "contrastive", "crossentropy"};
    if (!sups.count(cfg.supervision)) bad("unknown supervision '" + cfg.supervision + "'");
    static const std::set<std::string> sets{"blobs", "cifar10", "gratings"};
    if (!sets.count(cfg.dataset.type)) bad("unknown dataset type '" + cfg.dataset.type + "'");
    if (cfg.dataset.type == "blobs") {
        if (cfg.dataset.classes < 1 || cfg.dataset.dim < 1 || cfg.dataset.n_per_class < 1)
            bad("blobs dataset needs positive classes/dim/n_per_class");
        if (!(cfg.dataset.sigma > 0)) bad("blobs sigma must be positive");
    }
    if (cfg.dataset.type == "cifar10" && cfg.dataset.dir.empty()) bad("cifar10 dataset needs 'dir'");
    if (cfg.dataset.type == "gratings" && cfg.dataset.image_size < 4) bad("gratings image_size too small");
}

OptimizerConfig optimizer_config(const RunConfig& cfg) {
    OptimizerConfig oc;
    oc.kind = cfg.optimizer == "sgd" ? OptimizerConfig::Kind::Sgd : OptimizerConfig::Kind::Adam;
    oc.learning_rate = cfg.lr;
    oc.beta1 = cfg.beta1;
    oc.beta2 = cfg.beta2;
    oc.epsilon = cfg.adam_eps;
    oc.seed = cfg.seed;
    return oc;
}

DistillPlan distill_plan(const RunConfig& cfg) {
    DistillPlan plan;
    plan.pairs = cfg.pairs;
    plan.alpha_init = cfg.alpha_init;
    plan.gamma = cfg.gamma;
    if (!cfg.alpha_override.empty()) plan.alpha_override = cfg.alpha_override;
    plan.kernel_degree = cfg.kernel_degree;
    plan.temperature = cfg.temperature;
    if (cfg.method == "proposed") plan.method = DistillMethod::Proposed;
    else if (cfg.method == "pkt_single") plan.method = DistillMethod::PktSingle;
    else if (cfg.method == "pkt_multi") plan.method = DistillMethod::PktMulti;
    else if (cfg.method == "hint") plan.method = DistillMethod::Hint;
    else if (cfg.method == "softlabel") plan.method = DistillMethod::SoftLabel;
    else plan.method = DistillMethod::None;
    if (cfg.supervision == "contrastive")
        plan.supervision = {Supervision::Kind::Contrastive, cfg.margin, cfg.contrastive_weight};
    else if (cfg.supervision == "crossentropy")
        plan.supervision = {Supervision::Kind::CrossEntropy, cfg.margin, 1.0};
    return plan;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions opts;
    opts.epochs = cfg.epochs;
    opts.batch_size = cfg.batch_size;
    opts.optimizer = optimizer_config(cfg);
    opts.seed = cfg.seed;
    opts.augment = cfg.augment;
    opts.augment_spec.hflip_prob = cfg.hflip_prob;
    opts.augment_spec.crop_padding = cfg.crop_padding;
    opts.augment_spec.rotation_deg = cfg.rotation_deg;
    opts.augment_spec.seed = cfg.seed;
    opts.eval_every = cfg.eval_every;
    opts.eval_top_k = cfg.eval_top_k;
    opts.threads = cfg.threads;
    opts.freeze_params = cfg.freeze_student;
    return opts;
}

int resolved_num_classes(const RunConfig& cfg) {
    if (cfg.num_classes > 0) return cfg.num_classes;
    if (cfg.dataset.type == "cifar10") return 10;
    return cfg.dataset.classes;
}

}  // namespace flowkd
