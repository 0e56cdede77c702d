// Command-line front end: train the desk-scale teacher, train the auxiliary
// by probability matching, distill a student with the epoch-decayed
// multi-layer objective (or one of the baselines), evaluate retrieval and
// classification, and emit per-layer information-flow reports.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "commands.hpp"
#include "flowkd/config.hpp"
#include "flowkd/errors.hpp"

namespace {

using flowkd::RunConfig;

struct CommonFlags {
    std::string config_path;
    // optional overrides; only applied when the flag was passed
    CLI::App* cmd = nullptr;

    void attach(CLI::App* app, RunConfig& defaults) {
        cmd = app;
        app->add_option("--config", config_path, "JSON config file");
        app->add_option("--seed", defaults.seed, "master RNG seed")->capture_default_str();
        app->add_option("--out", defaults.out_dir, "output directory")->capture_default_str();
        app->add_option("--threads", defaults.threads, "worker threads (1 = fully deterministic)")
            ->capture_default_str();
        app->add_flag("--f32", defaults.f32, "single-precision speed mode");
        app->add_flag("--timing", defaults.timing,
                      "record real wallclock in metrics CSVs (breaks byte-reproducibility)");
    }
};

// Re-parse after loading the config file so explicit flags override it.
RunConfig resolve_config(CLI::App* cmd, const std::string& config_path, const RunConfig& parsed) {
    if (config_path.empty()) return parsed;
    RunConfig cfg = flowkd::load_run_config(config_path);
    auto keep = [&](const char* flag) { return cmd->count(flag) > 0; };
    if (keep("--seed")) cfg.seed = parsed.seed;
    if (keep("--out")) cfg.out_dir = parsed.out_dir;
    if (keep("--threads")) cfg.threads = parsed.threads;
    if (keep("--f32")) cfg.f32 = parsed.f32;
    if (keep("--timing")) cfg.timing = parsed.timing;
    if (keep("--epochs")) cfg.epochs = parsed.epochs;
    if (keep("--batch-size")) cfg.batch_size = parsed.batch_size;
    if (keep("--lr")) cfg.lr = parsed.lr;
    if (keep("--arch")) cfg.model_arch = parsed.model_arch;
    if (keep("--student-arch")) cfg.student_arch = parsed.student_arch;
    if (keep("--aux-arch")) cfg.aux_arch = parsed.aux_arch;
    if (keep("--teacher")) cfg.teacher_checkpoint = parsed.teacher_checkpoint;
    if (keep("--hog")) cfg.teacher_hog = parsed.teacher_hog;
    if (keep("--checkpoint")) cfg.checkpoint = parsed.checkpoint;
    if (keep("--checkpoint-b")) cfg.checkpoint_b = parsed.checkpoint_b;
    if (keep("--method")) cfg.method = parsed.method;
    if (keep("--alpha-init")) cfg.alpha_init = parsed.alpha_init;
    if (keep("--gamma")) cfg.gamma = parsed.gamma;
    if (keep("--supervision")) cfg.supervision = parsed.supervision;
    if (keep("--top-k")) cfg.eval_top_k = parsed.eval_top_k;
    if (keep("--augment")) cfg.augment = parsed.augment;
    return cfg;
}

template <class Fn>
int dispatch_precision(const RunConfig& cfg, Fn&& fn) {
    return cfg.f32 ? fn.template operator()<float>(cfg) : fn.template operator()<double>(cfg);
}

int run_guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const flowkd::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const flowkd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const flowkd::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"information-flow knowledge distillation toolkit"};
    app.require_subcommand(1);

    RunConfig d;  // flag landing zone; merged with the config file afterwards
    CommonFlags common;

    auto* train_teacher = app.add_subcommand("train-teacher", "supervised training of a teacher model");
    common.attach(train_teacher, d);
    train_teacher->add_option("--arch", d.model_arch, "architecture id")->capture_default_str();
    train_teacher->add_option("--epochs", d.epochs, "training epochs")->capture_default_str();
    train_teacher->add_option("--batch-size", d.batch_size, "batch size")->capture_default_str();
    train_teacher->add_option("--lr", d.lr, "learning rate")->capture_default_str();
    train_teacher->add_flag("--augment", d.augment, "enable flip/crop augmentation");

    auto* train_aux = app.add_subcommand("train-aux",
                                         "train the auxiliary model by penultimate-layer probability matching");
    common.attach(train_aux, d);
    train_aux->add_option("--teacher", d.teacher_checkpoint, "teacher checkpoint path");
    train_aux->add_flag("--hog", d.teacher_hog, "use the handcrafted HoG extractor as the teacher");
    train_aux->add_option("--aux-arch", d.aux_arch, "auxiliary architecture id")->capture_default_str();
    train_aux->add_option("--epochs", d.epochs, "training epochs")->capture_default_str();
    train_aux->add_option("--batch-size", d.batch_size, "batch size")->capture_default_str();
    train_aux->add_option("--lr", d.lr, "learning rate")->capture_default_str();
    train_aux->add_flag("--augment", d.augment, "enable flip/crop augmentation");

    auto* distill = app.add_subcommand("distill", "distill a student from a frozen source model");
    common.attach(distill, d);
    distill->add_option("--teacher", d.teacher_checkpoint, "source checkpoint (auxiliary or teacher)");
    distill->add_flag("--hog", d.teacher_hog, "distill directly from the HoG extractor");
    distill->add_option("--student-arch", d.student_arch, "student architecture id")->capture_default_str();
    distill->add_option("--method", d.method,
                        "proposed | pkt_single | pkt_multi | hint | softlabel | none")
        ->capture_default_str();
    distill->add_option("--alpha-init", d.alpha_init, "initial intermediate-layer weight")
        ->capture_default_str();
    distill->add_option("--gamma", d.gamma, "per-epoch decay factor")->capture_default_str();
    distill->add_option("--supervision", d.supervision, "none | contrastive | crossentropy")
        ->capture_default_str();
    distill->add_option("--epochs", d.epochs, "training epochs")->capture_default_str();
    distill->add_option("--batch-size", d.batch_size, "batch size")->capture_default_str();
    distill->add_option("--lr", d.lr, "learning rate")->capture_default_str();
    distill->add_flag("--augment", d.augment, "enable flip/crop augmentation");

    auto* eval = app.add_subcommand("eval", "retrieval and classification evaluation of a checkpoint");
    common.attach(eval, d);
    eval->add_option("--checkpoint", d.checkpoint, "model checkpoint to evaluate");
    eval->add_option("--top-k", d.eval_top_k, "top-K cutoff")->capture_default_str();

    auto* flow = app.add_subcommand("flow-report", "per-layer information flow and NCC report");
    common.attach(flow, d);
    flow->add_option("--checkpoint", d.checkpoint, "model checkpoint");
    flow->add_option("--checkpoint-b", d.checkpoint_b, "second model for layer matching");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
    common.attach(gradcheck, d);
    double gc_step = 1e-5, gc_tol = 1e-4;
    gradcheck->add_option("--step", gc_step, "finite-difference step")->capture_default_str();
    gradcheck->add_option("--tol", gc_tol, "relative-error tolerance")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    return run_guarded([&]() -> int {
        if (train_teacher->parsed()) {
            auto cfg = resolve_config(train_teacher, common.config_path, d);
            return dispatch_precision(cfg, []<class T>(const RunConfig& c) {
                return flowkd::cli::cmd_train_teacher<T>(c);
            });
        }
        if (train_aux->parsed()) {
            auto cfg = resolve_config(train_aux, common.config_path, d);
            return dispatch_precision(cfg, []<class T>(const RunConfig& c) {
                return flowkd::cli::cmd_train_aux<T>(c);
            });
        }
        if (distill->parsed()) {
            auto cfg = resolve_config(distill, common.config_path, d);
            return dispatch_precision(cfg, []<class T>(const RunConfig& c) {
                return flowkd::cli::cmd_distill<T>(c);
            });
        }
        if (eval->parsed()) {
            auto cfg = resolve_config(eval, common.config_path, d);
            return dispatch_precision(cfg, []<class T>(const RunConfig& c) {
                return flowkd::cli::cmd_eval<T>(c);
            });
        }
        if (flow->parsed()) {
            auto cfg = resolve_config(flow, common.config_path, d);
            return dispatch_precision(cfg, []<class T>(const RunConfig& c) {
                return flowkd::cli::cmd_flow_report<T>(c);
            });
        }
        if (gradcheck->parsed()) {
            auto cfg = resolve_config(gradcheck, common.config_path, d);
            flowkd::validate_run_config(cfg);
            return flowkd::cli::cmd_gradcheck(cfg, gc_step, gc_tol);
        }
        return 1;
    });
}
