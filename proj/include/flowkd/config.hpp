#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flowkd/data.hpp"
#include "flowkd/distill.hpp"
#include "flowkd/hog.hpp"
#include "flowkd/optim.hpp"

namespace flowkd {

// Run configuration: JSON config file plus command-line overrides (flags
// win). Defaults follow the training protocol this project targets: Adam at
// lr 0.001, batch 128, alpha_init 100, gamma 0.7, contrastive margin 1 with
// weight 0.1, soft-label temperature 2.

struct DatasetConfig {
    std::string type = "blobs";  // blobs | cifar10 | gratings
    // blobs
    int classes = 4;
    int dim = 16;
    int n_per_class = 64;
    int test_per_class = 16;
    double sigma = 1.0;
    double separation = 4.0;
    // cifar10
    std::string dir;
    int subset_per_class = 100;
    // gratings
    int image_size = 16;
    double noise = 0.02;
};

struct RunConfig {
    uint64_t seed = 42;
    std::string out_dir = "runs/out";
    int threads = 1;
    bool f32 = false;
    bool timing = false;  // write real wallclock into metrics CSVs (breaks byte-reproducibility)

    DatasetConfig dataset;

    std::string model_arch = "mlp1";  // train-teacher target
    std::string student_arch = "mlp1";
    std::string aux_arch = "mlp1a";
    std::string teacher_checkpoint;  // distillation source model
    bool teacher_hog = false;        // use the handcrafted extractor as the source
    HogSpec hog;
    std::string checkpoint;    // eval / flow-report subject
    std::string checkpoint_b;  // flow-report comparison model

    int epochs = 25;
    int batch_size = 128;
    std::string optimizer = "adam";
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool augment = false;
    double hflip_prob = 0.5;
    int crop_padding = 4;
    double rotation_deg = 0.0;
    int eval_every = 1;
    int eval_top_k = 10;
    int checkpoint_every = 0;  // 0 = final checkpoint only

    std::string method = "proposed";  // proposed | pkt_single | pkt_multi | hint | softlabel | none
    double alpha_init = 100.0;
    double gamma = 0.7;
    int kernel_degree = 1;
    std::string supervision = "none";  // none | contrastive | crossentropy
    double margin = 1.0;
    double contrastive_weight = 0.1;
    double temperature = 2.0;
    std::vector<std::pair<int, int>> pairs;  // optional explicit layer pairs
    std::vector<double> alpha_override;
    bool freeze_student = false;  // diagnostic mode: losses logged, no updates

    int num_classes = 0;  // classification head size; 0 = from dataset
    int flow_batch = 128;
};

// Parse a JSON config file into RunConfig defaults. Unknown keys are errors.
RunConfig load_run_config(const std::string& path);

// Range checks shared by every command; throws ConfigError.
void validate_run_config(const RunConfig& cfg);

// Library-type conversions.
OptimizerConfig optimizer_config(const RunConfig& cfg);
DistillPlan distill_plan(const RunConfig& cfg);
TrainOptions train_options(const RunConfig& cfg);
int resolved_num_classes(const RunConfig& cfg);

}  // namespace flowkd
