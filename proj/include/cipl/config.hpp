#pragma once

#include <string>
#include <vector>

#include "cipl/data.hpp"
#include "cipl/model.hpp"
#include "cipl/training.hpp"

namespace cipl {

// One flat JSON document drives every pipeline stage; unknown keys are
// rejected so a typo cannot silently fall back to a default.
struct RunConfig {
    std::uint64_t seed = 1;

    // data generation
    int image_size = 64;
    int channels = 1;
    int num_classes = 4;
    int n_samples = 2000;
    double label_prob = 0.35;
    bool single_label = false;
    int glyph_min = 12;
    int glyph_max = 18;
    std::string dataset_dir;

    // model
    std::vector<int> channel_plan{16, 32, 64};
    int feature_dim = 64;
    int prototypes_per_class = 8;

    // training
    int batch_size = 8;
    double learning_rate = 1e-4;
    int warmup_epochs = 3;
    int main_epochs = 12;
    int steps_per_epoch = 0;
    double ema_momentum = 0.999;
    double alpha1 = 0.02;
    double alpha2 = 0.5;
    double alpha3 = 0.5;
    double alpha4 = 0.5;
    double tau = 2.0;
    bool ablate_cross = false;
    bool ablate_inte = false;
    bool ablate_pred = false;
    bool pred_kl = false;
    bool symmetrize_views = false;
    bool project_during_warmup = false;
    bool keep_ema = false;
    std::string checkpoint_dir;
    std::string checkpoint;
    std::string metrics_path;

    // evaluation
    std::string eval_dir;
    std::string val_dir;
    std::string report_path;
    std::vector<double> iou_thresholds{0.1, 0.3};

    // explanation
    std::string image;
    std::string explain_dir;
    int top_k = 1;

    DatasetConfig dataset_config() const;
    ModelConfig model_config() const;
    TrainConfig train_config() const;
    void validate() const;
};

RunConfig load_config(const std::string& path);

// Apply one "key=value" override; the value is parsed as a JSON literal and
// falls back to a plain string.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace cipl
