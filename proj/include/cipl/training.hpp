#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cipl/data.hpp"
#include "cipl/model.hpp"
#include "cipl/objectives.hpp"

namespace cipl {

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 1e-4;
    int warmup_epochs = 3;
    int main_epochs = 12;
    int steps_per_epoch = 0;  // 0: floor(n_samples / batch_size)
    double ema_momentum = 0.999;
    LossWeights weights;
    std::uint64_t seed = 1;
    bool ablate_cross = false;
    bool ablate_inte = false;
    bool ablate_pred = false;
    bool pred_kl = false;            // sample-level KL variant of the prediction alignment
    bool symmetrize_views = false;   //: x_a also receives a second view
    bool project_during_warmup = false;
    bool keep_ema = false;
    std::string checkpoint_dir;
    std::string checkpoint_path;
    std::string metrics_path;

    void validate() const {
        if (batch_size < 1 || learning_rate < 0 || warmup_epochs < 0 || main_epochs < 0)
            throw ConfigError("train config has non-positive batch or negative lr/epochs");
        if (ema_momentum <= 0.0 || ema_momentum >= 1.0)
            throw ConfigError("ema momentum must lie in (0,1)");
        weights.validate();
    }
};

// Elementwise convex blend theta_ema <- lambda*theta_ema + (1-lambda)*theta.
template <class T>
void ema_update(std::vector<T>& ema, const std::vector<T>& theta, double lambda) {
    if (ema.size() != theta.size())
        throw ShapeError("ema update on mismatched parameter lengths " +
                         std::to_string(ema.size()) + " vs " + std::to_string(theta.size()));
    const T lam = static_cast<T>(lambda);
    for (size_t i = 0; i < ema.size(); ++i) ema[i] = lam * ema[i] + (T(1) - lam) * theta[i];
}

template <class T>
void ema_update_model(Model<T>& ema, const Model<T>& model, double lambda) {
    auto pe = ema.named_params();
    auto pm = model.named_params();
    for (size_t i = 0; i < pe.size(); ++i) ema_update(pe[i].second->values, pm[i].second->values, lambda);
}

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::map<std::string, std::vector<float>> m, v;
};

struct TrainState {
    Model<float> model;
    Model<float> ema;
    AdamState adam;
    int completed_epochs = 0;
    // float32 like the checkpoint fields, so a resumed run continues bitwise
    float lr = 1e-4f;
    std::vector<float> epoch_mean_history;
};

TrainState init_training(const ModelConfig& mc, const TrainConfig& tc);

// One optimizer step over a batch of common-label pairs with two views of
// each x_b. Throws on a non-finite loss, naming the offending term.
LossRecord train_step(TrainState& st, const Dataset& ds, const PairSampler& sampler, Rng& rng,
                      const TrainConfig& tc, bool warmup);

using StepCallback = std::function<void(int epoch, int step, const LossRecord&)>;
using EpochCallback = std::function<void(int epoch, double mean_total, double lr, bool projected)>;

// Warm-up then main schedule with per-epoch projection and checkpointing;
// resumes from the newest epoch checkpoint in checkpoint_dir when present.
void fit(TrainState& st, const Dataset& ds, const TrainConfig& tc,
         const StepCallback& on_step = nullptr, const EpochCallback& on_epoch = nullptr);

// Checkpoint bridging (all trainable tensors, optimizer state, schedule).
// Per-epoch checkpoints always carry the EMA tensors so a resumed run
// continues identically; the final export honors keep_ema.
void save_state(const std::string& path, const TrainState& st, bool include_ema);
TrainState load_state(const std::string& path);

}  // namespace cipl
