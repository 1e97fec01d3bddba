#include "cipl/config.hpp"

#include <fstream>

#include <json.hpp>

#include "cipl/error.hpp"

namespace cipl {

namespace {

using nlohmann::json;

void assign_from_json(RunConfig& cfg, const std::string& key, const json& v) {
    try {
        if (key == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (key == "image_size") cfg.image_size = v.get<int>();
        else if (key == "channels") cfg.channels = v.get<int>();
        else if (key == "num_classes") cfg.num_classes = v.get<int>();
        else if (key == "n_samples") cfg.n_samples = v.get<int>();
        else if (key == "label_prob") cfg.label_prob = v.get<double>();
        else if (key == "single_label") cfg.single_label = v.get<bool>();
        else if (key == "glyph_min") cfg.glyph_min = v.get<int>();
        else if (key == "glyph_max") cfg.glyph_max = v.get<int>();
        else if (key == "dataset_dir") cfg.dataset_dir = v.get<std::string>();
        else if (key == "channel_plan") cfg.channel_plan = v.get<std::vector<int>>();
        else if (key == "feature_dim") cfg.feature_dim = v.get<int>();
        else if (key == "prototypes_per_class") cfg.prototypes_per_class = v.get<int>();
        else if (key == "batch_size") cfg.batch_size = v.get<int>();
        else if (key == "learning_rate") cfg.learning_rate = v.get<double>();
        else if (key == "warmup_epochs") cfg.warmup_epochs = v.get<int>();
        else if (key == "main_epochs") cfg.main_epochs = v.get<int>();
        else if (key == "steps_per_epoch") cfg.steps_per_epoch = v.get<int>();
        else if (key == "ema_momentum") cfg.ema_momentum = v.get<double>();
        else if (key == "alpha1") cfg.alpha1 = v.get<double>();
        else if (key == "alpha2") cfg.alpha2 = v.get<double>();
        else if (key == "alpha3") cfg.alpha3 = v.get<double>();
        else if (key == "alpha4") cfg.alpha4 = v.get<double>();
        else if (key == "tau") cfg.tau = v.get<double>();
        else if (key == "ablate_cross") cfg.ablate_cross = v.get<bool>();
        else if (key == "ablate_inte") cfg.ablate_inte = v.get<bool>();
        else if (key == "ablate_pred") cfg.ablate_pred = v.get<bool>();
        else if (key == "pred_kl") cfg.pred_kl = v.get<bool>();
        else if (key == "symmetrize_views") cfg.symmetrize_views = v.get<bool>();
        else if (key == "project_during_warmup") cfg.project_during_warmup = v.get<bool>();
        else if (key == "keep_ema") cfg.keep_ema = v.get<bool>();
        else if (key == "checkpoint_dir") cfg.checkpoint_dir = v.get<std::string>();
        else if (key == "checkpoint") cfg.checkpoint = v.get<std::string>();
        else if (key == "metrics_path") cfg.metrics_path = v.get<std::string>();
        else if (key == "eval_dir") cfg.eval_dir = v.get<std::string>();
        else if (key == "val_dir") cfg.val_dir = v.get<std::string>();
        else if (key == "report_path") cfg.report_path = v.get<std::string>();
        else if (key == "iou_thresholds") cfg.iou_thresholds = v.get<std::vector<double>>();
        else if (key == "image") cfg.image = v.get<std::string>();
        else if (key == "explain_dir") cfg.explain_dir = v.get<std::string>();
        else if (key == "top_k") cfg.top_k = v.get<int>();
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

}  // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(path + ": config must be a JSON object");
    RunConfig cfg;
    for (const auto& [key, value] : doc.items()) assign_from_json(cfg, key, value);
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;  // unquoted strings (paths) pass through
    assign_from_json(cfg, key, v);
}

DatasetConfig RunConfig::dataset_config() const {
    DatasetConfig d;
    d.seed = seed;
    d.n_samples = n_samples;
    d.num_classes = num_classes;
    d.image_size = image_size;
    d.channels = channels;
    d.label_prob = label_prob;
    d.single_label = single_label;
    d.glyph_min = glyph_min;
    d.glyph_max = glyph_max;
    return d;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.backbone.image_size = image_size;
    m.backbone.in_channels = channels;
    m.backbone.channel_plan = channel_plan;
    m.backbone.feature_dim = feature_dim;
    m.num_classes = num_classes;
    m.prototypes_per_class = prototypes_per_class;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.warmup_epochs = warmup_epochs;
    t.main_epochs = main_epochs;
    t.steps_per_epoch = steps_per_epoch;
    t.ema_momentum = ema_momentum;
    t.weights.alpha1 = alpha1;
    t.weights.alpha2 = alpha2;
    t.weights.alpha3 = alpha3;
    t.weights.alpha4 = alpha4;
    t.weights.tau = tau;
    t.seed = seed;
    t.ablate_cross = ablate_cross;
    t.ablate_inte = ablate_inte;
    t.ablate_pred = ablate_pred;
    t.pred_kl = pred_kl;
    t.symmetrize_views = symmetrize_views;
    t.project_during_warmup = project_during_warmup;
    t.keep_ema = keep_ema;
    t.checkpoint_dir = checkpoint_dir;
    t.checkpoint_path = checkpoint;
    t.metrics_path = metrics_path;
    return t;
}

void RunConfig::validate() const {
    model_config().validate();
    train_config().validate();
    if (label_prob < 0.0 || label_prob > 1.0) throw ConfigError("label_prob must lie in [0,1]");
    if (top_k < 0) throw ConfigError("top_k must be non-negative");
    for (double t : iou_thresholds)
        if (t <= 0.0 || t >= 1.0) throw ConfigError("iou_thresholds entries must lie in (0,1)");
}

}  // namespace cipl
