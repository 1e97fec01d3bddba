#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cipl/config.hpp"
#include "cipl/data.hpp"
#include "cipl/error.hpp"
#include "cipl/evaluation.hpp"
#include "cipl/image.hpp"
#include "cipl/projection.hpp"
#include "cipl/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    bool ablate_cross = false, ablate_inte = false, ablate_pred = false;
    bool pred_kl = false, single_label = false, keep_ema = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON configuration file")->required();
    cmd->add_option("--set", args.overrides, "override a config key, key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "override the master seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_flag("--force", args.force, "overwrite non-empty output directories");
    cmd->add_flag("--ablate-cross", args.ablate_cross, "disable the cross-image loss");
    cmd->add_flag("--ablate-inte", args.ablate_inte, "disable the interpretation alignment loss");
    cmd->add_flag("--ablate-pred", args.ablate_pred, "disable the prediction alignment loss");
    cmd->add_flag("--pred-kl", args.pred_kl, "use the sample-level KL prediction alignment");
    cmd->add_flag("--single-label", args.single_label, "restrict generated label sets to size <= 1");
    cmd->add_flag("--keep-ema", args.keep_ema, "keep EMA tensors in the final checkpoint");
}

cipl::RunConfig resolve(const CommonArgs& args) {
    cipl::RunConfig cfg = cipl::load_config(args.config_path);
    for (const auto& ov : args.overrides) cipl::apply_override(cfg, ov);
    if (args.seed_set) cfg.seed = args.seed;
    if (args.ablate_cross) cfg.ablate_cross = true;
    if (args.ablate_inte) cfg.ablate_inte = true;
    if (args.ablate_pred) cfg.ablate_pred = true;
    if (args.pred_kl) cfg.pred_kl = true;
    if (args.single_label) cfg.single_label = true;
    if (args.keep_ema) cfg.keep_ema = true;
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const CommonArgs& args) {
    cipl::RunConfig cfg = resolve(args);
    if (cfg.dataset_dir.empty()) throw cipl::ConfigError("gen-data requires dataset_dir");
    cipl::Dataset ds = cipl::generate_dataset(cfg.dataset_config());
    cipl::write_dataset(ds, cfg.dataset_dir, args.force);
    std::cout << "wrote " << ds.samples.size() << " samples to " << cfg.dataset_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    cipl::RunConfig cfg = resolve(args);
    if (cfg.dataset_dir.empty()) throw cipl::ConfigError("train requires dataset_dir");
    cipl::Dataset ds = cipl::load_dataset(cfg.dataset_dir);
    cipl::TrainConfig tc = cfg.train_config();
    cipl::TrainState st = cipl::init_training(cfg.model_config(), tc);

    // append only when an epoch checkpoint exists to resume from
    bool resuming = false;
    if (!tc.checkpoint_dir.empty() && fs::exists(tc.checkpoint_dir))
        for (const auto& e : fs::directory_iterator(tc.checkpoint_dir))
            resuming = resuming || e.path().filename().string().rfind("epoch_", 0) == 0;
    std::ofstream metrics;
    if (!tc.metrics_path.empty()) {
        metrics.open(tc.metrics_path, resuming ? std::ios::app : std::ios::trunc);
        if (!metrics) throw cipl::IoError("cannot open metrics file " + tc.metrics_path);
    }
    auto on_step = [&](int epoch, int step, const cipl::LossRecord& r) {
        if (!metrics.is_open()) return;
        json rec{{"epoch", epoch},        {"step", step},
                 {"ce", r.ce},            {"cluster", r.cluster},
                 {"separation", r.separation}, {"cross", r.cross},
                 {"inte", r.inte},        {"pred", r.pred},
                 {"total", r.total}};
        metrics << rec.dump() << "\n";
    };
    auto on_epoch = [&](int epoch, double mean_total, double lr, bool projected) {
        if (metrics.is_open()) {
            json rec{{"epoch", epoch},
                     {"mean_total", mean_total},
                     {"lr", lr},
                     {"projected", projected}};
            metrics << rec.dump() << "\n";
            metrics.flush();
        }
        std::cerr << "epoch " << epoch << " mean total " << mean_total << " lr " << lr << "\n";
    };
    cipl::fit(st, ds, tc, on_step, on_epoch);
    std::cout << "trained " << (tc.warmup_epochs + tc.main_epochs) << " epochs";
    if (!tc.checkpoint_path.empty()) std::cout << ", checkpoint at " << tc.checkpoint_path;
    std::cout << "\n";
    return 0;
}

json report_classification(const cipl::ClassificationReport& rep) {
    json out;
    out["per_class_auc"] = json::array();
    for (const auto& a : rep.per_class_auc)
        out["per_class_auc"].push_back(a ? json(*a) : json(nullptr));
    out["mean_auc"] = rep.mean_auc;
    out["thresholds"] = rep.thresholds;
    out["per_class_f1"] = rep.per_class_f1;
    out["per_class_acc"] = rep.per_class_acc;
    out["mean_f1"] = rep.mean_f1;
    out["mean_acc"] = rep.mean_acc;
    return out;
}

int cmd_eval(const CommonArgs& args) {
    cipl::RunConfig cfg = resolve(args);
    if (cfg.checkpoint.empty()) throw cipl::ConfigError("eval requires checkpoint");
    if (cfg.eval_dir.empty()) throw cipl::ConfigError("eval requires eval_dir");
    cipl::TrainState st = cipl::load_state(cfg.checkpoint);
    cipl::Dataset ds = cipl::load_dataset(cfg.eval_dir);
    cipl::Dataset val;
    const cipl::Dataset* val_ptr = nullptr;
    if (!cfg.val_dir.empty()) {
        val = cipl::load_dataset(cfg.val_dir);
        val_ptr = &val;
    }
    auto rep = cipl::classification_report(st.model, ds, val_ptr);
    json out = report_classification(rep);
    if (!cfg.report_path.empty()) {
        std::ofstream f(cfg.report_path);
        if (!f) throw cipl::IoError("cannot write report " + cfg.report_path);
        f << out.dump(2) << "\n";
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_localize(const CommonArgs& args) {
    cipl::RunConfig cfg = resolve(args);
    if (cfg.checkpoint.empty()) throw cipl::ConfigError("localize requires checkpoint");
    if (cfg.eval_dir.empty()) throw cipl::ConfigError("localize requires eval_dir");
    cipl::TrainState st = cipl::load_state(cfg.checkpoint);
    cipl::Dataset ds = cipl::load_dataset(cfg.eval_dir);
    auto rep = cipl::localize_dataset(st.model, ds, cfg.iou_thresholds);

    json out;
    out["thresholds"] = rep.thresholds;
    out["total_cases"] = rep.total_cases;
    out["degenerate_cases"] = rep.degenerate_cases;
    out["per_class_acc"] = json::array();
    for (const auto& row : rep.per_class_acc) {
        json jrow = json::array();
        for (const auto& a : row) jrow.push_back(a ? json(*a) : json(nullptr));
        out["per_class_acc"].push_back(jrow);
    }
    out["mean_acc"] = rep.mean_acc;
    bool monotone = true;
    for (size_t i = 0; i + 1 < rep.thresholds.size(); ++i)
        if (rep.thresholds[i] < rep.thresholds[i + 1] && rep.mean_acc[i] < rep.mean_acc[i + 1])
            monotone = false;
    out["monotone_in_threshold"] = monotone;

    if (!cfg.report_path.empty()) {
        std::ofstream f(cfg.report_path);
        if (!f) throw cipl::IoError("cannot write report " + cfg.report_path);
        f << out.dump(2) << "\n";
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_explain(const CommonArgs& args) {
    cipl::RunConfig cfg = resolve(args);
    if (cfg.checkpoint.empty()) throw cipl::ConfigError("explain requires checkpoint");
    if (cfg.image.empty()) throw cipl::ConfigError("explain requires image");
    if (cfg.explain_dir.empty()) throw cipl::ConfigError("explain requires explain_dir");
    if (cfg.top_k < 1) throw cipl::ConfigError("explain requires top_k >= 1");
    cipl::TrainState st = cipl::load_state(cfg.checkpoint);
    cipl::Image img = cipl::read_image(cfg.image);
    cipl::export_explanation(st.model, img, cfg.explain_dir, cfg.top_k);
    std::cout << "explanation bundle written to " << cfg.explain_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross- and intra-image prototypical learning pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, loc_args, explain_args;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    add_common(gen, gen_args);
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset directory");
    add_common(train, train_args);
    CLI::App* eval = app.add_subcommand("eval", "classification metrics on a dataset");
    add_common(eval, eval_args);
    CLI::App* loc = app.add_subcommand("localize", "weakly-supervised localization metrics");
    add_common(loc, loc_args);
    CLI::App* explain = app.add_subcommand("explain", "export a case-based explanation bundle");
    add_common(explain, explain_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (loc->parsed()) return cmd_localize(loc_args);
        if (explain->parsed()) return cmd_explain(explain_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
