#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cipl/data.hpp"
#include "cipl/model.hpp"

namespace cipl {

// Per-sample disease probabilities aligned with ground-truth bits.
struct ScoreTable {
    std::vector<std::vector<double>> probs;  // n x C, in [0,1]
    std::vector<std::vector<int>> labels;    // n x C
};

// Mann-Whitney rank statistic, ties counted 0.5; nullopt for degenerate
// classes (all-positive or all-negative).
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ClassificationReport {
    std::vector<std::optional<double>> per_class_auc;
    double mean_auc = 0.0;
    std::vector<double> thresholds;
    std::vector<double> per_class_f1;
    std::vector<double> per_class_acc;
    double mean_f1 = 0.0;
    double mean_acc = 0.0;
};

// Macro F1/accuracy at the given per-class thresholds. A class with no
// positives and no positive predictions scores F1 = 0.
std::pair<double, double> f1_acc(const ScoreTable& table, const std::vector<double>& thresholds,
                                 std::vector<double>* per_class_f1 = nullptr,
                                 std::vector<double>* per_class_acc = nullptr);

// Per-class threshold maximizing F1 (ties -> lowest threshold), picked on a
// validation table.
std::vector<double> choose_thresholds(const ScoreTable& table);

struct LocalizationCase {
    int class_id = 0;
    int height = 0, width = 0;
    std::vector<std::uint8_t> pred;  // binary mask
    std::vector<std::uint8_t> gt;
    bool degenerate = false;
};

// Average the class's prototype similarity maps, min-max normalize, bilinear
// upsample to pixel resolution, threshold at 0.5. Constant maps yield an
// all-zero mask flagged degenerate.
LocalizationCase localization_mask(const Model<float>& model, const Image& image, int class_id,
                                   const std::vector<Box>& gt_boxes);

double iou(const LocalizationCase& c);

// Fraction of cases with IoU strictly above T, per class.
std::vector<std::optional<double>> iou_accuracy(const std::vector<LocalizationCase>& cases,
                                                double threshold, int num_classes);

ScoreTable score_dataset(const Model<float>& model, const Dataset& ds);

ClassificationReport classification_report(const Model<float>& model, const Dataset& ds,
                                           const Dataset* threshold_source = nullptr);

struct LocalizationReport {
    std::vector<double> thresholds;                                  // T values
    std::vector<std::vector<std::optional<double>>> per_class_acc;   // [T][class]
    std::vector<double> mean_acc;                                    // [T]
    int degenerate_cases = 0;
    int total_cases = 0;
};

LocalizationReport localize_dataset(const Model<float>& model, const Dataset& ds,
                                    const std::vector<double>& thresholds);

// Case-based explanation bundle: top-k per-class similarity maps as 8-bit
// PGMs with raw min/max sidecars, pooled scores, logits, the decision set,
// and each prototype's source provenance. Requires a projected bank.
void export_explanation(const Model<float>& model, const Image& image, const std::string& out_dir,
                        int top_k);

}  // namespace cipl
