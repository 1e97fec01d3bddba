#include "cipl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cipl/error.hpp"
#include "cipl/projection.hpp"

namespace fs = std::filesystem;

namespace cipl {

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores/labels length mismatch");
    const size_t n = scores.size();
    size_t pos = 0;
    for (int l : labels) pos += l ? 1 : 0;
    const size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    // average ranks with tie midpoints, then the Mann-Whitney U statistic
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k]) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - static_cast<double>(pos) * (pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::pair<double, double> f1_acc(const ScoreTable& table, const std::vector<double>& thresholds,
                                 std::vector<double>* per_class_f1,
                                 std::vector<double>* per_class_acc) {
    const size_t n = table.probs.size();
    if (n == 0) throw ShapeError("f1_acc on empty table");
    const size_t C = table.probs[0].size();
    if (thresholds.size() != C) throw ShapeError("f1_acc thresholds length mismatch");
    for (double t : thresholds)
        if (t < 0.0 || t > 1.0) throw DomainError("f1_acc threshold outside [0,1]");
    double f1_sum = 0, acc_sum = 0;
    if (per_class_f1) per_class_f1->assign(C, 0.0);
    if (per_class_acc) per_class_acc->assign(C, 0.0);
    for (size_t c = 0; c < C; ++c) {
        long tp = 0, fp = 0, fn = 0, tn = 0;
        for (size_t s = 0; s < n; ++s) {
            const bool pred = table.probs[s][c] > thresholds[c];
            const bool truth = table.labels[s][c] != 0;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
            tn += !pred && !truth;
        }
        const double denom = 2.0 * tp + fp + fn;
        const double f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
        const double acc = static_cast<double>(tp + tn) / static_cast<double>(n);
        f1_sum += f1;
        acc_sum += acc;
        if (per_class_f1) (*per_class_f1)[c] = f1;
        if (per_class_acc) (*per_class_acc)[c] = acc;
    }
    return {f1_sum / C, acc_sum / C};
}

std::vector<double> choose_thresholds(const ScoreTable& table) {
    const size_t n = table.probs.size();
    if (n == 0) throw ShapeError("choose_thresholds on empty table");
    const size_t C = table.probs[0].size();
    std::vector<double> out(C, 0.5);
    for (size_t c = 0; c < C; ++c) {
        // candidate cuts midway between adjacent distinct scores
        std::vector<double> vals;
        vals.reserve(n);
        for (size_t s = 0; s < n; ++s) vals.push_back(table.probs[s][c]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        std::vector<double> cands{0.5};
        for (size_t k = 0; k + 1 < vals.size(); ++k) cands.push_back((vals[k] + vals[k + 1]) / 2.0);
        double best_f1 = -1.0, best_t = 0.5;
        for (double t : cands) {
            if (t < 0.0 || t > 1.0) continue;
            long tp = 0, fp = 0, fn = 0;
            for (size_t s = 0; s < n; ++s) {
                const bool pred = table.probs[s][c] > t;
                const bool truth = table.labels[s][c] != 0;
                tp += pred && truth;
                fp += pred && !truth;
                fn += !pred && truth;
            }
            const double denom = 2.0 * tp + fp + fn;
            const double f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
            if (f1 > best_f1 + 1e-12 || (f1 > best_f1 - 1e-12 && t < best_t)) {
                best_f1 = f1;
                best_t = t;
            }
        }
        out[c] = best_t;
    }
    return out;
}

namespace {

// Half-pixel-center bilinear upsampling of a single-channel map.
std::vector<float> upsample_bilinear(const std::vector<float>& src, int sh, int sw, int dh, int dw) {
    std::vector<float> out(static_cast<size_t>(dh) * dw);
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
    for (int y = 0; y < dh; ++y)
        for (int x = 0; x < dw; ++x) {
            double fy = (y + 0.5) * sy - 0.5;
            double fx = (x + 0.5) * sx - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
            const double wy = fy - y0, wx = fx - x0;
            const double v =
                (src[static_cast<size_t>(y0) * sw + x0] * (1 - wx) +
                 src[static_cast<size_t>(y0) * sw + x1] * wx) * (1 - wy) +
                (src[static_cast<size_t>(y1) * sw + x0] * (1 - wx) +
                 src[static_cast<size_t>(y1) * sw + x1] * wx) * wy;
            out[static_cast<size_t>(y) * dw + x] = static_cast<float>(v);
        }
    return out;
}

// Averaged class similarity map at feature resolution.
std::vector<float> class_activation(const Model<float>& model, const SimStack<float>& sim,
                                    int class_id, int hw) {
    const int M = model.cfg.prototypes_per_class;
    const int N = model.cfg.num_prototypes();
    std::vector<float> avg(static_cast<size_t>(hw), 0.0f);
    for (int m = 0; m < M; ++m) {
        const int n = class_id * M + m;
        for (int p = 0; p < hw; ++p) avg[static_cast<size_t>(p)] += sim.maps->values[static_cast<size_t>(p) * N + n];
    }
    for (auto& v : avg) v /= static_cast<float>(M);
    return avg;
}

}  // namespace

LocalizationCase localization_mask(const Model<float>& model, const Image& image, int class_id,
                                   const std::vector<Box>& gt_boxes) {
    LocalizationCase lc;
    lc.class_id = class_id;
    lc.height = image.height;
    lc.width = image.width;

    Tape<float> tape;
    auto sim = model.similarity_from_image(tape, image_to_tensor<float>(image));
    const int side = model.cfg.backbone.feature_extent();
    const int hw = side * side;
    std::vector<float> avg = class_activation(model, sim, class_id, hw);

    float mn = avg[0], mx = avg[0];
    for (float v : avg) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    lc.pred.assign(static_cast<size_t>(image.height) * image.width, 0);
    if (mx == mn) {
        lc.degenerate = true;
    } else {
        for (auto& v : avg) v = (v - mn) / (mx - mn);
        const std::vector<float> up =
            upsample_bilinear(avg, side, side, image.height, image.width);
        for (size_t i = 0; i < up.size(); ++i) lc.pred[i] = up[i] >= 0.5f ? 1 : 0;
    }

    lc.gt.assign(static_cast<size_t>(image.height) * image.width, 0);
    for (const Box& b : gt_boxes)
        for (int y = b.y; y < std::min(b.y + b.h, image.height); ++y)
            for (int x = b.x; x < std::min(b.x + b.w, image.width); ++x)
                lc.gt[static_cast<size_t>(y) * image.width + x] = 1;
    return lc;
}

double iou(const LocalizationCase& c) {
    long inter = 0, uni = 0;
    for (size_t i = 0; i < c.pred.size(); ++i) {
        inter += c.pred[i] && c.gt[i];
        uni += c.pred[i] || c.gt[i];
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::optional<double>> iou_accuracy(const std::vector<LocalizationCase>& cases,
                                                double threshold, int num_classes) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw DomainError("IoU threshold must lie in (0,1), got " + std::to_string(threshold));
    std::vector<long> total(static_cast<size_t>(num_classes), 0);
    std::vector<long> correct(static_cast<size_t>(num_classes), 0);
    for (const auto& c : cases) {
        if (c.class_id < 0 || c.class_id >= num_classes) continue;
        ++total[static_cast<size_t>(c.class_id)];
        if (iou(c) > threshold) ++correct[static_cast<size_t>(c.class_id)];
    }
    std::vector<std::optional<double>> out(static_cast<size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
        if (total[static_cast<size_t>(c)] > 0)
            out[static_cast<size_t>(c)] = static_cast<double>(correct[static_cast<size_t>(c)]) /
                                          static_cast<double>(total[static_cast<size_t>(c)]);
    return out;
}

ScoreTable score_dataset(const Model<float>& model, const Dataset& ds) {
    ScoreTable t;
    const int C = model.cfg.num_classes;
    for (const auto& s : ds.samples) {
        Tape<float> tape;
        auto sim = model.similarity_from_image(tape, image_to_tensor<float>(s.image));
        auto pred = model.classify(tape, sim.scores);
        std::vector<double> row(static_cast<size_t>(C));
        for (int c = 0; c < C; ++c) row[static_cast<size_t>(c)] = pred.probs->values[static_cast<size_t>(c)];
        t.probs.push_back(std::move(row));
        t.labels.push_back(s.labels);
    }
    return t;
}

ClassificationReport classification_report(const Model<float>& model, const Dataset& ds,
                                           const Dataset* threshold_source) {
    ClassificationReport rep;
    const ScoreTable table = score_dataset(model, ds);
    const int C = model.cfg.num_classes;
    double auc_sum = 0;
    int auc_n = 0;
    for (int c = 0; c < C; ++c) {
        std::vector<double> s;
        std::vector<int> l;
        for (size_t i = 0; i < table.probs.size(); ++i) {
            s.push_back(table.probs[i][static_cast<size_t>(c)]);
            l.push_back(table.labels[i][static_cast<size_t>(c)]);
        }
        auto a = auc(s, l);
        rep.per_class_auc.push_back(a);
        if (a) {
            auc_sum += *a;
            ++auc_n;
        }
    }
    rep.mean_auc = auc_n > 0 ? auc_sum / auc_n : 0.0;

    rep.thresholds.assign(static_cast<size_t>(C), 0.5);
    if (threshold_source) {
        const ScoreTable val = score_dataset(model, *threshold_source);
        rep.thresholds = choose_thresholds(val);
    }
    auto [mf1, macc] = f1_acc(table, rep.thresholds, &rep.per_class_f1, &rep.per_class_acc);
    rep.mean_f1 = mf1;
    rep.mean_acc = macc;
    return rep;
}

LocalizationReport localize_dataset(const Model<float>& model, const Dataset& ds,
                                    const std::vector<double>& thresholds) {
    LocalizationReport rep;
    rep.thresholds = thresholds;
    const int C = model.cfg.num_classes;
    std::vector<LocalizationCase> cases;
    for (const auto& s : ds.samples) {
        for (int c = 0; c < C; ++c) {
            if (!s.labels[static_cast<size_t>(c)]) continue;
            std::vector<Box> boxes;
            for (const auto& [cls, b] : s.boxes)
                if (cls == c) boxes.push_back(b);
            if (boxes.empty()) continue;
            cases.push_back(localization_mask(model, s.image, c, boxes));
            rep.degenerate_cases += cases.back().degenerate ? 1 : 0;
        }
    }
    rep.total_cases = static_cast<int>(cases.size());
    for (double t : thresholds) {
        auto acc = iou_accuracy(cases, t, C);
        double sum = 0;
        int n = 0;
        for (const auto& a : acc)
            if (a) {
                sum += *a;
                ++n;
            }
        rep.per_class_acc.push_back(std::move(acc));
        rep.mean_acc.push_back(n > 0 ? sum / n : 0.0);
    }
    return rep;
}

void export_explanation(const Model<float>& model, const Image& image, const std::string& out_dir,
                        int top_k) {
    if (!model.projected)
        throw Error("prototype bank is not projected; train with projection (the train command "
                    "does this after each epoch) before requesting explanations");
    if (top_k < 1) throw ConfigError("explanation top_k must be at least 1, got " + std::to_string(top_k));
    fs::create_directories(out_dir);

    Tape<float> tape;
    auto sim = model.similarity_from_image(tape, image_to_tensor<float>(image));
    auto pred = model.classify(tape, sim.scores);
    const auto decision = multilabel_decision(pred);

    const int C = model.cfg.num_classes;
    const int M = model.cfg.prototypes_per_class;
    const int N = model.cfg.num_prototypes();
    const int side = model.cfg.backbone.feature_extent();
    const int hw = side * side;
    const int stride = model.cfg.backbone.stride();

    nlohmann::json doc;
    doc["logits"] = nlohmann::json::array();
    for (int c = 0; c <= C; ++c) doc["logits"].push_back(pred.logits->values[static_cast<size_t>(c)]);
    doc["disease_probs"] = nlohmann::json::array();
    for (int c = 0; c < C; ++c) doc["disease_probs"].push_back(pred.probs->values[static_cast<size_t>(c)]);
    doc["decision"] = nlohmann::json::array();
    for (int c : decision) doc["decision"].push_back(c);
    doc["pooled_scores"] = nlohmann::json::array();
    for (int n = 0; n < N; ++n) doc["pooled_scores"].push_back(sim.scores->values[static_cast<size_t>(n)]);

    nlohmann::json maps = nlohmann::json::array();
    const int k = std::min(top_k, M);
    for (int cls = 0; cls <= C; ++cls) {
        std::vector<int> protos = model.prototype_indices_of_class(cls);
        std::sort(protos.begin(), protos.end(), [&](int a, int b) {
            const float sa = sim.scores->values[static_cast<size_t>(a)];
            const float sb = sim.scores->values[static_cast<size_t>(b)];
            return sa != sb ? sa > sb : a < b;
        });
        for (int j = 0; j < k; ++j) {
            const int n = protos[static_cast<size_t>(j)];
            std::vector<float> map(static_cast<size_t>(hw));
            float mn = 1e30f, mx = -1e30f;
            for (int p = 0; p < hw; ++p) {
                map[static_cast<size_t>(p)] = sim.maps->values[static_cast<size_t>(p) * N + n];
                mn = std::min(mn, map[static_cast<size_t>(p)]);
                mx = std::max(mx, map[static_cast<size_t>(p)]);
            }
            Image img(side, side, 1);
            for (int p = 0; p < hw; ++p)
                img.pixels[static_cast<size_t>(p)] =
                    mx > mn ? (map[static_cast<size_t>(p)] - mn) / (mx - mn) : 0.0f;
            const std::string fname =
                "class" + std::to_string(cls) + "_top" + std::to_string(j) + "_proto" +
                std::to_string(n) + ".pgm";
            write_image(img, (fs::path(out_dir) / fname).string());

            const ProtoSource& src = model.sources[static_cast<size_t>(n)];
            nlohmann::json rec;
            rec["file"] = fname;
            rec["class"] = cls;
            rec["prototype"] = n;
            rec["raw_min"] = mn;
            rec["raw_max"] = mx;
            rec["pooled_score"] = sim.scores->values[static_cast<size_t>(n)];
            rec["peak"] = {sim.argmax[static_cast<size_t>(n)].first,
                           sim.argmax[static_cast<size_t>(n)].second};
            rec["source"] = {{"image_id", src.image_id},
                             {"patch_row", src.row},
                             {"patch_col", src.col},
                             {"similarity", src.similarity},
                             {"pixel_box", {src.col * stride, src.row * stride, stride, stride}}};
            maps.push_back(std::move(rec));
        }
    }
    doc["maps"] = std::move(maps);

    std::ofstream f(fs::path(out_dir) / "explanation.json");
    if (!f) throw IoError("cannot write explanation.json in " + out_dir);
    f << doc.dump(2) << "\n";
}

}  // namespace cipl
