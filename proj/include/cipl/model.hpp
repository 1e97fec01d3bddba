#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cipl/backbone.hpp"
#include "cipl/error.hpp"
#include "cipl/rng.hpp"
#include "cipl/tensor.hpp"

namespace cipl {

struct ModelConfig {
    BackboneConfig backbone;
    int num_classes = 4;          // C diseases; class index C is no-findings
    int prototypes_per_class = 8; // M

    int num_prototypes() const { return prototypes_per_class * (num_classes + 1); }

    void validate() const {
        backbone.validate();
        if (num_classes < 1 || prototypes_per_class < 1)
            throw ConfigError("model config needs at least one class and one prototype per class");
    }
};

// Where a projected prototype came from: training image + feature-grid patch.
struct ProtoSource {
    int image_id = -1;
    int row = -1;
    int col = -1;
    double similarity = 0.0;
};

template <class T>
struct SimStack {
    TensorPtr<T> sqdist;  // [HW, N] squared distances, reused by cluster/separation
    TensorPtr<T> maps;    // [HW, N] similarities exp(-d^2/D), all in (0,1]
    TensorPtr<T> scores;  // [N, 1] max-pooled similarity per prototype
    std::vector<std::pair<int, int>> argmax;  // per-prototype peak position
};

template <class T>
struct Prediction {
    TensorPtr<T> logits;  // [C+1, 1]
    TensorPtr<T> probs;   // [2, C]; column c = (disease, no-findings), sums to 1
};

template <class T>
struct Model {
    ModelConfig cfg;
    Backbone<T> backbone;
    TensorPtr<T> prototypes;  // [N, D]
    TensorPtr<T> fc;          // [C+1, N]
    std::vector<ProtoSource> sources;
    bool projected = false;

    int class_of(int proto) const { return proto / cfg.prototypes_per_class; }

    std::vector<int> prototype_indices_of_class(int cls) const {
        std::vector<int> idx;
        const int M = cfg.prototypes_per_class;
        for (int i = cls * M; i < (cls + 1) * M; ++i) idx.push_back(i);
        return idx;
    }

    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.backbone = Backbone<T>::init(cfg.backbone, seed);
        const int N = cfg.num_prototypes();
        const int D = cfg.backbone.feature_dim;
        m.prototypes = make_tensor<T>({N, D}, true);
        Rng rng(mix_seed(seed, 0x7072));  // "pr"
        for (auto& v : m.prototypes->values) v = static_cast<T>(rng.uniform());
        // +1 from a prototype to its own class logit, -0.5 to the others
        m.fc = make_tensor<T>({cfg.num_classes + 1, N}, true);
        for (int c = 0; c <= cfg.num_classes; ++c)
            for (int n = 0; n < N; ++n)
                m.fc->values[static_cast<size_t>(c) * N + n] =
                    (m.class_of(n) == c) ? T(1) : T(-0.5);
        m.sources.assign(static_cast<size_t>(N), ProtoSource{});
        return m;
    }

    std::vector<std::pair<std::string, TensorPtr<T>>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr<T>>> out;
        backbone.collect_params("backbone.", out);
        out.emplace_back("prototypes", prototypes);
        out.emplace_back("fc", fc);
        return out;
    }

    void zero_grad() const {
        for (auto& [name, t] : named_params()) t->zero_grad();
    }

    TensorPtr<T> features(Tape<T>& tape, const TensorPtr<T>& image) const {
        return backbone.forward(tape, image);
    }

    // F[H̄,W̄,D] flattened to matrix form [H̄W̄, D] for distance computations.
    TensorPtr<T> flatten_features(Tape<T>& tape, const TensorPtr<T>& F) const {
        return reshape(tape, F, {F->dims[0] * F->dims[1], F->dims[2]});
    }

    // Similarity maps S = exp(-|f - p|^2 / D) and max-pooled scores.
    SimStack<T> similarity(Tape<T>& tape, const TensorPtr<T>& feat_flat) const {
        if (feat_flat->dims.size() != 2 || feat_flat->dims[1] != cfg.backbone.feature_dim)
            throw ShapeError("similarity expects [HW," + std::to_string(cfg.backbone.feature_dim) +
                             "] features, got " + dims_str(feat_flat->dims));
        SimStack<T> s;
        s.sqdist = pairwise_sqdist(tape, feat_flat, prototypes);
        s.maps = exp_op(tape, scale(tape, s.sqdist, T(-1) / static_cast<T>(cfg.backbone.feature_dim)));
        const int hw = feat_flat->dims[0];
        const int side = cfg.backbone.feature_extent();
        const int h = (side * side == hw) ? side : hw;  // co-attentive maps keep HW rows
        const int w = (side * side == hw) ? side : 1;
        auto spatial = reshape(tape, s.maps, {h, w, cfg.num_prototypes()});
        auto mx = reduce_max_spatial(tape, spatial);
        s.scores = mx.values;
        s.argmax = std::move(mx.argmax);
        return s;
    }

    // FC logits plus the C binary-task reorganization (disease vs no-findings).
    Prediction<T> classify(Tape<T>& tape, const TensorPtr<T>& scores) const {
        Prediction<T> p;
        p.logits = matmul(tape, fc, scores);  // [C+1, 1]
        const int C = cfg.num_classes;
        std::vector<int> order;
        order.reserve(static_cast<size_t>(C) * 2);
        for (int c = 0; c < C; ++c) {
            order.push_back(c);
            order.push_back(C);
        }
        auto pairs = reshape(tape, gather_rows(tape, p.logits, order), {C, 2});
        p.probs = softmax_cols(tape, transpose(tape, pairs));  // [2, C]
        return p;
    }

    SimStack<T> similarity_from_image(Tape<T>& tape, const TensorPtr<T>& image) const {
        return similarity(tape, flatten_features(tape, features(tape, image)));
    }
};

// Diseases whose binary probability strictly exceeds 0.5; empty set means
// no-findings.
template <class T>
std::set<int> multilabel_decision(const Prediction<T>& pred) {
    std::set<int> out;
    const int C = pred.probs->dims[1];
    for (int c = 0; c < C; ++c)
        if (pred.probs->values[static_cast<size_t>(c)] > T(0.5)) out.insert(c);
    return out;
}

}  // namespace cipl
