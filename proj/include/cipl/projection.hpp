#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "cipl/data.hpp"
#include "cipl/error.hpp"
#include "cipl/model.hpp"

namespace cipl {

template <class T>
TensorPtr<T> image_to_tensor(const Image& img) {
    auto t = make_tensor<T>({img.height, img.width, img.channels});
    for (size_t i = 0; i < img.pixels.size(); ++i) t->values[i] = static_cast<T>(img.pixels[i]);
    return t;
}

// Per-image flattened feature matrices [HW, D], computed without gradients.
template <class T>
std::vector<std::vector<T>> dataset_features(const Model<T>& model, const Dataset& ds) {
    std::vector<std::vector<T>> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        Tape<T> tape;  // stays empty: inputs carry no gradient requirement
        auto F = model.features(tape, image_to_tensor<T>(s.image));
        out.push_back(F->values);
    }
    return out;
}

// Replace every prototype with the nearest same-class training patch feature.
// Greedy non-repetition: within one class, each prototype must come from a
// distinct training image; when the nearest image is taken, the next-most-
// similar patch from an unused image wins.
template <class T>
void project_prototypes(Model<T>& model, const Dataset& ds,
                        const std::vector<std::vector<T>>* features_cache = nullptr) {
    const int C = model.cfg.num_classes;
    const int M = model.cfg.prototypes_per_class;
    const int D = model.cfg.backbone.feature_dim;

    std::vector<std::vector<T>> features;
    const std::vector<std::vector<T>>* feats = features_cache;
    if (!feats) {
        features = dataset_features(model, ds);
        feats = &features;
    }
    const int hw = static_cast<int>((*feats)[0].size()) / D;
    const int side = model.cfg.backbone.feature_extent();

    // candidate images per class; no-findings draws from all-negative images
    std::vector<std::vector<int>> class_images(static_cast<size_t>(C) + 1);
    for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) {
        const auto& y = ds.samples[static_cast<size_t>(i)].labels;
        bool any = false;
        for (int c = 0; c < C; ++c) {
            if (y[static_cast<size_t>(c)]) {
                class_images[static_cast<size_t>(c)].push_back(i);
                any = true;
            }
        }
        if (!any) class_images[static_cast<size_t>(C)].push_back(i);
    }
    for (int cls = 0; cls <= C; ++cls) {
        if (static_cast<int>(class_images[static_cast<size_t>(cls)].size()) < M)
            throw ProjectionError(
                "class " + std::to_string(cls) + " has only " +
                std::to_string(class_images[static_cast<size_t>(cls)].size()) +
                " source images, need at least " + std::to_string(M) + " distinct ones");
    }

    for (int cls = 0; cls <= C; ++cls) {
        std::vector<char> used(ds.samples.size(), 0);
        for (int n = cls * M; n < (cls + 1) * M; ++n) {
            const T* proto = model.prototypes->values.data() + static_cast<size_t>(n) * D;
            T best = std::numeric_limits<T>::max();
            int best_img = -1, best_patch = -1;
            for (int img : class_images[static_cast<size_t>(cls)]) {
                if (used[static_cast<size_t>(img)]) continue;
                const T* f = (*feats)[static_cast<size_t>(img)].data();
                for (int p = 0; p < hw; ++p) {
                    const T* row = f + static_cast<size_t>(p) * D;
                    T acc = 0;
                    for (int d = 0; d < D; ++d) {
                        const T diff = row[d] - proto[d];
                        acc += diff * diff;
                    }
                    if (acc < best) {
                        best = acc;
                        best_img = img;
                        best_patch = p;
                    }
                }
            }
            if (best_img < 0)
                throw ProjectionError("class " + std::to_string(cls) +
                                      " ran out of distinct source images during projection");
            used[static_cast<size_t>(best_img)] = 1;
            const T* src = (*feats)[static_cast<size_t>(best_img)].data() +
                           static_cast<size_t>(best_patch) * D;
            std::memcpy(model.prototypes->values.data() + static_cast<size_t>(n) * D, src,
                        sizeof(T) * static_cast<size_t>(D));
            ProtoSource& ps = model.sources[static_cast<size_t>(n)];
            ps.image_id = best_img;
            ps.row = best_patch / side;
            ps.col = best_patch % side;
            ps.similarity = std::exp(-static_cast<double>(best) / D);
        }
    }
    model.projected = true;
}

}  // namespace cipl
