#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cipl/error.hpp"
#include "cipl/rng.hpp"
#include "cipl/tensor.hpp"

namespace cipl {

// Feature extractor: per channel-plan entry one block of (3x3 conv, ReLU,
// 2x2 max-pool), then two 1x1 convolutions, the first ReLU- and the second
// Sigmoid-activated, fixing the feature dimension. Total stride 2^blocks.
struct BackboneConfig {
    int image_size = 64;
    int in_channels = 1;
    std::vector<int> channel_plan{16, 32, 64};
    int feature_dim = 64;

    int stride() const { return 1 << static_cast<int>(channel_plan.size()); }
    int feature_extent() const { return image_size / stride(); }

    void validate() const {
        if (image_size <= 0 || in_channels <= 0 || feature_dim <= 0 || channel_plan.empty())
            throw ConfigError("backbone config has non-positive extents");
        if (image_size % stride() != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " not divisible by total stride " + std::to_string(stride()));
    }
};

template <class T>
struct Backbone {
    BackboneConfig cfg;
    std::vector<TensorPtr<T>> weights;  // one [kh,kw,Cin,Cout] per conv
    std::vector<TensorPtr<T>> biases;   // one [Cout] per conv

    static Backbone init(const BackboneConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Backbone bb;
        bb.cfg = cfg;
        Rng rng(mix_seed(seed, 0x6262));  // "bb"
        int cin = cfg.in_channels;
        auto add_conv = [&](int kh, int kw, int cout) {
            auto w = make_tensor<T>({kh, kw, cin, cout}, true);
            const double std = std::sqrt(2.0 / (kh * kw * cin));
            for (auto& v : w->values) v = static_cast<T>(rng.normal(0.0, std));
            bb.weights.push_back(w);
            bb.biases.push_back(make_tensor<T>({cout}, true));
            cin = cout;
        };
        for (int cout : cfg.channel_plan) add_conv(3, 3, cout);
        add_conv(1, 1, cfg.feature_dim);
        add_conv(1, 1, cfg.feature_dim);
        return bb;
    }

    // x[H,W,ch] -> F[H/stride, W/stride, D]; Sigmoid keeps every feature in (0,1).
    TensorPtr<T> forward(Tape<T>& tape, const TensorPtr<T>& x) const {
        if (x->dims.size() != 3 || x->dims[0] != cfg.image_size || x->dims[1] != cfg.image_size ||
            x->dims[2] != cfg.in_channels)
            throw ShapeError("backbone input " + dims_str(x->dims) + ", expected " +
                             dims_str({cfg.image_size, cfg.image_size, cfg.in_channels}));
        TensorPtr<T> h = x;
        const size_t blocks = cfg.channel_plan.size();
        for (size_t i = 0; i < blocks; ++i) {
            h = conv2d(tape, h, weights[i], biases[i], 1, 1);
            h = relu(tape, h);
            h = maxpool2x2(tape, h);
        }
        h = relu(tape, conv2d(tape, h, weights[blocks], biases[blocks], 1, 0));
        h = sigmoid(tape, conv2d(tape, h, weights[blocks + 1], biases[blocks + 1], 1, 0));
        return h;
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, TensorPtr<T>>>& out) const {
        for (size_t i = 0; i < weights.size(); ++i) {
            out.emplace_back(prefix + "conv" + std::to_string(i) + ".w", weights[i]);
            out.emplace_back(prefix + "conv" + std::to_string(i) + ".b", biases[i]);
        }
    }
};

}  // namespace cipl
