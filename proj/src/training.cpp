#include "cipl/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "cipl/checkpoint.hpp"
#include "cipl/projection.hpp"

namespace fs = std::filesystem;

namespace cipl {

namespace {

Model<float> clone_frozen(const Model<float>& m) {
    Model<float> out;
    out.cfg = m.cfg;
    out.backbone.cfg = m.cfg.backbone;
    for (size_t i = 0; i < m.backbone.weights.size(); ++i) {
        out.backbone.weights.push_back(
            make_tensor<float>(m.backbone.weights[i]->dims, m.backbone.weights[i]->values));
        out.backbone.biases.push_back(
            make_tensor<float>(m.backbone.biases[i]->dims, m.backbone.biases[i]->values));
    }
    out.prototypes = make_tensor<float>(m.prototypes->dims, m.prototypes->values);
    out.fc = make_tensor<float>(m.fc->dims, m.fc->values);
    out.sources = m.sources;
    out.projected = m.projected;
    return out;
}

void check_term(double v, const char* term, int epoch, int step) {
    if (!std::isfinite(v))
        throw Error(std::string("non-finite ") + term + " loss at epoch " + std::to_string(epoch) +
                    " step " + std::to_string(step));
}

struct SampleForward {
    SimStack<float> sim;
    Prediction<float> pred;
    TensorPtr<float> feat_flat;
};

SampleForward forward_image(Tape<float>& tape, const Model<float>& model, const Image& img) {
    SampleForward out;
    auto x = image_to_tensor<float>(img);
    out.feat_flat = model.flatten_features(tape, model.features(tape, x));
    out.sim = model.similarity(tape, out.feat_flat);
    out.pred = model.classify(tape, out.sim.scores);
    return out;
}

void adam_step(TrainState& st) {
    auto& a = st.adam;
    ++a.step;
    const double bc1 = 1.0 - std::pow(a.beta1, a.step);
    const double bc2 = 1.0 - std::pow(a.beta2, a.step);
    for (auto& [name, t] : st.model.named_params()) {
        auto& m = a.m[name];
        auto& v = a.v[name];
        if (m.size() != t->values.size()) m.assign(t->values.size(), 0.0f);
        if (v.size() != t->values.size()) v.assign(t->values.size(), 0.0f);
        if (t->grad.empty()) continue;
        for (size_t i = 0; i < t->values.size(); ++i) {
            const float g = t->grad[i];
            m[i] = static_cast<float>(a.beta1) * m[i] + static_cast<float>(1.0 - a.beta1) * g;
            v[i] = static_cast<float>(a.beta2) * v[i] + static_cast<float>(1.0 - a.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t->values[i] -= static_cast<float>(static_cast<double>(st.lr) * mhat / (std::sqrt(vhat) + a.eps));
        }
    }
}

}  // namespace

TrainState init_training(const ModelConfig& mc, const TrainConfig& tc) {
    tc.validate();
    TrainState st;
    st.model = Model<float>::init(mc, tc.seed);
    st.ema = clone_frozen(st.model);
    st.lr = static_cast<float>(tc.learning_rate);
    return st;
}

LossRecord train_step(TrainState& st, const Dataset& ds, const PairSampler& sampler, Rng& rng,
                      const TrainConfig& tc, bool warmup) {
    Tape<float> tape;
    st.model.zero_grad();

    const int B = tc.batch_size;
    TensorPtr<float> ce_sum, cluster_sum, sep_sum, cross_sum, inte_sum;
    std::vector<TensorPtr<float>> probs_cur, probs_tgt;
    auto acc = [&tape](TensorPtr<float>& slot, const TensorPtr<float>& term) {
        slot = slot ? add(tape, slot, term) : term;
    };

    for (int b = 0; b < B; ++b) {
        const auto [ia, ib] = sampler.sample(rng);
        const auto& sample_a = ds.samples[static_cast<size_t>(ia)];
        const auto& sample_b = ds.samples[static_cast<size_t>(ib)];

        Image img_a;
        Image img_a_view2;
        bool has_a_view2 = false;
        if (tc.symmetrize_views) {
            TwoViews va = two_view_augment(sample_a.image, rng);
            img_a = std::move(va.view1);
            img_a_view2 = std::move(va.view2);
            has_a_view2 = true;
        } else {
            img_a = augment_single(sample_a.image, rng);
        }
        TwoViews vb = two_view_augment(sample_b.image, rng);

        auto fa = forward_image(tape, st.model, img_a);
        auto fb = forward_image(tape, st.model, vb.view1);

        acc(ce_sum, add(tape, ce_multilabel(tape, fa.pred, sample_a.labels),
                        ce_multilabel(tape, fb.pred, sample_b.labels)));
        acc(cluster_sum, add(tape, cluster_loss(tape, fa.sim.sqdist, st.model, sample_a.labels),
                             cluster_loss(tape, fb.sim.sqdist, st.model, sample_b.labels)));
        const float tau = static_cast<float>(tc.weights.tau);
        acc(sep_sum, add(tape, separation_loss(tape, fa.sim.sqdist, st.model, sample_a.labels, tau),
                         separation_loss(tape, fb.sim.sqdist, st.model, sample_b.labels, tau)));

        if (warmup) continue;

        if (!tc.ablate_cross) {
            auto co = coattend(tape, fa.feat_flat, fb.feat_flat);
            acc(cross_sum, cross_loss(tape, st.model, co.summary_a, co.summary_b, sample_a.labels,
                                      sample_b.labels));
        }
        if (!tc.ablate_inte || !tc.ablate_pred) {
            auto tgt_b = forward_image(tape, st.ema, vb.view2);
            if (!tc.ablate_inte) acc(inte_sum, interp_align_loss(tape, fb.sim.maps, tgt_b.sim.maps));
            probs_cur.push_back(fb.pred.probs);
            probs_tgt.push_back(tgt_b.pred.probs);
            if (has_a_view2) {
                auto tgt_a = forward_image(tape, st.ema, img_a_view2);
                if (!tc.ablate_inte)
                    acc(inte_sum, interp_align_loss(tape, fa.sim.maps, tgt_a.sim.maps));
                probs_cur.push_back(fa.pred.probs);
                probs_tgt.push_back(tgt_a.pred.probs);
            }
        }
    }

    const float invB = 1.0f / static_cast<float>(B);
    auto ce = scale(tape, ce_sum, invB);
    auto cluster = scale(tape, cluster_sum, invB);
    auto sep = scale(tape, sep_sum, invB);
    TensorPtr<float> cross, inte, pred;
    if (cross_sum) cross = scale(tape, cross_sum, invB);
    if (inte_sum)
        inte = scale(tape, inte_sum, 1.0f / static_cast<float>(tc.symmetrize_views ? 2 * B : B));
    if (!warmup && !tc.ablate_pred && !probs_cur.empty())
        pred = tc.pred_kl ? pred_align_kl_loss(tape, probs_cur, probs_tgt)
                          : pred_align_loss(tape, probs_cur, probs_tgt);

    auto total = total_loss(tape, ce, cluster, sep, cross, inte, pred, tc.weights, warmup);

    LossRecord rec;
    rec.ce = ce->values[0];
    rec.cluster = cluster->values[0];
    rec.separation = sep->values[0];
    rec.cross = cross ? cross->values[0] : 0.0;
    rec.inte = inte ? inte->values[0] : 0.0;
    rec.pred = pred ? pred->values[0] : 0.0;
    rec.total = total->values[0];
    check_term(rec.ce, "cross-entropy", st.completed_epochs, static_cast<int>(st.adam.step));
    check_term(rec.cluster, "cluster", st.completed_epochs, static_cast<int>(st.adam.step));
    check_term(rec.separation, "separation", st.completed_epochs, static_cast<int>(st.adam.step));
    check_term(rec.cross, "cross-image", st.completed_epochs, static_cast<int>(st.adam.step));
    check_term(rec.inte, "interpretation-alignment", st.completed_epochs,
               static_cast<int>(st.adam.step));
    check_term(rec.pred, "prediction-alignment", st.completed_epochs,
               static_cast<int>(st.adam.step));
    check_term(rec.total, "total", st.completed_epochs, static_cast<int>(st.adam.step));

    tape.backward(total);
    adam_step(st);
    ema_update_model(st.ema, st.model, tc.ema_momentum);
    return rec;
}

namespace {

constexpr const char* kMetaName = "meta";

std::vector<NamedTensor> state_to_tensors(const TrainState& st, bool include_ema) {
    std::vector<NamedTensor> out;
    const auto& mc = st.model.cfg;
    NamedTensor meta;
    meta.name = kMetaName;
    meta.data = {static_cast<float>(mc.backbone.image_size),
                 static_cast<float>(mc.backbone.in_channels),
                 static_cast<float>(mc.backbone.feature_dim),
                 static_cast<float>(mc.num_classes),
                 static_cast<float>(mc.prototypes_per_class),
                 static_cast<float>(st.completed_epochs),
                 static_cast<float>(st.adam.step),
                 static_cast<float>(st.lr),
                 st.model.projected ? 1.0f : 0.0f,
                 static_cast<float>(mc.backbone.channel_plan.size())};
    for (int c : mc.backbone.channel_plan) meta.data.push_back(static_cast<float>(c));
    meta.dims = {static_cast<int>(meta.data.size())};
    out.push_back(std::move(meta));

    NamedTensor hist;
    hist.name = "sched.history";
    for (float h : st.epoch_mean_history) hist.data.push_back(h);
    hist.dims = {static_cast<int>(hist.data.size())};
    out.push_back(std::move(hist));

    NamedTensor src;
    src.name = "proto.sources";
    src.dims = {mc.num_prototypes(), 4};
    for (const auto& s : st.model.sources) {
        src.data.push_back(static_cast<float>(s.image_id));
        src.data.push_back(static_cast<float>(s.row));
        src.data.push_back(static_cast<float>(s.col));
        src.data.push_back(static_cast<float>(s.similarity));
    }
    out.push_back(std::move(src));

    for (const auto& [name, t] : st.model.named_params()) {
        NamedTensor nt;
        nt.name = name;
        nt.dims = t->dims;
        nt.data = t->values;
        out.push_back(std::move(nt));
    }
    for (const auto& [name, m] : st.adam.m) {
        NamedTensor nt;
        nt.name = "adam.m." + name;
        nt.dims = {static_cast<int>(m.size())};
        nt.data = m;
        out.push_back(std::move(nt));
    }
    for (const auto& [name, v] : st.adam.v) {
        NamedTensor nt;
        nt.name = "adam.v." + name;
        nt.dims = {static_cast<int>(v.size())};
        nt.data = v;
        out.push_back(std::move(nt));
    }
    if (include_ema) {
        for (const auto& [name, t] : st.ema.named_params()) {
            NamedTensor nt;
            nt.name = "ema." + name;
            nt.dims = t->dims;
            nt.data = t->values;
            out.push_back(std::move(nt));
        }
    }
    return out;
}

}  // namespace

void save_state(const std::string& path, const TrainState& st, bool include_ema) {
    save_checkpoint(path, state_to_tensors(st, include_ema));
}

TrainState load_state(const std::string& path) {
    auto tensors = load_checkpoint(path);
    auto find = [&](const std::string& name) -> const NamedTensor* {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    };
    const NamedTensor* meta = find(kMetaName);
    if (!meta || meta->data.size() < 10) throw IoError(path + ": missing model metadata");

    ModelConfig mc;
    mc.backbone.image_size = static_cast<int>(meta->data[0]);
    mc.backbone.in_channels = static_cast<int>(meta->data[1]);
    mc.backbone.feature_dim = static_cast<int>(meta->data[2]);
    mc.num_classes = static_cast<int>(meta->data[3]);
    mc.prototypes_per_class = static_cast<int>(meta->data[4]);
    const int plan_len = static_cast<int>(meta->data[9]);
    mc.backbone.channel_plan.clear();
    for (int i = 0; i < plan_len; ++i)
        mc.backbone.channel_plan.push_back(static_cast<int>(meta->data[static_cast<size_t>(10 + i)]));

    TrainState st;
    st.model = Model<float>::init(mc, 0);
    st.completed_epochs = static_cast<int>(meta->data[5]);
    st.adam.step = static_cast<long>(meta->data[6]);
    st.lr = meta->data[7];
    st.model.projected = meta->data[8] != 0.0f;

    if (const NamedTensor* hist = find("sched.history"))
        for (float h : hist->data) st.epoch_mean_history.push_back(h);

    for (auto& [name, t] : st.model.named_params()) {
        const NamedTensor* nt = find(name);
        if (!nt) throw IoError(path + ": checkpoint missing tensor '" + name + "'");
        if (nt->dims != t->dims)
            throw IoError(path + ": tensor '" + name + "' dims " + dims_str(nt->dims) +
                          " do not match model " + dims_str(t->dims));
        t->values = nt->data;
        if (const NamedTensor* am = find("adam.m." + name)) st.adam.m[name] = am->data;
        if (const NamedTensor* av = find("adam.v." + name)) st.adam.v[name] = av->data;
    }
    if (const NamedTensor* src = find("proto.sources")) {
        st.model.sources.assign(static_cast<size_t>(mc.num_prototypes()), ProtoSource{});
        for (int n = 0; n < mc.num_prototypes(); ++n) {
            auto& s = st.model.sources[static_cast<size_t>(n)];
            s.image_id = static_cast<int>(src->data[static_cast<size_t>(n) * 4 + 0]);
            s.row = static_cast<int>(src->data[static_cast<size_t>(n) * 4 + 1]);
            s.col = static_cast<int>(src->data[static_cast<size_t>(n) * 4 + 2]);
            s.similarity = src->data[static_cast<size_t>(n) * 4 + 3];
        }
    }
    st.ema = clone_frozen(st.model);
    for (auto& [name, t] : st.ema.named_params()) {
        if (const NamedTensor* nt = find("ema." + name)) t->values = nt->data;
    }
    return st;
}

void fit(TrainState& st, const Dataset& ds, const TrainConfig& tc, const StepCallback& on_step,
         const EpochCallback& on_epoch) {
    tc.validate();
    const int total_epochs = tc.warmup_epochs + tc.main_epochs;
    const int steps =
        tc.steps_per_epoch > 0
            ? tc.steps_per_epoch
            : std::max(1, static_cast<int>(ds.samples.size()) / tc.batch_size);
    PairSampler sampler([&] {
        std::vector<std::vector<int>> labels;
        for (const auto& s : ds.samples) labels.push_back(s.labels);
        return labels;
    }());

    // resume from the newest epoch checkpoint below the target epoch count
    if (!tc.checkpoint_dir.empty() && fs::exists(tc.checkpoint_dir)) {
        int best = -1;
        for (const auto& e : fs::directory_iterator(tc.checkpoint_dir)) {
            const std::string name = e.path().filename().string();
            if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".cipl") {
                const int num = std::atoi(name.substr(6).c_str());
                if (num > best && num <= total_epochs) best = num;
            }
        }
        if (best > 0) {
            st = load_state(tc.checkpoint_dir + "/epoch_" + std::to_string(best) + ".cipl");
        }
    }

    for (int epoch = st.completed_epochs; epoch < total_epochs; ++epoch) {
        const bool warmup = epoch < tc.warmup_epochs;
        Rng rng(mix_seed(tc.seed, 0xE70000ULL + static_cast<std::uint64_t>(epoch)));
        double total_acc = 0.0;
        for (int s = 0; s < steps; ++s) {
            LossRecord rec = train_step(st, ds, sampler, rng, tc, warmup);
            total_acc += rec.total;
            if (on_step) on_step(epoch, s, rec);
        }
        st.epoch_mean_history.push_back(static_cast<float>(total_acc / steps));
        st.completed_epochs = epoch + 1;

        // decay x0.5 when the epoch-mean total improves < 1% for 2
        // consecutive epochs, checked every 5 epochs
        if ((epoch + 1) % 5 == 0 && st.epoch_mean_history.size() >= 3) {
            const auto& h = st.epoch_mean_history;
            const float e0 = h[h.size() - 3], e1 = h[h.size() - 2], e2 = h[h.size() - 1];
            const bool s1 = e1 > e0 * 0.99f;
            const bool s2 = e2 > e1 * 0.99f;
            if (s1 && s2) st.lr *= 0.5f;
        }

        const bool last = epoch + 1 == total_epochs;
        const bool project = !warmup || tc.project_during_warmup || last;
        if (project) project_prototypes(st.model, ds);
        if (!tc.checkpoint_dir.empty()) {
            fs::create_directories(tc.checkpoint_dir);
            save_state(tc.checkpoint_dir + "/epoch_" + std::to_string(epoch + 1) + ".cipl", st, true);
        }
        if (on_epoch) on_epoch(epoch, total_acc / steps, st.lr, project);
    }
    if (!tc.checkpoint_path.empty()) save_state(tc.checkpoint_path, st, tc.keep_ema);
}

}  // namespace cipl
