#pragma once

#include <cstdint>
#include <vector>

#include "cipl/coattention.hpp"
#include "cipl/error.hpp"
#include "cipl/model.hpp"
#include "cipl/tensor.hpp"

namespace cipl {

struct LossWeights {
    double alpha1 = 0.02;
    double alpha2 = 0.5;
    double alpha3 = 0.5;
    double alpha4 = 0.5;
    double tau = 2.0;

    void validate() const {
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0 || tau < 0)
            throw ConfigError("loss weights must be non-negative");
    }
};

using LabelVec = std::vector<int>;  // C bits

// Probability floor applied before logs; keeps confident targets finite.
inline constexpr double kProbFloor = 1e-7;

// Mean over classes of the two-way cross-entropy between the (disease,
// no-findings) pair and the one-hot target selected by y^c.
template <class T>
TensorPtr<T> ce_multilabel(Tape<T>& tape, const Prediction<T>& pred, const LabelVec& y) {
    const int C = pred.probs->dims[1];
    if (static_cast<int>(y.size()) != C)
        throw ShapeError("label vector length " + std::to_string(y.size()) + ", expected " +
                         std::to_string(C));
    auto mask = make_tensor<T>({2, C});
    for (int c = 0; c < C; ++c) {
        mask->values[static_cast<size_t>(c)] = y[c] ? T(1) : T(0);
        mask->values[static_cast<size_t>(C + c)] = y[c] ? T(0) : T(1);
    }
    auto logp = log_op(tape, clamp(tape, pred.probs, T(kProbFloor), T(1.0 - kProbFloor)));
    auto picked = sum(tape, mul(tape, mask, logp));
    return scale(tape, picked, T(-1) / static_cast<T>(C));
}

// Indices of the prototypes owned by the label set (all positive classes, or
// the no-findings class when y is all-negative) and its complement.
template <class T>
std::pair<std::vector<int>, std::vector<int>> split_prototypes(const Model<T>& model,
                                                               const LabelVec& y) {
    const int C = model.cfg.num_classes;
    bool any = false;
    for (int c = 0; c < C; ++c) any = any || (y[c] != 0);
    std::vector<int> own, other;
    for (int n = 0; n < model.cfg.num_prototypes(); ++n) {
        const int cls = model.class_of(n);
        const bool owned = any ? (cls < C && y[cls] != 0) : (cls == C);
        (owned ? own : other).push_back(n);
    }
    return {own, other};
}

// Eq-style clustering term for one image: smallest squared distance between
// any patch and any own-class prototype.
template <class T>
TensorPtr<T> cluster_loss(Tape<T>& tape, const TensorPtr<T>& sqdist, const Model<T>& model,
                          const LabelVec& y) {
    const auto own = split_prototypes(model, y).first;
    return reduce_min_all(tape, gather_cols(tape, sqdist, own));
}

// Hinge on the smallest distance to any other-class prototype.
template <class T>
TensorPtr<T> separation_loss(Tape<T>& tape, const TensorPtr<T>& sqdist, const Model<T>& model,
                             const LabelVec& y, T tau) {
    const auto other = split_prototypes(model, y).second;
    if (other.empty()) throw ShapeError("separation loss needs at least one other-class prototype");
    auto mind = reduce_min_all(tape, gather_cols(tape, sqdist, other));
    return relu(tape, add_scalar(tape, neg(tape, mind), tau));
}

inline LabelVec intersect_labels(const LabelVec& a, const LabelVec& b) {
    LabelVec out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
    return out;
}

// Cross-image loss: both co-attentive feature maps classified against the
// common labels. An all-zero intersection supervises every task negative.
template <class T>
TensorPtr<T> cross_loss(Tape<T>& tape, const Model<T>& model, const TensorPtr<T>& summary_a,
                        const TensorPtr<T>& summary_b, const LabelVec& ya, const LabelVec& yb) {
    const LabelVec common = intersect_labels(ya, yb);
    auto sa = model.similarity(tape, summary_a);
    auto sb = model.similarity(tape, summary_b);
    auto la = ce_multilabel(tape, model.classify(tape, sa.scores), common);
    auto lb = ce_multilabel(tape, model.classify(tape, sb.scores), common);
    return add(tape, la, lb);
}

// Interpretation alignment: negative mean per-position cosine between the
// two views' similarity stacks ([HW, N] each). The target stack is a
// constant when it comes from the EMA branch.
template <class T>
TensorPtr<T> interp_align_loss(Tape<T>& tape, const TensorPtr<T>& s_cur, const TensorPtr<T>& s_tgt) {
    detail::check_same_dims(s_cur, s_tgt, "interp_align_loss");
    auto ones = make_tensor<T>({s_cur->dims[1], 1});
    std::fill(ones->values.begin(), ones->values.end(), T(1));
    auto dots = matmul(tape, mul(tape, s_cur, s_tgt), ones);                     // [HW,1]
    auto n_cur = sqrt_op(tape, matmul(tape, square(tape, s_cur), ones));         // [HW,1]
    auto n_tgt = sqrt_op(tape, matmul(tape, square(tape, s_tgt), ones));
    auto denom = add_scalar(tape, mul(tape, n_cur, n_tgt), T(1e-8));
    auto cos_rows = div(tape, dots, denom);
    return neg(tape, mean(tape, cos_rows));
}

// Batch-level Gram alignment. Each element of `cur`/`tgt` is a [2,C] binary
// prediction matrix; per class the |B|x2 blocks form Gram matrices whose
// squared Frobenius distance is averaged over classes and |B|^2.
template <class T>
TensorPtr<T> pred_align_loss(Tape<T>& tape, const std::vector<TensorPtr<T>>& cur,
                             const std::vector<TensorPtr<T>>& tgt) {
    if (cur.size() != tgt.size())
        throw ShapeError("pred_align batch sizes " + std::to_string(cur.size()) + " vs " +
                         std::to_string(tgt.size()));
    const int B = static_cast<int>(cur.size());
    if (B == 0) throw ShapeError("pred_align on empty batch");
    const int C = cur[0]->dims[1];
    TensorPtr<T> total;
    for (int c = 0; c < C; ++c) {
        std::vector<TensorPtr<T>> rows_cur, rows_tgt;
        rows_cur.reserve(B);
        rows_tgt.reserve(B);
        for (int i = 0; i < B; ++i) {
            rows_cur.push_back(transpose(tape, gather_cols(tape, cur[i], {c})));  // [1,2]
            rows_tgt.push_back(transpose(tape, gather_cols(tape, tgt[i], {c})));
        }
        auto yc = concat_rows(tape, rows_cur);   // [B,2]
        auto ycp = concat_rows(tape, rows_tgt);
        auto g = matmul(tape, yc, transpose(tape, yc));
        auto gp = matmul(tape, ycp, transpose(tape, ycp));
        auto term = sum(tape, square(tape, sub(tape, g, gp)));
        total = total ? add(tape, total, term) : term;
    }
    return scale(tape, total, T(1) / (T(C) * T(B) * T(B)));
}

// Sample-level KL variant (the rejected alternative, kept as an ablation
// flag): mean over batch and classes of KL(target || current).
template <class T>
TensorPtr<T> pred_align_kl_loss(Tape<T>& tape, const std::vector<TensorPtr<T>>& cur,
                                const std::vector<TensorPtr<T>>& tgt) {
    if (cur.size() != tgt.size())
        throw ShapeError("pred_align_kl batch sizes " + std::to_string(cur.size()) + " vs " +
                         std::to_string(tgt.size()));
    const int B = static_cast<int>(cur.size());
    if (B == 0) throw ShapeError("pred_align_kl on empty batch");
    const int C = cur[0]->dims[1];
    TensorPtr<T> total;
    for (int i = 0; i < B; ++i) {
        auto p_tgt = clamp(tape, tgt[i], T(kProbFloor), T(1.0 - kProbFloor));
        auto p_cur = clamp(tape, cur[i], T(kProbFloor), T(1.0 - kProbFloor));
        auto kl = sum(tape, mul(tape, p_tgt, sub(tape, log_op(tape, p_tgt), log_op(tape, p_cur))));
        total = total ? add(tape, total, kl) : kl;
    }
    return scale(tape, total, T(1) / (T(B) * T(C)));
}

struct LossRecord {
    double ce = 0, cluster = 0, separation = 0;
    double cross = 0, inte = 0, pred = 0;
    double total = 0;
};

// L_total = L_basic + a2 L_cross + a3 L_inte + a4 L_pred, with
// L_basic = ce_a + ce_b + a1 (L_cst + L_sep). During warm-up only the basic
// terms are active.
template <class T>
TensorPtr<T> total_loss(Tape<T>& tape, const TensorPtr<T>& ce, const TensorPtr<T>& cluster,
                        const TensorPtr<T>& separation, const TensorPtr<T>& cross,
                        const TensorPtr<T>& inte, const TensorPtr<T>& pred,
                        const LossWeights& w, bool warmup) {
    auto basic = add(tape, ce,
                     scale(tape, add(tape, cluster, separation), static_cast<T>(w.alpha1)));
    if (warmup) return basic;
    TensorPtr<T> out = basic;
    if (cross) out = add(tape, out, scale(tape, cross, static_cast<T>(w.alpha2)));
    if (inte) out = add(tape, out, scale(tape, inte, static_cast<T>(w.alpha3)));
    if (pred) out = add(tape, out, scale(tape, pred, static_cast<T>(w.alpha4)));
    return out;
}

}  // namespace cipl
