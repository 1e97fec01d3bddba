#pragma once

#include <utility>

#include "cipl/tensor.hpp"

namespace cipl {

// Parameter-free cross-image attention. Affinity uses the negative squared
// L2 distance, the same metric the prototype layer uses.
template <class T>
TensorPtr<T> affinity(Tape<T>& tape, const TensorPtr<T>& fa, const TensorPtr<T>& fb) {
    return neg(tape, pairwise_sqdist(tape, fa, fb));
}

template <class T>
struct CoAttention {
    TensorPtr<T> affinity;    // [HWa, HWb]
    TensorPtr<T> weights_a;   // column-wise softmax of A
    TensorPtr<T> weights_b;   // column-wise softmax of A^T
    TensorPtr<T> summary_a;   // [HWa, D]; row i = sum_j Wb[j,i] * fb_j
    TensorPtr<T> summary_b;   // [HWb, D]; row j = sum_i Wa[i,j] * fa_i
};

// Each position of one image aggregates the partner image's feature vectors
// with softmax-normalized affinities; every summary row is a convex
// combination of partner rows.
template <class T>
CoAttention<T> coattend(Tape<T>& tape, const TensorPtr<T>& fa, const TensorPtr<T>& fb) {
    CoAttention<T> co;
    co.affinity = affinity(tape, fa, fb);
    co.weights_a = softmax_cols(tape, co.affinity);
    co.weights_b = softmax_cols(tape, transpose(tape, co.affinity));
    co.summary_a = transpose(tape, matmul(tape, transpose(tape, fb), co.weights_b));
    co.summary_b = transpose(tape, matmul(tape, transpose(tape, fa), co.weights_a));
    return co;
}

}  // namespace cipl
