#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cipl/rng.hpp"
#include "cipl/tensor.hpp"

namespace testutil {

template <class T>
cipl::TensorPtr<T> random_tensor(std::vector<int> dims, cipl::Rng& rng, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = true) {
    auto t = cipl::make_tensor<T>(std::move(dims), requires_grad);
    for (auto& v : t->values) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Central finite-difference oracle. `build` must re-evaluate the scalar loss
// from the parameters' *current* values on a fresh tape. The relative error
// uses a floor scaled by the largest gradient magnitude so near-zero
// coordinates do not divide by noise.
template <class T>
GradCheckResult gradcheck(const std::function<cipl::TensorPtr<T>(cipl::Tape<T>&)>& build,
                          const std::vector<cipl::TensorPtr<T>>& params, double h = 1e-5) {
    using cipl::Tape;
    Tape<T> tape;
    for (const auto& p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    auto loss = build(tape);
    tape.backward(loss);

    double max_grad = 0.0;
    for (const auto& p : params)
        for (T g : p->grad) max_grad = std::max(max_grad, std::abs(static_cast<double>(g)));

    GradCheckResult res;
    for (const auto& p : params) {
        for (size_t i = 0; i < p->values.size(); ++i) {
            const T old = p->values[i];
            p->values[i] = old + static_cast<T>(h);
            Tape<T> t1;
            const double lp = static_cast<double>(build(t1)->values[0]);
            p->values[i] = old - static_cast<T>(h);
            Tape<T> t2;
            const double lm = static_cast<double>(build(t2)->values[0]);
            p->values[i] = old;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = static_cast<double>(p->grad[i]);
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-3 * max_grad, 1e-8});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace testutil
