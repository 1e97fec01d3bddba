#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cipl/error.hpp"
#include "cipl/threads.hpp"

namespace cipl {

// Dense row-major tensor with an additively-accumulated gradient slot.
// 64-bit instantiation backs the gradient-check tests, 32-bit backs training.
template <class T>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> values;
    std::vector<T> grad;  // sized lazily on first accumulation
    bool requires_grad = false;

    std::int64_t size() const {
        std::int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

inline std::string dims_str(const std::vector<int>& d) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < d.size(); ++i) os << (i ? "x" : "") << d[i];
    os << "]";
    return os.str();
}

template <class T>
TensorPtr<T> make_tensor(std::vector<int> dims, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->dims = std::move(dims);
    t->values.assign(static_cast<size_t>(t->size()), T(0));
    t->requires_grad = requires_grad;
    return t;
}

template <class T>
TensorPtr<T> make_tensor(std::vector<int> dims, std::vector<T> values, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->dims = std::move(dims);
    if (static_cast<std::int64_t>(values.size()) != t->size())
        throw ShapeError("tensor value count " + std::to_string(values.size()) +
                         " does not fill dims " + dims_str(t->dims));
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

// Ordered record of executed kernels; one reverse sweep visits the closures
// in exact reverse execution order, accumulating gradients additively.
template <class T>
struct Tape {
    std::vector<std::function<void()>> nodes;

    void record(std::function<void()> backward) { nodes.push_back(std::move(backward)); }

    void backward(const TensorPtr<T>& root) {
        if (root->size() != 1)
            throw ShapeError("backward root must be scalar, got " + dims_str(root->dims));
        root->ensure_grad();
        root->grad[0] += T(1);
        for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) (*it)();
    }

    void clear() { nodes.clear(); }
};

namespace detail {

template <class T>
inline void check_finite(const Tensor<T>& t, const char* kernel) {
#ifndef NDEBUG
    for (T v : t.values) {
        if (!std::isfinite(static_cast<double>(v)))
            throw DomainError(std::string(kernel) + " produced a non-finite value");
    }
#else
    (void)t;
    (void)kernel;
#endif
}

template <class T>
inline bool needs_grad(const TensorPtr<T>& a) {
    return a && a->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: c[m,n] = a[m,k] . b[k,n]
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> matmul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->dims.size() != 2 || b->dims.size() != 2 || a->dims[1] != b->dims[0])
        throw ShapeError("matmul dims " + dims_str(a->dims) + " x " + dims_str(b->dims));
    const int m = a->dims[0], k = a->dims[1], n = b->dims[1];
    auto out = make_tensor<T>({m, n});
    out->requires_grad = detail::needs_grad(a) || detail::needs_grad(b);

    const T* av = a->values.data();
    const T* bv = b->values.data();
    T* cv = out->values.data();
    parallel_for(m, [&](int i0, int i1) {
        for (int i = i0; i < i1; ++i) {
            T* crow = cv + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const T aval = av[static_cast<size_t>(i) * k + p];
                const T* brow = bv + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += aval * brow[j];
            }
        }
    });
    detail::check_finite(*out, "matmul");

    if (out->requires_grad) {
        tape.record([a, b, out, m, k, n] {
            if (out->grad.empty()) return;
            const T* g = out->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                T* da = a->grad.data();
                const T* bv2 = b->values.data();
                parallel_for(m, [&](int i0, int i1) {
                    for (int i = i0; i < i1; ++i)
                        for (int p = 0; p < k; ++p) {
                            const T* grow = g + static_cast<size_t>(i) * n;
                            const T* brow = bv2 + static_cast<size_t>(p) * n;
                            T acc = 0;
                            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            da[static_cast<size_t>(i) * k + p] += acc;
                        }
                });
            }
            if (b->requires_grad) {
                b->ensure_grad();
                T* db = b->grad.data();
                const T* av2 = a->values.data();
                parallel_for(k, [&](int p0, int p1) {
                    for (int p = p0; p < p1; ++p) {
                        T* dbrow = db + static_cast<size_t>(p) * n;
                        for (int i = 0; i < m; ++i) {
                            const T aval = av2[static_cast<size_t>(i) * k + p];
                            const T* grow = g + static_cast<size_t>(i) * n;
                            for (int j = 0; j < n; ++j) dbrow[j] += aval * grow[j];
                        }
                    }
                });
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, x[H,W,Cin], k[kh,kw,Cin,Cout], optional bias[Cout]
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& k,
                    const TensorPtr<T>& bias, int stride, int pad) {
    if (x->dims.size() != 3 || k->dims.size() != 4 || x->dims[2] != k->dims[2])
        throw ShapeError("conv2d dims " + dims_str(x->dims) + " * " + dims_str(k->dims));
    const int H = x->dims[0], W = x->dims[1], Cin = x->dims[2];
    const int kh = k->dims[0], kw = k->dims[1], Cout = k->dims[3];
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw ShapeError("conv2d kernel " + dims_str(k->dims) + " exceeds padded input " +
                         dims_str(x->dims));
    if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
        throw ShapeError("conv2d output extent not integral for input " + dims_str(x->dims) +
                         ", kernel " + dims_str(k->dims) + ", stride " + std::to_string(stride) +
                         ", pad " + std::to_string(pad));
    if (bias && (bias->dims.size() != 1 || bias->dims[0] != Cout))
        throw ShapeError("conv2d bias dims " + dims_str(bias->dims));
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;

    auto out = make_tensor<T>({Ho, Wo, Cout});
    out->requires_grad =
        detail::needs_grad(x) || detail::needs_grad(k) || detail::needs_grad(bias);

    const T* xv = x->values.data();
    const T* kv = k->values.data();
    T* ov = out->values.data();
    parallel_for(Ho, [&](int y0, int y1) {
        for (int oy = y0; oy < y1; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                T* orow = ov + (static_cast<size_t>(oy) * Wo + ox) * Cout;
                if (bias) {
                    const T* bv = bias->values.data();
                    for (int co = 0; co < Cout; ++co) orow[co] = bv[co];
                }
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const T* xrow = xv + (static_cast<size_t>(iy) * W + ix) * Cin;
                        const T* krow = kv + ((static_cast<size_t>(ky) * kw + kx) * Cin) * Cout;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const T xval = xrow[ci];
                            const T* kk = krow + static_cast<size_t>(ci) * Cout;
                            for (int co = 0; co < Cout; ++co) orow[co] += xval * kk[co];
                        }
                    }
                }
            }
    });
    detail::check_finite(*out, "conv2d");

    if (out->requires_grad) {
        tape.record([x, k, bias, out, H, W, Cin, kh, kw, Cout, Ho, Wo, stride, pad] {
            if (out->grad.empty()) return;
            const T* g = out->grad.data();
            if (x->requires_grad) {
                x->ensure_grad();
                T* dx = x->grad.data();
                const T* kv2 = k->values.data();
                // gather form: one writer per input row, deterministic
                parallel_for(H, [&](int y0, int y1) {
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ky = 0; ky < kh; ++ky) {
                            const int oyn = iy + pad - ky;
                            if (oyn < 0 || oyn % stride) continue;
                            const int oy = oyn / stride;
                            if (oy >= Ho) continue;
                            for (int ix = 0; ix < W; ++ix)
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int oxn = ix + pad - kx;
                                    if (oxn < 0 || oxn % stride) continue;
                                    const int ox = oxn / stride;
                                    if (ox >= Wo) continue;
                                    const T* grow =
                                        g + (static_cast<size_t>(oy) * Wo + ox) * Cout;
                                    const T* krow =
                                        kv2 + ((static_cast<size_t>(ky) * kw + kx) * Cin) * Cout;
                                    T* dxrow = dx + (static_cast<size_t>(iy) * W + ix) * Cin;
                                    for (int ci = 0; ci < Cin; ++ci) {
                                        const T* kk = krow + static_cast<size_t>(ci) * Cout;
                                        T acc = 0;
                                        for (int co = 0; co < Cout; ++co) acc += kk[co] * grow[co];
                                        dxrow[ci] += acc;
                                    }
                                }
                        }
                });
            }
            if (k->requires_grad) {
                k->ensure_grad();
                T* dk = k->grad.data();
                const T* xv2 = x->values.data();
                parallel_for(kh * kw * Cin, [&](int t0, int t1) {
                    for (int t = t0; t < t1; ++t) {
                        const int ky = t / (kw * Cin);
                        const int kx = (t / Cin) % kw;
                        const int ci = t % Cin;
                        T* dkrow = dk + static_cast<size_t>(t) * Cout;
                        for (int oy = 0; oy < Ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int ox = 0; ox < Wo; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= W) continue;
                                const T xval = xv2[(static_cast<size_t>(iy) * W + ix) * Cin + ci];
                                const T* grow = g + (static_cast<size_t>(oy) * Wo + ox) * Cout;
                                for (int co = 0; co < Cout; ++co) dkrow[co] += xval * grow[co];
                            }
                        }
                    }
                });
            }
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                T* dbv = bias->grad.data();
                for (std::int64_t p = 0; p < static_cast<std::int64_t>(Ho) * Wo; ++p) {
                    const T* grow = g + p * Cout;
                    for (int co = 0; co < Cout; ++co) dbv[co] += grow[co];
                }
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& k, int stride,
                    int pad) {
    return conv2d(tape, x, k, TensorPtr<T>{}, stride, pad);
}

// ---------------------------------------------------------------------------
// maxpool2x2: x[H,W,C] -> [H/2,W/2,C]; ties resolved to the first window cell
// in row-major order, gradient routed to that cell only.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> maxpool2x2(Tape<T>& tape, const TensorPtr<T>& x) {
    if (x->dims.size() != 3 || x->dims[0] % 2 || x->dims[1] % 2)
        throw ShapeError("maxpool2x2 needs even spatial extents, got " + dims_str(x->dims));
    const int H = x->dims[0], W = x->dims[1], C = x->dims[2];
    const int Ho = H / 2, Wo = W / 2;
    auto out = make_tensor<T>({Ho, Wo, C});
    out->requires_grad = detail::needs_grad(x);
    auto arg = std::make_shared<std::vector<std::int32_t>>(out->values.size());

    const T* xv = x->values.data();
    T* ov = out->values.data();
    std::int32_t* am = arg->data();
    parallel_for(Ho, [&](int y0, int y1) {
        for (int oy = y0; oy < y1; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                for (int c = 0; c < C; ++c) {
                    T best = 0;
                    std::int64_t bestIdx = -1;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::int64_t idx =
                                ((static_cast<std::int64_t>(oy * 2 + dy)) * W + (ox * 2 + dx)) * C +
                                c;
                            if (bestIdx < 0 || xv[idx] > best) {
                                best = xv[idx];
                                bestIdx = idx;
                            }
                        }
                    const std::int64_t o = (static_cast<std::int64_t>(oy) * Wo + ox) * C + c;
                    ov[o] = best;
                    am[o] = static_cast<std::int32_t>(bestIdx);
                }
    });

    if (out->requires_grad) {
        tape.record([x, out, arg] {
            if (out->grad.empty()) return;
            x->ensure_grad();
            const T* g = out->grad.data();
            for (size_t i = 0; i < out->values.size(); ++i) x->grad[(*arg)[i]] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax_cols: each column of a[m,n] becomes a distribution; stabilized by
// per-column max subtraction.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> softmax_cols(Tape<T>& tape, const TensorPtr<T>& a) {
    if (a->dims.size() != 2) throw ShapeError("softmax_cols needs a matrix, got " + dims_str(a->dims));
    const int m = a->dims[0], n = a->dims[1];
    auto out = make_tensor<T>({m, n});
    out->requires_grad = detail::needs_grad(a);

    const T* av = a->values.data();
    T* ov = out->values.data();
    parallel_for(n, [&](int j0, int j1) {
        for (int j = j0; j < j1; ++j) {
            T mx = av[j];
            for (int i = 1; i < m; ++i) mx = std::max(mx, av[static_cast<size_t>(i) * n + j]);
            T sum = 0;
            for (int i = 0; i < m; ++i) {
                const T e = std::exp(av[static_cast<size_t>(i) * n + j] - mx);
                ov[static_cast<size_t>(i) * n + j] = e;
                sum += e;
            }
            for (int i = 0; i < m; ++i) ov[static_cast<size_t>(i) * n + j] /= sum;
        }
    });
    detail::check_finite(*out, "softmax_cols");

    if (out->requires_grad) {
        tape.record([a, out, m, n] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            const T* y = out->values.data();
            const T* g = out->grad.data();
            T* da = a->grad.data();
            parallel_for(n, [&](int j0, int j1) {
                for (int j = j0; j < j1; ++j) {
                    T dot = 0;
                    for (int i = 0; i < m; ++i)
                        dot += g[static_cast<size_t>(i) * n + j] * y[static_cast<size_t>(i) * n + j];
                    for (int i = 0; i < m; ++i) {
                        const size_t idx = static_cast<size_t>(i) * n + j;
                        da[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reduce_max_spatial: s[H,W,N] -> values [N,1]; per-channel argmax positions,
// row-major first occurrence on ties; gradient routes to the argmax cell.
// ---------------------------------------------------------------------------
template <class T>
struct MaxSpatial {
    TensorPtr<T> values;                        // [N,1]
    std::vector<std::pair<int, int>> argmax;    // (row, col) per channel
};

template <class T>
MaxSpatial<T> reduce_max_spatial(Tape<T>& tape, const TensorPtr<T>& s) {
    if (s->dims.size() != 3) throw ShapeError("reduce_max_spatial needs [H,W,N], got " + dims_str(s->dims));
    const int H = s->dims[0], W = s->dims[1], N = s->dims[2];
    MaxSpatial<T> r;
    r.values = make_tensor<T>({N, 1});
    r.values->requires_grad = detail::needs_grad(s);
    r.argmax.assign(static_cast<size_t>(N), {0, 0});

    const T* sv = s->values.data();
    for (int c = 0; c < N; ++c) {
        T best = sv[c];
        int bi = 0, bj = 0;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const T v = sv[(static_cast<size_t>(i) * W + j) * N + c];
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        r.values->values[c] = best;
        r.argmax[c] = {bi, bj};
    }

    if (r.values->requires_grad) {
        auto arg = std::make_shared<std::vector<std::pair<int, int>>>(r.argmax);
        auto vals = r.values;
        tape.record([s, vals, arg, W, N] {
            if (vals->grad.empty()) return;
            s->ensure_grad();
            for (int c = 0; c < N; ++c) {
                const auto [i, j] = (*arg)[c];
                s->grad[(static_cast<size_t>(i) * W + j) * N + c] += vals->grad[c];
            }
        });
    }
    return r;
}

// ---------------------------------------------------------------------------
// reduce_min_all: global minimum of any tensor, argmin = first row-major
// occurrence; gradient routes to that element.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> reduce_min_all(Tape<T>& tape, const TensorPtr<T>& a, std::int64_t* argmin_out = nullptr) {
    if (a->values.empty()) throw ShapeError("reduce_min_all on empty tensor");
    std::int64_t arg = 0;
    T best = a->values[0];
    for (std::int64_t i = 1; i < a->size(); ++i)
        if (a->values[static_cast<size_t>(i)] < best) {
            best = a->values[static_cast<size_t>(i)];
            arg = i;
        }
    if (argmin_out) *argmin_out = arg;
    auto out = make_tensor<T>({1}, std::vector<T>{best});
    out->requires_grad = detail::needs_grad(a);
    if (out->requires_grad) {
        tape.record([a, out, arg] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            a->grad[static_cast<size_t>(arg)] += out->grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pairwise_sqdist: x[m,D], y[n,D] -> [m,n] of squared L2 distances.
// Direct evaluation; exact zero when rows are equal.
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> pairwise_sqdist(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& y) {
    if (x->dims.size() != 2 || y->dims.size() != 2 || x->dims[1] != y->dims[1])
        throw ShapeError("pairwise_sqdist dims " + dims_str(x->dims) + " vs " + dims_str(y->dims));
    const int m = x->dims[0], n = y->dims[0], D = x->dims[1];
    auto out = make_tensor<T>({m, n});
    out->requires_grad = detail::needs_grad(x) || detail::needs_grad(y);

    const T* xv = x->values.data();
    const T* yv = y->values.data();
    T* ov = out->values.data();
    parallel_for(m, [&](int i0, int i1) {
        for (int i = i0; i < i1; ++i) {
            const T* xr = xv + static_cast<size_t>(i) * D;
            T* orow = ov + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const T* yr = yv + static_cast<size_t>(j) * D;
                T acc = 0;
                for (int d = 0; d < D; ++d) {
                    const T diff = xr[d] - yr[d];
                    acc += diff * diff;
                }
                orow[j] = acc;
            }
        }
    });
    detail::check_finite(*out, "pairwise_sqdist");

    if (out->requires_grad) {
        tape.record([x, y, out, m, n, D] {
            if (out->grad.empty()) return;
            const T* g = out->grad.data();
            const T* xv2 = x->values.data();
            const T* yv2 = y->values.data();
            if (x->requires_grad) {
                x->ensure_grad();
                T* dx = x->grad.data();
                parallel_for(m, [&](int i0, int i1) {
                    for (int i = i0; i < i1; ++i) {
                        const T* xr = xv2 + static_cast<size_t>(i) * D;
                        T* dxr = dx + static_cast<size_t>(i) * D;
                        for (int j = 0; j < n; ++j) {
                            const T gij = T(2) * g[static_cast<size_t>(i) * n + j];
                            if (gij == T(0)) continue;
                            const T* yr = yv2 + static_cast<size_t>(j) * D;
                            for (int d = 0; d < D; ++d) dxr[d] += gij * (xr[d] - yr[d]);
                        }
                    }
                });
            }
            if (y->requires_grad) {
                y->ensure_grad();
                T* dy = y->grad.data();
                parallel_for(n, [&](int j0, int j1) {
                    for (int j = j0; j < j1; ++j) {
                        const T* yr = yv2 + static_cast<size_t>(j) * D;
                        T* dyr = dy + static_cast<size_t>(j) * D;
                        for (int i = 0; i < m; ++i) {
                            const T gij = T(2) * g[static_cast<size_t>(i) * n + j];
                            if (gij == T(0)) continue;
                            const T* xr = xv2 + static_cast<size_t>(i) * D;
                            for (int d = 0; d < D; ++d) dyr[d] -= gij * (xr[d] - yr[d]);
                        }
                    }
                });
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------
template <class T>
TensorPtr<T> transpose(Tape<T>& tape, const TensorPtr<T>& a) {
    if (a->dims.size() != 2) throw ShapeError("transpose needs a matrix, got " + dims_str(a->dims));
    const int m = a->dims[0], n = a->dims[1];
    auto out = make_tensor<T>({n, m});
    out->requires_grad = detail::needs_grad(a);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out->values[static_cast<size_t>(j) * m + i] = a->values[static_cast<size_t>(i) * n + j];
    if (out->requires_grad) {
        tape.record([a, out, m, n] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<size_t>(i) * n + j] +=
                        out->grad[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> reshape(Tape<T>& tape, const TensorPtr<T>& a, std::vector<int> dims) {
    auto out = make_tensor<T>(std::move(dims));
    if (out->size() != a->size())
        throw ShapeError("reshape " + dims_str(a->dims) + " -> " + dims_str(out->dims));
    out->values = a->values;
    out->requires_grad = detail::needs_grad(a);
    if (out->requires_grad) {
        tape.record([a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> gather_cols(Tape<T>& tape, const TensorPtr<T>& a, const std::vector<int>& cols) {
    if (a->dims.size() != 2) throw ShapeError("gather_cols needs a matrix, got " + dims_str(a->dims));
    const int m = a->dims[0], n = a->dims[1], k = static_cast<int>(cols.size());
    for (int c : cols)
        if (c < 0 || c >= n) throw ShapeError("gather_cols index " + std::to_string(c) + " out of " + dims_str(a->dims));
    auto out = make_tensor<T>({m, k});
    out->requires_grad = detail::needs_grad(a);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j)
            out->values[static_cast<size_t>(i) * k + j] = a->values[static_cast<size_t>(i) * n + cols[j]];
    if (out->requires_grad) {
        auto idx = std::make_shared<std::vector<int>>(cols);
        tape.record([a, out, idx, m, n, k] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    a->grad[static_cast<size_t>(i) * n + (*idx)[j]] +=
                        out->grad[static_cast<size_t>(i) * k + j];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> gather_rows(Tape<T>& tape, const TensorPtr<T>& a, const std::vector<int>& rows) {
    if (a->dims.size() != 2) throw ShapeError("gather_rows needs a matrix, got " + dims_str(a->dims));
    const int m = a->dims[0], n = a->dims[1], k = static_cast<int>(rows.size());
    for (int r : rows)
        if (r < 0 || r >= m) throw ShapeError("gather_rows index " + std::to_string(r) + " out of " + dims_str(a->dims));
    auto out = make_tensor<T>({k, n});
    out->requires_grad = detail::needs_grad(a);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j)
            out->values[static_cast<size_t>(i) * n + j] = a->values[static_cast<size_t>(rows[i]) * n + j];
    if (out->requires_grad) {
        auto idx = std::make_shared<std::vector<int>>(rows);
        tape.record([a, out, idx, n, k] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<size_t>((*idx)[i]) * n + j] +=
                        out->grad[static_cast<size_t>(i) * n + j];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> concat_rows(Tape<T>& tape, const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
    const int n = parts[0]->dims.size() == 2 ? parts[0]->dims[1] : -1;
    if (n < 0) throw ShapeError("concat_rows needs matrices");
    int m = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p->dims.size() != 2 || p->dims[1] != n)
            throw ShapeError("concat_rows column mismatch " + dims_str(p->dims));
        m += p->dims[0];
        rg = rg || p->requires_grad;
    }
    auto out = make_tensor<T>({m, n});
    out->requires_grad = rg;
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
        off += p->values.size();
    }
    if (rg) {
        auto parts_copy = std::make_shared<std::vector<TensorPtr<T>>>(parts);
        tape.record([parts_copy, out] {
            if (out->grad.empty()) return;
            size_t off2 = 0;
            for (auto& p : *parts_copy) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->values.size(); ++i) p->grad[i] += out->grad[off2 + i];
                }
                off2 += p->values.size();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise suite
// ---------------------------------------------------------------------------
namespace detail {

template <class T, class FwdFn, class BwdFn>
TensorPtr<T> unary_op(Tape<T>& tape, const TensorPtr<T>& a, const char* name, FwdFn fwd, BwdFn bwd) {
    auto out = make_tensor<T>(a->dims);
    out->requires_grad = needs_grad(a);
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = fwd(a->values[i]);
    check_finite(*out, name);
    if (out->requires_grad) {
        tape.record([a, out, bwd] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->values.size(); ++i)
                a->grad[i] += bwd(a->values[i], out->values[i]) * out->grad[i];
        });
    }
    return out;
}

template <class T>
void check_same_dims(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* name) {
    if (a->dims != b->dims)
        throw ShapeError(std::string(name) + " dims " + dims_str(a->dims) + " vs " + dims_str(b->dims));
}

}  // namespace detail

template <class T>
TensorPtr<T> add(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims(a, b, "add");
    auto out = make_tensor<T>(a->dims);
    out->requires_grad = detail::needs_grad(a) || detail::needs_grad(b);
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->values.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->values.size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> sub(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims(a, b, "sub");
    auto out = make_tensor<T>(a->dims);
    out->requires_grad = detail::needs_grad(a) || detail::needs_grad(b);
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->values.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->values.size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> mul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims(a, b, "mul");
    auto out = make_tensor<T>(a->dims);
    out->requires_grad = detail::needs_grad(a) || detail::needs_grad(b);
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->values.size(); ++i)
                    a->grad[i] += b->values[i] * out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->values.size(); ++i)
                    b->grad[i] += a->values[i] * out->grad[i];
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> div(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims(a, b, "div");
    auto out = make_tensor<T>(a->dims);
    out->requires_grad = detail::needs_grad(a) || detail::needs_grad(b);
    for (size_t i = 0; i < a->values.size(); ++i) out->values[i] = a->values[i] / b->values[i];
    detail::check_finite(*out, "div");
    if (out->requires_grad) {
        tape.record([a, b, out] {
            if (out->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < a->values.size(); ++i)
                    a->grad[i] += out->grad[i] / b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < b->values.size(); ++i)
                    b->grad[i] -= out->grad[i] * a->values[i] / (b->values[i] * b->values[i]);
            }
        });
    }
    return out;
}

template <class T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& a, T c) {
    return detail::unary_op(tape, a, "scale", [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
TensorPtr<T> add_scalar(Tape<T>& tape, const TensorPtr<T>& a, T c) {
    return detail::unary_op(tape, a, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
TensorPtr<T> exp_op(Tape<T>& tape, const TensorPtr<T>& a) {
    return detail::unary_op(tape, a, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
TensorPtr<T> log_op(Tape<T>& tape, const TensorPtr<T>& a) {
    for (T v : a->values)
        if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(static_cast<double>(v)));
    return detail::unary_op(tape, a, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
TensorPtr<T> sqrt_op(Tape<T>& tape, const TensorPtr<T>& a) {
    for (T v : a->values)
        if (v < T(0)) throw DomainError("sqrt of negative value");
    return detail::unary_op(tape, a, "sqrt", [](T v) { return std::sqrt(v); },
                            [](T, T y) { return T(1) / (T(2) * y); });
}

template <class T>
TensorPtr<T> relu(Tape<T>& tape, const TensorPtr<T>& a) {
    return detail::unary_op(tape, a, "relu", [](T v) { return v > T(0) ? v : T(0); },
                            [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
TensorPtr<T> sigmoid(Tape<T>& tape, const TensorPtr<T>& a) {
    return detail::unary_op(tape, a, "sigmoid",
                            [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                            [](T, T y) { return y * (T(1) - y); });
}

template <class T>
TensorPtr<T> square(Tape<T>& tape, const TensorPtr<T>& a) {
    return detail::unary_op(tape, a, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
TensorPtr<T> neg(Tape<T>& tape, const TensorPtr<T>& a) {
    return detail::unary_op(tape, a, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

// Gradient passes only through entries that were not clipped.
template <class T>
TensorPtr<T> clamp(Tape<T>& tape, const TensorPtr<T>& a, T lo, T hi) {
    return detail::unary_op(tape, a, "clamp",
                            [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
                            [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& a) {
    T acc = 0;
    for (T v : a->values) acc += v;
    auto out = make_tensor<T>({1}, std::vector<T>{acc});
    out->requires_grad = detail::needs_grad(a);
    if (out->requires_grad) {
        tape.record([a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[0];
        });
    }
    return out;
}

template <class T>
TensorPtr<T> mean(Tape<T>& tape, const TensorPtr<T>& a) {
    const T inv = T(1) / static_cast<T>(a->size());
    T acc = 0;
    for (T v : a->values) acc += v;
    auto out = make_tensor<T>({1}, std::vector<T>{acc * inv});
    out->requires_grad = detail::needs_grad(a);
    if (out->requires_grad) {
        tape.record([a, out, inv] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += inv * out->grad[0];
        });
    }
    return out;
}

// cosine(u,v) = <u,v> / (|u||v| + eps), eps = 1e-8; composed from primitives.
template <class T>
TensorPtr<T> cosine(Tape<T>& tape, const TensorPtr<T>& u, const TensorPtr<T>& v) {
    detail::check_same_dims(u, v, "cosine");
    auto dot = sum(tape, mul(tape, u, v));
    auto nu = sqrt_op(tape, sum(tape, square(tape, u)));
    auto nv = sqrt_op(tape, sum(tape, square(tape, v)));
    auto denom = add_scalar(tape, mul(tape, nu, nv), T(1e-8));
    return div(tape, dot, denom);
}

}  // namespace cipl
