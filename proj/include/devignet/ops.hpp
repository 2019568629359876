#pragma once

#include "autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

namespace devignet::ops {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    require(a->value.same_shape(b->value), "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    return make_node<S>(std::move(out), "add", {a, b}, [a, b](Node<S>& node) {
        accumulate(a, node.grad);
        accumulate(b, node.grad);
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    require(a->value.same_shape(b->value), "sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] - b->value.data[i];
    return make_node<S>(std::move(out), "sub", {a, b}, [a, b](Node<S>& node) {
        if (a->requires_grad) accumulate(a, node.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            const int64_t n = node.grad.numel();
            for (int64_t i = 0; i < n; ++i) b->grad.data[i] -= node.grad.data[i];
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    require(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    return make_node<S>(std::move(out), "mul", {a, b}, [a, b](Node<S>& node) {
        const int64_t n = node.grad.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a->grad.data[i] += node.grad.data[i] * b->value.data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n; ++i) b->grad.data[i] += node.grad.data[i] * a->value.data[i];
        }
    });
}

template <typename S>
Var<S> div(const Var<S>& a, const Var<S>& b) {
    require(a->value.same_shape(b->value), "div: shape mismatch");
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] / b->value.data[i];
    return make_node<S>(std::move(out), "div", {a, b}, [a, b](Node<S>& node) {
        const int64_t n = node.grad.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a->grad.data[i] += node.grad.data[i] / b->value.data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                const S bv = b->value.data[i];
                b->grad.data[i] -= node.grad.data[i] * a->value.data[i] / (bv * bv);
            }
        }
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] * c;
    return make_node<S>(std::move(out), "scale", {a}, [a, c](Node<S>& node) {
        a->ensure_grad();
        const int64_t n = node.grad.numel();
        for (int64_t i = 0; i < n; ++i) a->grad.data[i] += node.grad.data[i] * c;
    });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S c) {
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] + c;
    return make_node<S>(std::move(out), "add_scalar", {a}, [a](Node<S>& node) {
        accumulate(a, node.grad);
    });
}

template <typename S>
Var<S> exp_elem(const Var<S>& a) {
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = std::exp(a->value.data[i]);
    return make_node<S>(std::move(out), "exp", {a}, [a](Node<S>& node) {
        a->ensure_grad();
        const int64_t n = node.grad.numel();
        for (int64_t i = 0; i < n; ++i) a->grad.data[i] += node.grad.data[i] * node.value.data[i];
    });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
    Tensor<S> out(a->value.shape);
    const int64_t n = out.numel();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(a->value.data[i]);
        out.data[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    return make_node<S>(std::move(out), "gelu", {a}, [a](Node<S>& node) {
        a->ensure_grad();
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        const int64_t n = node.grad.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(a->value.data[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            a->grad.data[i] += node.grad.data[i] * static_cast<S>(cdf + x * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    const int64_t n = a->value.numel();
    require(n > 0, "mean_all on empty tensor");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(a->value.data[i]);
    Tensor<S> out({1});
    out.data[0] = static_cast<S>(acc / static_cast<double>(n));
    return make_node<S>(std::move(out), "mean", {a}, [a, n](Node<S>& node) {
        a->ensure_grad();
        const S g = node.grad.data[0] / static_cast<S>(n);
        for (int64_t i = 0; i < n; ++i) a->grad.data[i] += g;
    });
}

// x: (B, rest...), p: (1, rest...) broadcast over batch.
template <typename S>
Var<S> add_batchcast(const Var<S>& x, const Var<S>& p) {
    require(p->value.shape[0] == 1, "add_batchcast: p must have batch 1");
    const int64_t inner = p->value.numel();
    require(x->value.numel() % inner == 0 && x->value.shape.size() == p->value.shape.size(),
            "add_batchcast: incompatible shapes");
    const int64_t batch = x->value.numel() / inner;
    Tensor<S> out(x->value.shape);
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < inner; ++i)
            out.data[b * inner + i] = x->value.data[b * inner + i] + p->value.data[i];
    return make_node<S>(std::move(out), "add_bcast", {x, p}, [x, p, batch, inner](Node<S>& node) {
        if (x->requires_grad) accumulate(x, node.grad);
        if (p->requires_grad) {
            p->ensure_grad();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t i = 0; i < inner; ++i) p->grad.data[i] += node.grad.data[b * inner + i];
        }
    });
}

// Global average pool over spatial dims: (B,C,H,W) -> (B,C).
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
    require(x->value.rank() == 4, "gap expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    Tensor<S> out({B, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const S* row = x->value.ptr() + (b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(row[i]);
            out.data[b * C + c] = static_cast<S>(acc / static_cast<double>(hw));
        }
    return make_node<S>(std::move(out), "gap", {x}, [x, B, C, hw](Node<S>& node) {
        x->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const S g = node.grad.data[b * C + c] / static_cast<S>(hw);
                S* row = x->grad.ptr() + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) row[i] += g;
            }
    });
}

// y[b,c,:,:] = x[b,c,:,:] * s[b,c]  (channel-wise rescaling)
template <typename S>
Var<S> channel_scale(const Var<S>& x, const Var<S>& s) {
    require(x->value.rank() == 4 && s->value.rank() == 2, "channel_scale expects (B,C,H,W) and (B,C)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    require(s->value.shape[0] == B && s->value.shape[1] == C, "channel_scale: channel mismatch");
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    Tensor<S> out(x->value.shape);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const S sv = s->value.data[b * C + c];
            const S* src = x->value.ptr() + (b * C + c) * hw;
            S* dst = out.ptr() + (b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * sv;
        }
    return make_node<S>(std::move(out), "channel_scale", {x, s}, [x, s, B, C, hw](Node<S>& node) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const int64_t off = (b * C + c) * hw;
                if (x->requires_grad) {
                    x->ensure_grad();
                    const S sv = s->value.data[b * C + c];
                    for (int64_t i = 0; i < hw; ++i) x->grad.data[off + i] += node.grad.data[off + i] * sv;
                }
                if (s->requires_grad) {
                    s->ensure_grad();
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i)
                        acc += static_cast<double>(node.grad.data[off + i]) * static_cast<double>(x->value.data[off + i]);
                    s->grad.data[b * C + c] += static_cast<S>(acc);
                }
            }
    });
}

// y = x / s where s is a one-element tensor (learnable temperature).
template <typename S>
Var<S> div_by_scalar_var(const Var<S>& x, const Var<S>& s) {
    require(s->value.numel() == 1, "div_by_scalar_var: divisor must be scalar");
    const S sv = s->value.data[0];
    Tensor<S> out(x->value.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = x->value.data[i] / sv;
    return make_node<S>(std::move(out), "div_scalar_var", {x, s}, [x, s, sv, n](Node<S>& node) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < n; ++i) x->grad.data[i] += node.grad.data[i] / sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i)
                acc += static_cast<double>(node.grad.data[i]) * static_cast<double>(x->value.data[i]);
            s->grad.data[0] -= static_cast<S>(acc / (static_cast<double>(sv) * static_cast<double>(sv)));
        }
    });
}

// ---------------------------------------------------------------------------
// linear maps
// ---------------------------------------------------------------------------

// y[..., n] = sum_k x[..., k] * W[k, n] (+ b[n]); operates on the last dim.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
    require(w->value.rank() == 2, "linear: weight must be 2-d");
    const int64_t K = w->value.shape[0], N = w->value.shape[1];
    require(x->value.shape.back() == K, "linear: inner dim mismatch");
    const int64_t R = x->value.numel() / K;
    std::vector<int64_t> out_shape = x->value.shape;
    out_shape.back() = N;
    Tensor<S> out(out_shape);
    for (int64_t r = 0; r < R; ++r) {
        const S* xr = x->value.ptr() + r * K;
        S* yr = out.ptr() + r * N;
        if (b) {
            for (int64_t n = 0; n < N; ++n) yr[n] = b->value.data[n];
        }
        for (int64_t k = 0; k < K; ++k) {
            const S xv = xr[k];
            if (xv == S(0)) continue;
            const S* wr = w->value.ptr() + k * N;
            for (int64_t n = 0; n < N; ++n) yr[n] += xv * wr[n];
        }
    }
    std::vector<Var<S>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node<S>(std::move(out), "linear", std::move(parents), [x, w, b, R, K, N](Node<S>& node) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (int64_t r = 0; r < R; ++r) {
                const S* gr = node.grad.ptr() + r * N;
                S* dxr = x->grad.ptr() + r * K;
                for (int64_t k = 0; k < K; ++k) {
                    const S* wr = w->value.ptr() + k * N;
                    double acc = 0.0;
                    for (int64_t n = 0; n < N; ++n) acc += static_cast<double>(gr[n]) * static_cast<double>(wr[n]);
                    dxr[k] += static_cast<S>(acc);
                }
            }
        }
        if (w->requires_grad) {
            w->ensure_grad();
            for (int64_t r = 0; r < R; ++r) {
                const S* xr = x->value.ptr() + r * K;
                const S* gr = node.grad.ptr() + r * N;
                for (int64_t k = 0; k < K; ++k) {
                    const S xv = xr[k];
                    if (xv == S(0)) continue;
                    S* dwr = w->grad.ptr() + k * N;
                    for (int64_t n = 0; n < N; ++n) dwr[n] += xv * gr[n];
                }
            }
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (int64_t r = 0; r < R; ++r) {
                const S* gr = node.grad.ptr() + r * N;
                for (int64_t n = 0; n < N; ++n) b->grad.data[n] += gr[n];
            }
        }
    });
}

// Pointwise (1x1) convolution: x (B,Ci,H,W), W (Co,Ci), b (Co) optional.
template <typename S>
Var<S> conv1x1(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
    require(x->value.rank() == 4 && w->value.rank() == 2, "conv1x1 expects (B,C,H,W) and (Co,Ci)");
    const int64_t B = x->value.shape[0], Ci = x->value.shape[1];
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    const int64_t Co = w->value.shape[0];
    require(w->value.shape[1] == Ci, "conv1x1: channel mismatch, input has " + std::to_string(Ci));
    Tensor<S> out({B, Co, x->value.shape[2], x->value.shape[3]});
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t o = 0; o < Co; ++o) {
            S* dst = out.ptr() + (bb * Co + o) * hw;
            if (b) {
                const S bv = b->value.data[o];
                for (int64_t p = 0; p < hw; ++p) dst[p] = bv;
            }
            for (int64_t i = 0; i < Ci; ++i) {
                const S wv = w->value.data[o * Ci + i];
                if (wv == S(0)) continue;
                const S* src = x->value.ptr() + (bb * Ci + i) * hw;
                for (int64_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
            }
        }
    std::vector<Var<S>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node<S>(std::move(out), "conv1x1", std::move(parents), [x, w, b, B, Ci, Co, hw](Node<S>& node) {
        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t o = 0; o < Co; ++o) {
                const S* g = node.grad.ptr() + (bb * Co + o) * hw;
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (int64_t i = 0; i < Ci; ++i) {
                        const S wv = w->value.data[o * Ci + i];
                        if (wv == S(0)) continue;
                        S* dx = x->grad.ptr() + (bb * Ci + i) * hw;
                        for (int64_t p = 0; p < hw; ++p) dx[p] += wv * g[p];
                    }
                }
                if (w->requires_grad) {
                    w->ensure_grad();
                    for (int64_t i = 0; i < Ci; ++i) {
                        const S* src = x->value.ptr() + (bb * Ci + i) * hw;
                        double acc = 0.0;
                        for (int64_t p = 0; p < hw; ++p) acc += static_cast<double>(g[p]) * static_cast<double>(src[p]);
                        w->grad.data[o * Ci + i] += static_cast<S>(acc);
                    }
                }
                if (b && b->requires_grad) {
                    b->ensure_grad();
                    double acc = 0.0;
                    for (int64_t p = 0; p < hw; ++p) acc += static_cast<double>(g[p]);
                    b->grad.data[o] += static_cast<S>(acc);
                }
            }
    });
}

// Depthwise 3x3 convolution, zero padding 1: x (B,C,H,W), W (C,3,3), b (C).
template <typename S>
Var<S> dwconv3x3(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
    require(x->value.rank() == 4, "dwconv3x3 expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    require(w->value.rank() == 3 && w->value.shape[0] == C && w->value.shape[1] == 3 && w->value.shape[2] == 3,
            "dwconv3x3: weight must be (C,3,3)");
    Tensor<S> out({B, C, H, W});
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
            const S* src = x->value.ptr() + (bb * C + c) * H * W;
            const S* kw = w->value.ptr() + c * 9;
            S* dst = out.ptr() + (bb * C + c) * H * W;
            const S bv = b ? b->value.data[c] : S(0);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t xx = 0; xx < W; ++xx) {
                    S acc = bv;
                    for (int64_t ky = 0; ky < 3; ++ky) {
                        const int64_t iy = y + ky - 1;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t ix = xx + kx - 1;
                            if (ix < 0 || ix >= W) continue;
                            acc += kw[ky * 3 + kx] * src[iy * W + ix];
                        }
                    }
                    dst[y * W + xx] = acc;
                }
        }
    std::vector<Var<S>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node<S>(std::move(out), "dwconv3x3", std::move(parents), [x, w, b, B, C, H, W](Node<S>& node) {
        if (x->requires_grad) x->ensure_grad();
        if (w->requires_grad) w->ensure_grad();
        if (b && b->requires_grad) b->ensure_grad();
        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t c = 0; c < C; ++c) {
                const S* src = x->value.ptr() + (bb * C + c) * H * W;
                const S* kw = w->value.ptr() + c * 9;
                const S* g = node.grad.ptr() + (bb * C + c) * H * W;
                S* dx = x->requires_grad ? x->grad.ptr() + (bb * C + c) * H * W : nullptr;
                S* dw = w->requires_grad ? w->grad.ptr() + c * 9 : nullptr;
                double dbacc = 0.0;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t xx = 0; xx < W; ++xx) {
                        const S gv = g[y * W + xx];
                        if (b && b->requires_grad) dbacc += static_cast<double>(gv);
                        for (int64_t ky = 0; ky < 3; ++ky) {
                            const int64_t iy = y + ky - 1;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t kx = 0; kx < 3; ++kx) {
                                const int64_t ix = xx + kx - 1;
                                if (ix < 0 || ix >= W) continue;
                                if (dx) dx[iy * W + ix] += kw[ky * 3 + kx] * gv;
                                if (dw) dw[ky * 3 + kx] += src[iy * W + ix] * gv;
                            }
                        }
                    }
                if (b && b->requires_grad) b->grad.data[c] += static_cast<S>(dbacc);
            }
    });
}

// Batched matmul: a (G,M,K) x b (G,K,N) -> (G,M,N).
template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
    require(a->value.rank() == 3 && b->value.rank() == 3, "bmm expects 3-d operands");
    const int64_t G = a->value.shape[0], M = a->value.shape[1], K = a->value.shape[2];
    require(b->value.shape[0] == G && b->value.shape[1] == K, "bmm: shape mismatch");
    const int64_t N = b->value.shape[2];
    Tensor<S> out({G, M, N});
    for (int64_t g = 0; g < G; ++g)
        for (int64_t m = 0; m < M; ++m) {
            const S* ar = a->value.ptr() + (g * M + m) * K;
            S* yr = out.ptr() + (g * M + m) * N;
            for (int64_t k = 0; k < K; ++k) {
                const S av = ar[k];
                if (av == S(0)) continue;
                const S* br = b->value.ptr() + (g * K + k) * N;
                for (int64_t n = 0; n < N; ++n) yr[n] += av * br[n];
            }
        }
    return make_node<S>(std::move(out), "bmm", {a, b}, [a, b, G, M, K, N](Node<S>& node) {
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int64_t g = 0; g < G; ++g)
            for (int64_t m = 0; m < M; ++m) {
                const S* gr = node.grad.ptr() + (g * M + m) * N;
                if (a->requires_grad) {
                    S* da = a->grad.ptr() + (g * M + m) * K;
                    for (int64_t k = 0; k < K; ++k) {
                        const S* br = b->value.ptr() + (g * K + k) * N;
                        double acc = 0.0;
                        for (int64_t n = 0; n < N; ++n) acc += static_cast<double>(gr[n]) * static_cast<double>(br[n]);
                        da[k] += static_cast<S>(acc);
                    }
                }
                if (b->requires_grad) {
                    const S* ar = a->value.ptr() + (g * M + m) * K;
                    for (int64_t k = 0; k < K; ++k) {
                        const S av = ar[k];
                        if (av == S(0)) continue;
                        S* db = b->grad.ptr() + (g * K + k) * N;
                        for (int64_t n = 0; n < N; ++n) db[n] += av * gr[n];
                    }
                }
            }
    });
}

// Batched matmul with transposed rhs: a (G,M,K) x b (G,N,K) -> (G,M,N).
template <typename S>
Var<S> bmm_nt(const Var<S>& a, const Var<S>& b) {
    require(a->value.rank() == 3 && b->value.rank() == 3, "bmm_nt expects 3-d operands");
    const int64_t G = a->value.shape[0], M = a->value.shape[1], K = a->value.shape[2];
    require(b->value.shape[0] == G && b->value.shape[2] == K, "bmm_nt: shape mismatch");
    const int64_t N = b->value.shape[1];
    Tensor<S> out({G, M, N});
    for (int64_t g = 0; g < G; ++g)
        for (int64_t m = 0; m < M; ++m) {
            const S* ar = a->value.ptr() + (g * M + m) * K;
            S* yr = out.ptr() + (g * M + m) * N;
            for (int64_t n = 0; n < N; ++n) {
                const S* br = b->value.ptr() + (g * N + n) * K;
                double acc = 0.0;
                for (int64_t k = 0; k < K; ++k) acc += static_cast<double>(ar[k]) * static_cast<double>(br[k]);
                yr[n] = static_cast<S>(acc);
            }
        }
    return make_node<S>(std::move(out), "bmm_nt", {a, b}, [a, b, G, M, K, N](Node<S>& node) {
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int64_t g = 0; g < G; ++g)
            for (int64_t m = 0; m < M; ++m) {
                const S* gr = node.grad.ptr() + (g * M + m) * N;
                const S* ar = a->value.ptr() + (g * M + m) * K;
                for (int64_t n = 0; n < N; ++n) {
                    const S gv = gr[n];
                    if (gv == S(0)) continue;
                    const S* br = b->value.ptr() + (g * N + n) * K;
                    if (a->requires_grad) {
                        S* da = a->grad.ptr() + (g * M + m) * K;
                        for (int64_t k = 0; k < K; ++k) da[k] += gv * br[k];
                    }
                    if (b->requires_grad) {
                        S* db = b->grad.ptr() + (g * N + n) * K;
                        for (int64_t k = 0; k < K; ++k) db[k] += gv * ar[k];
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// normalization / attention pieces
// ---------------------------------------------------------------------------

// LayerNorm over the channel axis at each spatial position: x (B,C,H,W).
template <typename S>
Var<S> layernorm_channels(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-6)) {
    require(x->value.rank() == 4, "layernorm_channels expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    require(gamma->value.numel() == C && beta->value.numel() == C, "layernorm_channels: affine size mismatch");
    Tensor<S> out(x->value.shape);
    // cache per-position mean and inverse std for the backward pass
    auto stats = std::make_shared<std::vector<S>>(2 * B * hw);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < hw; ++p) {
            const int64_t base = b * C * hw + p;
            double mean = 0.0;
            for (int64_t c = 0; c < C; ++c) mean += static_cast<double>(x->value.data[base + c * hw]);
            mean /= static_cast<double>(C);
            double var = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const double d = static_cast<double>(x->value.data[base + c * hw]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(C);
            const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
            (*stats)[2 * (b * hw + p)] = static_cast<S>(mean);
            (*stats)[2 * (b * hw + p) + 1] = static_cast<S>(inv_std);
            for (int64_t c = 0; c < C; ++c) {
                const double xh = (static_cast<double>(x->value.data[base + c * hw]) - mean) * inv_std;
                out.data[base + c * hw] = static_cast<S>(xh) * gamma->value.data[c] + beta->value.data[c];
            }
        }
    return make_node<S>(std::move(out), "layernorm_c", {x, gamma, beta},
                        [x, gamma, beta, stats, B, C, hw](Node<S>& node) {
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        std::vector<double> dxh(C);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t p = 0; p < hw; ++p) {
                const int64_t base = b * C * hw + p;
                const double mean = static_cast<double>((*stats)[2 * (b * hw + p)]);
                const double inv_std = static_cast<double>((*stats)[2 * (b * hw + p) + 1]);
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int64_t c = 0; c < C; ++c) {
                    const double g = static_cast<double>(node.grad.data[base + c * hw]);
                    const double xh = (static_cast<double>(x->value.data[base + c * hw]) - mean) * inv_std;
                    if (gamma->requires_grad) gamma->grad.data[c] += static_cast<S>(g * xh);
                    if (beta->requires_grad) beta->grad.data[c] += static_cast<S>(g);
                    dxh[c] = g * static_cast<double>(gamma->value.data[c]);
                    sum_dxh += dxh[c];
                    sum_dxh_xh += dxh[c] * xh;
                }
                if (x->requires_grad) {
                    const double invC = 1.0 / static_cast<double>(C);
                    for (int64_t c = 0; c < C; ++c) {
                        const double xh = (static_cast<double>(x->value.data[base + c * hw]) - mean) * inv_std;
                        const double d = inv_std * (dxh[c] - sum_dxh * invC - xh * sum_dxh_xh * invC);
                        x->grad.data[base + c * hw] += static_cast<S>(d);
                    }
                }
            }
    });
}

// LayerNorm over the last axis: x (..., C), used for token sequences.
template <typename S>
Var<S> layernorm_last(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-6)) {
    const int64_t C = x->value.shape.back();
    require(gamma->value.numel() == C && beta->value.numel() == C, "layernorm_last: affine size mismatch");
    const int64_t R = x->value.numel() / C;
    Tensor<S> out(x->value.shape);
    auto stats = std::make_shared<std::vector<S>>(2 * R);
    for (int64_t r = 0; r < R; ++r) {
        const S* xr = x->value.ptr() + r * C;
        double mean = 0.0;
        for (int64_t c = 0; c < C; ++c) mean += static_cast<double>(xr[c]);
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = static_cast<double>(xr[c]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*stats)[2 * r] = static_cast<S>(mean);
        (*stats)[2 * r + 1] = static_cast<S>(inv_std);
        S* yr = out.ptr() + r * C;
        for (int64_t c = 0; c < C; ++c)
            yr[c] = static_cast<S>((static_cast<double>(xr[c]) - mean) * inv_std) * gamma->value.data[c] +
                    beta->value.data[c];
    }
    return make_node<S>(std::move(out), "layernorm_l", {x, gamma, beta},
                        [x, gamma, beta, stats, R, C](Node<S>& node) {
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        std::vector<double> dxh(C);
        for (int64_t r = 0; r < R; ++r) {
            const S* xr = x->value.ptr() + r * C;
            const S* gr = node.grad.ptr() + r * C;
            const double mean = static_cast<double>((*stats)[2 * r]);
            const double inv_std = static_cast<double>((*stats)[2 * r + 1]);
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const double g = static_cast<double>(gr[c]);
                const double xh = (static_cast<double>(xr[c]) - mean) * inv_std;
                if (gamma->requires_grad) gamma->grad.data[c] += static_cast<S>(g * xh);
                if (beta->requires_grad) beta->grad.data[c] += static_cast<S>(g);
                dxh[c] = g * static_cast<double>(gamma->value.data[c]);
                sum_dxh += dxh[c];
                sum_dxh_xh += dxh[c] * xh;
            }
            if (x->requires_grad) {
                S* dxr = x->grad.ptr() + r * C;
                const double invC = 1.0 / static_cast<double>(C);
                for (int64_t c = 0; c < C; ++c) {
                    const double xh = (static_cast<double>(xr[c]) - mean) * inv_std;
                    dxr[c] += static_cast<S>(inv_std * (dxh[c] - sum_dxh * invC - xh * sum_dxh_xh * invC));
                }
            }
        }
    });
}

// Split channels into halves X, Y and return X*Y: (B,2C,H,W) -> (B,C,H,W).
template <typename S>
Var<S> simple_gate(const Var<S>& x) {
    require(x->value.rank() == 4, "simple_gate expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C2 = x->value.shape[1];
    require(C2 % 2 == 0, "simple_gate requires an even channel count, got " + std::to_string(C2));
    const int64_t C = C2 / 2;
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    Tensor<S> out({B, C, x->value.shape[2], x->value.shape[3]});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const S* xa = x->value.ptr() + (b * C2 + c) * hw;
            const S* xb = x->value.ptr() + (b * C2 + C + c) * hw;
            S* dst = out.ptr() + (b * C + c) * hw;
            for (int64_t p = 0; p < hw; ++p) dst[p] = xa[p] * xb[p];
        }
    return make_node<S>(std::move(out), "simple_gate", {x}, [x, B, C, C2, hw](Node<S>& node) {
        x->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const S* xa = x->value.ptr() + (b * C2 + c) * hw;
                const S* xb = x->value.ptr() + (b * C2 + C + c) * hw;
                S* da = x->grad.ptr() + (b * C2 + c) * hw;
                S* db = x->grad.ptr() + (b * C2 + C + c) * hw;
                const S* g = node.grad.ptr() + (b * C + c) * hw;
                for (int64_t p = 0; p < hw; ++p) {
                    da[p] += g[p] * xb[p];
                    db[p] += g[p] * xa[p];
                }
            }
    });
}

// Softmax over the last axis.
template <typename S>
Var<S> softmax_last(const Var<S>& x) {
    const int64_t C = x->value.shape.back();
    const int64_t R = x->value.numel() / C;
    Tensor<S> out(x->value.shape);
    for (int64_t r = 0; r < R; ++r) {
        const S* xr = x->value.ptr() + r * C;
        S* yr = out.ptr() + r * C;
        double mx = static_cast<double>(xr[0]);
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(xr[c]));
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double e = std::exp(static_cast<double>(xr[c]) - mx);
            yr[c] = static_cast<S>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t c = 0; c < C; ++c) yr[c] = static_cast<S>(static_cast<double>(yr[c]) * inv);
    }
    return make_node<S>(std::move(out), "softmax", {x}, [x, R, C](Node<S>& node) {
        x->ensure_grad();
        for (int64_t r = 0; r < R; ++r) {
            const S* yr = node.value.ptr() + r * C;
            const S* gr = node.grad.ptr() + r * C;
            S* dxr = x->grad.ptr() + r * C;
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(gr[c]) * static_cast<double>(yr[c]);
            for (int64_t c = 0; c < C; ++c)
                dxr[c] += static_cast<S>(static_cast<double>(yr[c]) * (static_cast<double>(gr[c]) - dot));
        }
    });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

// Generic gather: out[i] = x[map[i]]. Covers reshapes with permutation,
// slicing, patch extraction, padding and cropping; the backward is the
// matching scatter-add.
template <typename S>
Var<S> gather(const Var<S>& x, std::shared_ptr<std::vector<int64_t>> map, std::vector<int64_t> out_shape,
              const char* op_name = "gather") {
    Tensor<S> out(std::move(out_shape));
    require(out.numel() == static_cast<int64_t>(map->size()), "gather: map size mismatch");
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data[i] = x->value.data[(*map)[i]];
    return make_node<S>(std::move(out), op_name, {x}, [x, map, n](Node<S>& node) {
        x->ensure_grad();
        for (int64_t i = 0; i < n; ++i) x->grad.data[(*map)[i]] += node.grad.data[i];
    });
}

// Plain reshape (same element order).
template <typename S>
Var<S> reshape(const Var<S>& x, std::vector<int64_t> new_shape) {
    require(Tensor<S>::count(new_shape) == x->value.numel(), "reshape: element count mismatch");
    Tensor<S> out;
    out.shape = std::move(new_shape);
    out.data = x->value.data;
    return make_node<S>(std::move(out), "reshape", {x}, [x](Node<S>& node) {
        x->ensure_grad();
        const int64_t n = node.grad.numel();
        for (int64_t i = 0; i < n; ++i) x->grad.data[i] += node.grad.data[i];
    });
}

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
    require(a->value.rank() == 4 && b->value.rank() == 4, "concat_channels expects 4-d inputs");
    require(a->value.shape[0] == b->value.shape[0] && a->value.shape[2] == b->value.shape[2] &&
                a->value.shape[3] == b->value.shape[3],
            "concat_channels: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    const int64_t B = a->value.shape[0], Ca = a->value.shape[1], Cb = b->value.shape[1];
    const int64_t hw = a->value.shape[2] * a->value.shape[3];
    Tensor<S> out({B, Ca + Cb, a->value.shape[2], a->value.shape[3]});
    for (int64_t bb = 0; bb < B; ++bb) {
        std::copy_n(a->value.ptr() + bb * Ca * hw, Ca * hw, out.ptr() + bb * (Ca + Cb) * hw);
        std::copy_n(b->value.ptr() + bb * Cb * hw, Cb * hw, out.ptr() + bb * (Ca + Cb) * hw + Ca * hw);
    }
    return make_node<S>(std::move(out), "concat_c", {a, b}, [a, b, B, Ca, Cb, hw](Node<S>& node) {
        for (int64_t bb = 0; bb < B; ++bb) {
            if (a->requires_grad) {
                a->ensure_grad();
                const S* g = node.grad.ptr() + bb * (Ca + Cb) * hw;
                S* da = a->grad.ptr() + bb * Ca * hw;
                for (int64_t i = 0; i < Ca * hw; ++i) da[i] += g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                const S* g = node.grad.ptr() + bb * (Ca + Cb) * hw + Ca * hw;
                S* db = b->grad.ptr() + bb * Cb * hw;
                for (int64_t i = 0; i < Cb * hw; ++i) db[i] += g[i];
            }
        }
    });
}

// Stack three (B,M) tensors into (B,3,M).
template <typename S>
Var<S> stack3_rows(const Var<S>& a, const Var<S>& b, const Var<S>& c) {
    require(a->value.same_shape(b->value) && b->value.same_shape(c->value), "stack3_rows: shape mismatch");
    require(a->value.rank() == 2, "stack3_rows expects (B,M)");
    const int64_t B = a->value.shape[0], M = a->value.shape[1];
    Tensor<S> out({B, 3, M});
    for (int64_t bb = 0; bb < B; ++bb) {
        std::copy_n(a->value.ptr() + bb * M, M, out.ptr() + (bb * 3 + 0) * M);
        std::copy_n(b->value.ptr() + bb * M, M, out.ptr() + (bb * 3 + 1) * M);
        std::copy_n(c->value.ptr() + bb * M, M, out.ptr() + (bb * 3 + 2) * M);
    }
    return make_node<S>(std::move(out), "stack3", {a, b, c}, [a, b, c, B, M](Node<S>& node) {
        const Var<S> srcs[3] = {a, b, c};
        for (int r = 0; r < 3; ++r) {
            if (!srcs[r]->requires_grad) continue;
            srcs[r]->ensure_grad();
            for (int64_t bb = 0; bb < B; ++bb) {
                const S* g = node.grad.ptr() + (bb * 3 + r) * M;
                S* d = srcs[r]->grad.ptr() + bb * M;
                for (int64_t i = 0; i < M; ++i) d[i] += g[i];
            }
        }
    });
}

namespace detail {

inline int64_t reflect101(int64_t p, int64_t n) {
    if (n == 1) return 0;
    while (p < 0 || p >= n) {
        if (p < 0) p = -p;
        else p = 2 * n - 2 - p;
    }
    return p;
}

} // namespace detail

// Map builders for gather-based structural ops -------------------------------

// Slice of the last axis: (..., C) -> (..., len), keeping [start, start+len).
template <typename S>
Var<S> slice_last(const Var<S>& x, int64_t start, int64_t len) {
    const int64_t C = x->value.shape.back();
    require(start >= 0 && start + len <= C, "slice_last: out of range");
    const int64_t R = x->value.numel() / C;
    auto map = std::make_shared<std::vector<int64_t>>(R * len);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t i = 0; i < len; ++i) (*map)[r * len + i] = r * C + start + i;
    std::vector<int64_t> sh = x->value.shape;
    sh.back() = len;
    return gather(x, std::move(map), std::move(sh), "slice_last");
}

// Row r of (B,3,M) -> (B,M).
template <typename S>
Var<S> slice_row3(const Var<S>& x, int64_t r) {
    require(x->value.rank() == 3 && x->value.shape[1] == 3 && r >= 0 && r < 3, "slice_row3: bad input");
    const int64_t B = x->value.shape[0], M = x->value.shape[2];
    auto map = std::make_shared<std::vector<int64_t>>(B * M);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < M; ++i) (*map)[b * M + i] = (b * 3 + r) * M + i;
    return gather(x, std::move(map), {B, M}, "slice_row3");
}

// (B,N,C) -> (B*heads, N, C/heads)
template <typename S>
Var<S> split_heads(const Var<S>& x, int64_t heads) {
    require(x->value.rank() == 3, "split_heads expects (B,N,C)");
    const int64_t B = x->value.shape[0], N = x->value.shape[1], C = x->value.shape[2];
    require(C % heads == 0, "split_heads: channels not divisible by heads");
    const int64_t D = C / heads;
    auto map = std::make_shared<std::vector<int64_t>>(B * N * C);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < D; ++d) (*map)[o++] = (b * N + n) * C + h * D + d;
    return gather(x, std::move(map), {B * heads, N, D}, "split_heads");
}

// (B*heads, N, D) -> (B,N,C)
template <typename S>
Var<S> merge_heads(const Var<S>& x, int64_t batch, int64_t heads) {
    require(x->value.rank() == 3 && x->value.shape[0] == batch * heads, "merge_heads: bad input");
    const int64_t N = x->value.shape[1], D = x->value.shape[2];
    const int64_t C = heads * D;
    auto map = std::make_shared<std::vector<int64_t>>(batch * N * C);
    int64_t o = 0;
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < heads; ++h)
                for (int64_t d = 0; d < D; ++d) (*map)[o++] = ((b * heads + h) * N + n) * D + d;
    return gather(x, std::move(map), {batch, N, C}, "merge_heads");
}

// Non-overlapping PxP patches: (B,C,H,W) -> (B, Hp*Wp, C*P*P).
template <typename S>
Var<S> patchify(const Var<S>& x, int64_t P) {
    require(x->value.rank() == 4, "patchify expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    require(H % P == 0 && W % P == 0,
            "patchify: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                " not divisible by patch size " + std::to_string(P));
    const int64_t Hp = H / P, Wp = W / P;
    auto map = std::make_shared<std::vector<int64_t>>(B * Hp * Wp * C * P * P);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t py = 0; py < Hp; ++py)
            for (int64_t px = 0; px < Wp; ++px)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t iy = 0; iy < P; ++iy)
                        for (int64_t ix = 0; ix < P; ++ix)
                            (*map)[o++] = ((b * C + c) * H + py * P + iy) * W + px * P + ix;
    return gather(x, std::move(map), {B, Hp * Wp, C * P * P}, "patchify");
}

// Token sequence (B, Hp*Wp, C) <-> feature grid (B, C, Hp, Wp).
template <typename S>
Var<S> tokens_to_grid(const Var<S>& x, int64_t hp, int64_t wp) {
    require(x->value.rank() == 3 && x->value.shape[1] == hp * wp, "tokens_to_grid: token count mismatch");
    const int64_t B = x->value.shape[0], C = x->value.shape[2];
    auto map = std::make_shared<std::vector<int64_t>>(B * C * hp * wp);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < hp * wp; ++t) (*map)[o++] = (b * hp * wp + t) * C + c;
    return gather(x, std::move(map), {B, C, hp, wp}, "tokens_to_grid");
}

template <typename S>
Var<S> grid_to_tokens(const Var<S>& x) {
    require(x->value.rank() == 4, "grid_to_tokens expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t hw = x->value.shape[2] * x->value.shape[3];
    auto map = std::make_shared<std::vector<int64_t>>(B * hw * C);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < hw; ++t)
            for (int64_t c = 0; c < C; ++c) (*map)[o++] = (b * C + c) * hw + t;
    return gather(x, std::move(map), {B, hw, C}, "grid_to_tokens");
}

// Reflect (border-excluding) spatial padding.
template <typename S>
Var<S> reflect_pad2d(const Var<S>& x, int64_t left, int64_t right, int64_t top, int64_t bottom) {
    require(x->value.rank() == 4, "reflect_pad2d expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    require(left < W && right < W && top < H && bottom < H, "reflect_pad2d: padding must be smaller than the image");
    const int64_t H2 = H + top + bottom, W2 = W + left + right;
    auto map = std::make_shared<std::vector<int64_t>>(B * C * H2 * W2);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < H2; ++y) {
                const int64_t sy = detail::reflect101(y - top, H);
                for (int64_t xx = 0; xx < W2; ++xx) {
                    const int64_t sx = detail::reflect101(xx - left, W);
                    (*map)[o++] = ((b * C + c) * H + sy) * W + sx;
                }
            }
    return gather(x, std::move(map), {B, C, H2, W2}, "reflect_pad");
}

template <typename S>
Var<S> crop2d(const Var<S>& x, int64_t top, int64_t left, int64_t h, int64_t w) {
    require(x->value.rank() == 4, "crop2d expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    require(top >= 0 && left >= 0 && top + h <= H && left + w <= W, "crop2d: region out of bounds");
    auto map = std::make_shared<std::vector<int64_t>>(B * C * h * w);
    int64_t o = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx)
                    (*map)[o++] = ((b * C + c) * H + top + y) * W + left + xx;
    return gather(x, std::move(map), {B, C, h, w}, "crop");
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

namespace detail {

struct LinearTap {
    int64_t i0, i1;
    double w0, w1;
};

inline std::vector<LinearTap> bilinear_taps(int64_t in, int64_t out) {
    std::vector<LinearTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
        const int64_t i0 = static_cast<int64_t>(std::floor(src));
        const int64_t i1 = std::min(i0 + 1, in - 1);
        const double w1 = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - w1, w1};
    }
    return taps;
}

} // namespace detail

// Bilinear resize of (B,C,H,W) to (B,C,h2,w2); half-pixel-centered sampling.
template <typename S>
Var<S> bilinear_resize(const Var<S>& x, int64_t h2, int64_t w2) {
    require(x->value.rank() == 4, "bilinear_resize expects (B,C,H,W)");
    require(h2 >= 1 && w2 >= 1, "bilinear_resize: target size must be positive");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    auto ty = std::make_shared<std::vector<detail::LinearTap>>(detail::bilinear_taps(H, h2));
    auto tx = std::make_shared<std::vector<detail::LinearTap>>(detail::bilinear_taps(W, w2));
    Tensor<S> out({B, C, h2, w2});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const S* src = x->value.ptr() + (b * C + c) * H * W;
            S* dst = out.ptr() + (b * C + c) * h2 * w2;
            for (int64_t y = 0; y < h2; ++y) {
                const auto& a = (*ty)[y];
                for (int64_t xx = 0; xx < w2; ++xx) {
                    const auto& bb = (*tx)[xx];
                    const double v = a.w0 * (bb.w0 * src[a.i0 * W + bb.i0] + bb.w1 * src[a.i0 * W + bb.i1]) +
                                     a.w1 * (bb.w0 * src[a.i1 * W + bb.i0] + bb.w1 * src[a.i1 * W + bb.i1]);
                    dst[y * w2 + xx] = static_cast<S>(v);
                }
            }
        }
    return make_node<S>(std::move(out), "bilinear", {x}, [x, ty, tx, B, C, H, W, h2, w2](Node<S>& node) {
        x->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                S* dx = x->grad.ptr() + (b * C + c) * H * W;
                const S* g = node.grad.ptr() + (b * C + c) * h2 * w2;
                for (int64_t y = 0; y < h2; ++y) {
                    const auto& a = (*ty)[y];
                    for (int64_t xx = 0; xx < w2; ++xx) {
                        const auto& bb = (*tx)[xx];
                        const double gv = static_cast<double>(g[y * w2 + xx]);
                        dx[a.i0 * W + bb.i0] += static_cast<S>(a.w0 * bb.w0 * gv);
                        dx[a.i0 * W + bb.i1] += static_cast<S>(a.w0 * bb.w1 * gv);
                        dx[a.i1 * W + bb.i0] += static_cast<S>(a.w1 * bb.w0 * gv);
                        dx[a.i1 * W + bb.i1] += static_cast<S>(a.w1 * bb.w1 * gv);
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// fixed-kernel pyramid and SSIM window convolutions
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
constexpr std::array<S, 5> binomial16() {
    return {S(1.0 / 16), S(4.0 / 16), S(6.0 / 16), S(4.0 / 16), S(1.0 / 16)};
}

template <typename S>
constexpr std::array<S, 5> binomial8() {
    return {S(1.0 / 8), S(4.0 / 8), S(6.0 / 8), S(4.0 / 8), S(1.0 / 8)};
}

} // namespace detail

// Burt–Adelson reduce: separable [1,4,6,4,1]/16, reflect borders, stride 2.
// (B,C,H,W) -> (B,C,H/2,W/2); H and W must be even.
template <typename S>
Var<S> gaussian_downsample(const Var<S>& x) {
    require(x->value.rank() == 4, "gaussian_downsample expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw StructuralError("gaussian_downsample: spatial dims must be divisible by 2, got " +
                              std::to_string(H) + "x" + std::to_string(W));
    const auto k = detail::binomial16<S>();
    const int64_t H2 = H / 2, W2 = W / 2;
    Tensor<S> tmp({B, C, H2, W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* src = x->value.ptr() + bc * H * W;
        S* t = tmp.ptr() + bc * H2 * W;
        for (int64_t oy = 0; oy < H2; ++oy)
            for (int64_t j = -2; j <= 2; ++j) {
                const int64_t iy = detail::reflect101(2 * oy + j, H);
                const S kv = k[j + 2];
                const S* srow = src + iy * W;
                S* trow = t + oy * W;
                if (j == -2)
                    for (int64_t xx = 0; xx < W; ++xx) trow[xx] = kv * srow[xx];
                else
                    for (int64_t xx = 0; xx < W; ++xx) trow[xx] += kv * srow[xx];
            }
    }
    Tensor<S> out({B, C, H2, W2});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* t = tmp.ptr() + bc * H2 * W;
        S* dst = out.ptr() + bc * H2 * W2;
        for (int64_t oy = 0; oy < H2; ++oy)
            for (int64_t ox = 0; ox < W2; ++ox) {
                S acc = S(0);
                for (int64_t j = -2; j <= 2; ++j) acc += k[j + 2] * t[oy * W + detail::reflect101(2 * ox + j, W)];
                dst[oy * W2 + ox] = acc;
            }
    }
    return make_node<S>(std::move(out), "gauss_down", {x}, [x, B, C, H, W, H2, W2](Node<S>& node) {
        x->ensure_grad();
        const auto k = detail::binomial16<S>();
        Tensor<S> gtmp({B, C, H2, W});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const S* g = node.grad.ptr() + bc * H2 * W2;
            S* gt = gtmp.ptr() + bc * H2 * W;
            for (int64_t oy = 0; oy < H2; ++oy)
                for (int64_t ox = 0; ox < W2; ++ox) {
                    const S gv = g[oy * W2 + ox];
                    for (int64_t j = -2; j <= 2; ++j)
                        gt[oy * W + detail::reflect101(2 * ox + j, W)] += k[j + 2] * gv;
                }
            S* gx = x->grad.ptr() + bc * H * W;
            for (int64_t oy = 0; oy < H2; ++oy)
                for (int64_t j = -2; j <= 2; ++j) {
                    const int64_t iy = detail::reflect101(2 * oy + j, H);
                    const S kv = k[j + 2];
                    for (int64_t xx = 0; xx < W; ++xx) gx[iy * W + xx] += kv * gt[oy * W + xx];
                }
        }
    });
}

// Zero-insertion upsample followed by the doubled binomial kernel; the exact
// adjoint construction used both when decomposing and when reconstructing.
// (B,C,H,W) -> (B,C,2H,2W).
template <typename S>
Var<S> upsample_x2(const Var<S>& x) {
    require(x->value.rank() == 4, "upsample_x2 expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    const auto k = detail::binomial8<S>();
    const int64_t H2 = 2 * H, W2 = 2 * W;
    // vertical expand: zero-inserted rows convolved along y
    Tensor<S> tmp({B, C, H2, W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* src = x->value.ptr() + bc * H * W;
        S* t = tmp.ptr() + bc * H2 * W;
        for (int64_t oy = 0; oy < H2; ++oy) {
            S* trow = t + oy * W;
            std::fill_n(trow, W, S(0));
            for (int64_t j = -2; j <= 2; ++j) {
                const int64_t p = detail::reflect101(oy + j, H2);
                if (p % 2 != 0) continue;
                const S kv = k[j + 2];
                const S* srow = src + (p / 2) * W;
                for (int64_t xx = 0; xx < W; ++xx) trow[xx] += kv * srow[xx];
            }
        }
    }
    Tensor<S> out({B, C, H2, W2});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* t = tmp.ptr() + bc * H2 * W;
        S* dst = out.ptr() + bc * H2 * W2;
        for (int64_t oy = 0; oy < H2; ++oy)
            for (int64_t ox = 0; ox < W2; ++ox) {
                S acc = S(0);
                for (int64_t j = -2; j <= 2; ++j) {
                    const int64_t p = detail::reflect101(ox + j, W2);
                    if (p % 2 == 0) acc += k[j + 2] * t[oy * W + p / 2];
                }
                dst[oy * W2 + ox] = acc;
            }
    }
    return make_node<S>(std::move(out), "upsample2", {x}, [x, B, C, H, W, H2, W2](Node<S>& node) {
        x->ensure_grad();
        const auto k = detail::binomial8<S>();
        Tensor<S> gtmp({B, C, H2, W});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const S* g = node.grad.ptr() + bc * H2 * W2;
            S* gt = gtmp.ptr() + bc * H2 * W;
            for (int64_t oy = 0; oy < H2; ++oy)
                for (int64_t ox = 0; ox < W2; ++ox) {
                    const S gv = g[oy * W2 + ox];
                    if (gv == S(0)) continue;
                    for (int64_t j = -2; j <= 2; ++j) {
                        const int64_t p = detail::reflect101(ox + j, W2);
                        if (p % 2 == 0) gt[oy * W + p / 2] += k[j + 2] * gv;
                    }
                }
            S* gx = x->grad.ptr() + bc * H * W;
            for (int64_t oy = 0; oy < H2; ++oy)
                for (int64_t j = -2; j <= 2; ++j) {
                    const int64_t p = detail::reflect101(oy + j, H2);
                    if (p % 2 != 0) continue;
                    const S kv = k[j + 2];
                    const S* grow = gt + oy * W;
                    S* gxrow = gx + (p / 2) * W;
                    for (int64_t xx = 0; xx < W; ++xx) gxrow[xx] += kv * grow[xx];
                }
        }
    });
}

// Inference-only fused attention: softmax(q k^T / sqrt(D)) v computed one
// query row at a time so the N x N score matrix is never materialized.
// q,k,v: (G,N,D) -> (G,N,D). Forward values match the composable-op path.
template <typename S>
Var<S> attention_nograd(const Var<S>& q, const Var<S>& k, const Var<S>& v) {
    require(!GradMode::enabled(), "attention_nograd must not run under autodiff");
    require(q->value.same_shape(k->value) && k->value.same_shape(v->value) && q->value.rank() == 3,
            "attention_nograd expects three (G,N,D) tensors");
    const int64_t G = q->value.shape[0], N = q->value.shape[1], D = q->value.shape[2];
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(D)));
    Tensor<S> out({G, N, D});
    std::vector<S> row(N);
    for (int64_t g = 0; g < G; ++g) {
        const S* kq = q->value.ptr() + g * N * D;
        const S* kk = k->value.ptr() + g * N * D;
        const S* kv = v->value.ptr() + g * N * D;
        S* ko = out.ptr() + g * N * D;
        for (int64_t m = 0; m < N; ++m) {
            const S* qr = kq + m * D;
            for (int64_t n = 0; n < N; ++n) {
                const S* kr = kk + n * D;
                double acc = 0.0;
                for (int64_t d = 0; d < D; ++d) acc += static_cast<double>(qr[d]) * static_cast<double>(kr[d]);
                row[n] = static_cast<S>(acc) * inv_sqrt_d;
            }
            double mx = static_cast<double>(row[0]);
            for (int64_t n = 1; n < N; ++n) mx = std::max(mx, static_cast<double>(row[n]));
            double sum = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const double e = std::exp(static_cast<double>(row[n]) - mx);
                row[n] = static_cast<S>(e);
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int64_t n = 0; n < N; ++n) row[n] = static_cast<S>(static_cast<double>(row[n]) * inv);
            S* orow = ko + m * D;
            std::fill_n(orow, D, S(0));
            for (int64_t n = 0; n < N; ++n) {
                const S p = row[n];
                if (p == S(0)) continue;
                const S* vr = kv + n * D;
                for (int64_t d = 0; d < D; ++d) orow[d] += p * vr[d];
            }
        }
    }
    return make_leaf(std::move(out));
}

namespace detail {

template <typename S>
const std::array<S, 11>& ssim_window() {
    static const std::array<S, 11> w = [] {
        std::array<S, 11> k{};
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            const double v = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            k[i] = static_cast<S>(v);
            sum += v;
        }
        for (int i = 0; i < 11; ++i) k[i] = static_cast<S>(static_cast<double>(k[i]) / sum);
        return k;
    }();
    return w;
}

} // namespace detail

// 11x11 Gaussian window mean, sigma=1.5, valid region only:
// (B,C,H,W) -> (B,C,H-10,W-10).
template <typename S>
Var<S> gauss11_valid(const Var<S>& x) {
    require(x->value.rank() == 4, "gauss11_valid expects (B,C,H,W)");
    const int64_t B = x->value.shape[0], C = x->value.shape[1];
    const int64_t H = x->value.shape[2], W = x->value.shape[3];
    require(H >= 11 && W >= 11, "gauss11_valid: image smaller than the 11x11 SSIM window");
    const auto& k = detail::ssim_window<S>();
    const int64_t Wo = W - 10, Ho = H - 10;
    Tensor<S> tmp({B, C, H, Wo});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* src = x->value.ptr() + bc * H * W;
        S* t = tmp.ptr() + bc * H * Wo;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                S acc = S(0);
                for (int64_t j = 0; j < 11; ++j) acc += k[j] * src[y * W + ox + j];
                t[y * Wo + ox] = acc;
            }
    }
    Tensor<S> out({B, C, Ho, Wo});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* t = tmp.ptr() + bc * H * Wo;
        S* dst = out.ptr() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                S acc = S(0);
                for (int64_t j = 0; j < 11; ++j) acc += k[j] * t[(oy + j) * Wo + ox];
                dst[oy * Wo + ox] = acc;
            }
    }
    return make_node<S>(std::move(out), "gauss11", {x}, [x, B, C, H, W, Ho, Wo](Node<S>& node) {
        x->ensure_grad();
        const auto& k = detail::ssim_window<S>();
        Tensor<S> gtmp({B, C, H, Wo});
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const S* g = node.grad.ptr() + bc * Ho * Wo;
            S* gt = gtmp.ptr() + bc * H * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const S gv = g[oy * Wo + ox];
                    if (gv == S(0)) continue;
                    for (int64_t j = 0; j < 11; ++j) gt[(oy + j) * Wo + ox] += k[j] * gv;
                }
            S* gx = x->grad.ptr() + bc * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const S gv = gt[y * Wo + ox];
                    if (gv == S(0)) continue;
                    for (int64_t j = 0; j < 11; ++j) gx[y * W + ox + j] += k[j] * gv;
                }
        }
    });
}

} // namespace devignet::ops
