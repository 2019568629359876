#pragma once

// Shared helpers for the test suites: random data, brute-force oracles kept
// independent of the library's computation paths, and finite-difference
// gradient checking.

#include <devignet/devignet.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using devignet::Image;
using devignet::Rng;
using devignet::Tensor;
using devignet::Var;

template <typename S>
Tensor<S> rand_tensor(Rng& rng, std::vector<int64_t> shape, double lo = 0.0, double hi = 1.0) {
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

template <typename S>
Var<S> rand_var(Rng& rng, std::vector<int64_t> shape, double lo = 0.0, double hi = 1.0,
                bool requires_grad = false) {
    return devignet::make_leaf(rand_tensor<S>(rng, std::move(shape), lo, hi), requires_grad);
}

inline Image rand_image(Rng& rng, int64_t h, int64_t w) {
    Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <typename S>
double max_abs(const Tensor<S>& a) {
    double m = 0.0;
    for (const auto& v : a.data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

// ---------------------------------------------------------------------------
// Pyramid oracles: non-separable direct 5x5 convolutions, so they share no
// structure with the two-pass implementation under test.
// ---------------------------------------------------------------------------

inline int64_t oracle_reflect(int64_t p, int64_t n) {
    if (n == 1) return 0;
    while (p < 0 || p >= n) p = (p < 0) ? -p : 2 * n - 2 - p;
    return p;
}

template <typename S>
Tensor<S> oracle_downsample(const Tensor<S>& x) {
    const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const double k1[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    Tensor<S> out({B, C, H / 2, W / 2});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t oy = 0; oy < H / 2; ++oy)
                for (int64_t ox = 0; ox < W / 2; ++ox) {
                    double acc = 0.0;
                    for (int dy = -2; dy <= 2; ++dy)
                        for (int dx = -2; dx <= 2; ++dx) {
                            const int64_t iy = oracle_reflect(2 * oy + dy, H);
                            const int64_t ix = oracle_reflect(2 * ox + dx, W);
                            acc += k1[dy + 2] * k1[dx + 2] * static_cast<double>(x.at4(b, c, iy, ix));
                        }
                    out.at4(b, c, oy, ox) = static_cast<S>(acc);
                }
    return out;
}

template <typename S>
Tensor<S> oracle_upsample(const Tensor<S>& x) {
    const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t H2 = 2 * H, W2 = 2 * W;
    const double k1[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    Tensor<S> out({B, C, H2, W2});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            // explicit zero-inserted grid
            std::vector<double> z(H2 * W2, 0.0);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t xx = 0; xx < W; ++xx)
                    z[(2 * y) * W2 + 2 * xx] = static_cast<double>(x.at4(b, c, y, xx));
            for (int64_t oy = 0; oy < H2; ++oy)
                for (int64_t ox = 0; ox < W2; ++ox) {
                    double acc = 0.0;
                    for (int dy = -2; dy <= 2; ++dy)
                        for (int dx = -2; dx <= 2; ++dx) {
                            const int64_t iy = oracle_reflect(oy + dy, H2);
                            const int64_t ix = oracle_reflect(ox + dx, W2);
                            acc += k1[dy + 2] * k1[dx + 2] * z[iy * W2 + ix];
                        }
                    out.at4(b, c, oy, ox) = static_cast<S>(acc * 4.0);
                }
        }
    return out;
}

// ---------------------------------------------------------------------------
// SSIM oracle: naive per-window evaluation with its own Gaussian weights.
// ---------------------------------------------------------------------------

inline double oracle_ssim(const Tensor<double>& a, const Tensor<double>& b) {
    const int64_t B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
    double win[11];
    double wsum = 0.0;
    for (int i = 0; i < 11; ++i) {
        win[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 2.25));
        wsum += win[i];
    }
    for (int i = 0; i < 11; ++i) win[i] /= wsum;
    const double c1 = 1e-4, c2 = 9e-4;

    double total = 0.0;
    int64_t count = 0;
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y + 11 <= H; ++y)
                for (int64_t x = 0; x + 11 <= W; ++x) {
                    double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                    for (int dy = 0; dy < 11; ++dy)
                        for (int dx = 0; dx < 11; ++dx) {
                            const double w = win[dy] * win[dx];
                            const double va = a.at4(bb, c, y + dy, x + dx);
                            const double vb = b.at4(bb, c, y + dy, x + dx);
                            mx += w * va;
                            my += w * vb;
                            mxx += w * va * va;
                            myy += w * vb * vb;
                            mxy += w * va * vb;
                        }
                    const double sx = mxx - mx * mx;
                    const double sy = myy - my * my;
                    const double sxy = mxy - mx * my;
                    total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                             ((mx * mx + my * my + c1) * (sx + sy + c2));
                    ++count;
                }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central finite difference of a scalar-valued rebuild function with respect
// to one entry of `param`.
inline double fd_gradient(const std::function<double()>& eval, devignet::Var<double> param,
                          int64_t index, double h = 1e-5) {
    const double saved = param->value.data[index];
    param->value.data[index] = saved + h;
    const double fp = eval();
    param->value.data[index] = saved - h;
    const double fm = eval();
    param->value.data[index] = saved;
    return (fp - fm) / (2.0 * h);
}

inline double rel_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

// Adjoint identity <y, A x> == <A^T y, x> for a linear operator exposed as a
// single-input op. Exact up to accumulation roundoff, so it is the right
// check for fixed-kernel convolutions whose per-element gradients are tiny.
inline double adjoint_mismatch(
    const std::function<devignet::Var<double>(const devignet::Var<double>&)>& op,
    const std::vector<int64_t>& in_shape, uint64_t seed) {
    Rng rng(seed);
    auto x = rand_var<double>(rng, in_shape, -1.0, 1.0, true);
    auto y = op(x);
    Tensor<double> cotangent = rand_tensor<double>(rng, y->value.shape, -1.0, 1.0);

    double s1 = 0.0;
    for (int64_t i = 0; i < y->value.numel(); ++i) s1 += y->value.data[i] * cotangent.data[i];

    y->ensure_grad();
    y->grad = cotangent;
    y->backward_fn(*y);

    double s2 = 0.0;
    for (int64_t i = 0; i < x->value.numel(); ++i) s2 += x->grad.data[i] * x->value.data[i];
    return std::abs(s1 - s2) / std::max(1.0, std::abs(s1));
}

// Checks analytic gradients of `build` (which must construct a fresh graph
// from the given leaves each call) against central differences on every
// entry of every leaf that requires grad.
inline double check_gradients(const std::function<devignet::Var<double>()>& build,
                              const std::vector<devignet::Var<double>>& leaves, double h = 1e-5) {
    devignet::Var<double> loss = build();
    devignet::backward(loss);
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        if (!leaf->requires_grad) continue;
        for (int64_t i = 0; i < leaf->value.numel(); ++i) {
            const double analytic = leaf->has_grad() ? leaf->grad.data[i] : 0.0;
            const double fd = fd_gradient([&] { return build()->value.data[0]; }, leaf, i, h);
            worst = std::max(worst, rel_error(analytic, fd));
        }
        leaf->grad.data.clear();
    }
    return worst;
}

} // namespace testutil
