#pragma once

#include "ops.hpp"

namespace devignet::nn {

enum class Init { FanIn, Zero };

template <typename S>
Tensor<S> fan_in_uniform(Rng& rng, std::vector<int64_t> shape, int64_t fan_in) {
    Tensor<S> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
    return t;
}

// Fully connected layer on the last axis.
template <typename S>
struct Linear {
    Var<S> w, b;

    Linear() = default;
    Linear(ParamStore<S>& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
           Init init = Init::FanIn, bool bias = true) {
        Tensor<S> wt = (init == Init::Zero) ? Tensor<S>::zeros({in, out})
                                            : fan_in_uniform<S>(rng, {in, out}, in);
        w = ps.create(name + ".w", std::move(wt));
        if (bias) b = ps.create(name + ".b", Tensor<S>::zeros({out}));
    }

    Var<S> operator()(const Var<S>& x) const { return ops::linear(x, w, b); }
};

template <typename S>
struct Conv1x1 {
    Var<S> w, b;

    Conv1x1() = default;
    Conv1x1(ParamStore<S>& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
            Init init = Init::FanIn, bool bias = true) {
        Tensor<S> wt = (init == Init::Zero) ? Tensor<S>::zeros({out, in})
                                            : fan_in_uniform<S>(rng, {out, in}, in);
        w = ps.create(name + ".w", std::move(wt));
        if (bias) b = ps.create(name + ".b", Tensor<S>::zeros({out}));
    }

    Var<S> operator()(const Var<S>& x) const { return ops::conv1x1(x, w, b); }
};

template <typename S>
struct DwConv3x3 {
    Var<S> w, b;

    DwConv3x3() = default;
    DwConv3x3(ParamStore<S>& ps, Rng& rng, const std::string& name, int64_t channels) {
        w = ps.create(name + ".w", fan_in_uniform<S>(rng, {channels, 3, 3}, 9));
        b = ps.create(name + ".b", Tensor<S>::zeros({channels}));
    }

    Var<S> operator()(const Var<S>& x) const { return ops::dwconv3x3(x, w, b); }
};

// LayerNorm with learnable per-channel scale and shift.
template <typename S>
struct LayerNorm {
    Var<S> gamma, beta;
    S eps = S(1e-6);

    LayerNorm() = default;
    LayerNorm(ParamStore<S>& ps, const std::string& name, int64_t channels) {
        gamma = ps.create(name + ".gamma", Tensor<S>::full({channels}, S(1)));
        beta = ps.create(name + ".beta", Tensor<S>::zeros({channels}));
    }

    // over the channel axis of (B,C,H,W)
    Var<S> channels(const Var<S>& x) const { return ops::layernorm_channels(x, gamma, beta, eps); }
    // over the last axis of a token sequence
    Var<S> last(const Var<S>& x) const { return ops::layernorm_last(x, gamma, beta, eps); }
};

} // namespace devignet::nn
