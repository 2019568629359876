#pragma once

#include "nn.hpp"

namespace devignet {

struct AcemConfig {
    int channels = 32;
    double expansion = 2.0;
    int blocks_per_level = 2;
    bool enabled = true;

    int expanded_channels() const { return static_cast<int>(expansion * channels + 0.5); }

    void validate() const {
        require(channels > 0, "acem.channels must be positive");
        require(blocks_per_level >= 1, "acem.blocks_per_level must be >= 1");
        require(expanded_channels() % 2 == 0,
                "acem.expansion * channels must be even (the gate halves channels)");
    }
};

namespace acem {

// Formula-level pieces, exposed as free functions so they can be checked against
// oracles in isolation.

template <typename S>
Var<S> simple_gate(const Var<S>& x) {
    return ops::simple_gate(x);
}

// SCA(X) = X * W pool(X): global average pool, one channel map, rescale.
template <typename S>
Var<S> sca(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
    Var<S> pooled = ops::global_avg_pool(x);   // (B,C)
    Var<S> mapped = ops::linear(pooled, w, b); // (B,C)
    return ops::channel_scale(x, mapped);
}

} // namespace acem

// One activation-free block: LN -> expand -> depthwise -> gate -> SCA ->
// project -> residual. The only elementwise nonlinearity is the gate product.
template <typename S>
struct AcemBlock {
    nn::LayerNorm<S> ln;
    nn::Conv1x1<S> expand;
    nn::DwConv3x3<S> dw;
    Var<S> sca_w, sca_b;
    nn::Conv1x1<S> project;

    AcemBlock() = default;
    AcemBlock(ParamStore<S>& ps, Rng& rng, const std::string& name, const AcemConfig& cfg) {
        const int64_t c = cfg.channels;
        const int64_t e = cfg.expanded_channels();
        ln = nn::LayerNorm<S>(ps, name + ".ln", c);
        expand = nn::Conv1x1<S>(ps, rng, name + ".expand", c, e);
        dw = nn::DwConv3x3<S>(ps, rng, name + ".dw", e);
        sca_w = ps.create(name + ".sca.w", nn::fan_in_uniform<S>(rng, {e / 2, e / 2}, e / 2));
        sca_b = ps.create(name + ".sca.b", Tensor<S>::zeros({e / 2}));
        project = nn::Conv1x1<S>(ps, rng, name + ".project", e / 2, c);
    }

    Var<S> operator()(const Var<S>& x) const {
        Var<S> t = ln.channels(x);
        t = expand(t);
        t = dw(t);
        t = acem::simple_gate(t);
        t = acem::sca(t, sca_w, sca_b);
        t = project(t);
        return ops::add(x, t);
    }
};

// Per-level high-frequency refiner. Fuses the band-pass level with the
// upsampled enhanced coarser reconstruction, runs the activation-free blocks
// and adds a zero-initialized 3-channel correction back onto the level.
template <typename S>
struct HighFreqRefiner {
    AcemConfig cfg;
    nn::Conv1x1<S> fuse;
    std::vector<AcemBlock<S>> blocks;
    nn::Conv1x1<S> head;

    HighFreqRefiner() = default;
    HighFreqRefiner(ParamStore<S>& ps, Rng& rng, const std::string& name, const AcemConfig& config)
        : cfg(config) {
        cfg.validate();
        if (!cfg.enabled) return;
        fuse = nn::Conv1x1<S>(ps, rng, name + ".fuse", 6, cfg.channels);
        for (int i = 0; i < cfg.blocks_per_level; ++i)
            blocks.emplace_back(ps, rng, name + ".block" + std::to_string(i), cfg);
        head = nn::Conv1x1<S>(ps, rng, name + ".head", cfg.channels, 3, nn::Init::Zero);
    }

    Var<S> operator()(const Var<S>& high, const Var<S>& context) const {
        if (!cfg.enabled) return high;
        if (high->value.shape != context->value.shape)
            throw StructuralError("refine_highfreq: level " + high->value.shape_str() +
                                  " and context " + context->value.shape_str() + " disagree");
        Var<S> t = fuse(ops::concat_channels(high, context));
        for (const auto& blk : blocks) t = blk(t);
        return ops::add(high, head(t));
    }
};

} // namespace devignet
