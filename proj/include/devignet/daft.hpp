#pragma once

#include "hcam.hpp"

#include <array>

namespace devignet {

struct DaftConfig {
    int channels = 32;
    int patch_size = 4;
    int heads = 4;
    double mlp_ratio = 2.0;
    std::array<int, 4> block_counts = {1, 2, 3, 4};
    bool enabled = true;
    int pos_grid = 16; // base size of the learned positional grid

    void validate() const {
        require(channels > 0 && channels % heads == 0, "daft.channels must be divisible by daft.heads");
        require(patch_size >= 1, "daft.patch_size must be >= 1");
        require(block_counts == std::array<int, 4>{1, 2, 3, 4},
                "daft.block_counts must be exactly (1,2,3,4)");
        require(pos_grid >= 1, "daft.pos_grid must be >= 1");
    }
};

// Token form of the low-frequency feature plus its spatial layout.
template <typename S>
struct TokenGrid {
    Var<S> tokens; // (B, Hp*Wp, C)
    int64_t hp = 0, wp = 0;

    Var<S> as_grid() const { return ops::tokens_to_grid(tokens, hp, wp); }
};

// Non-overlapping patch projection with a learned positional grid that is
// bilinearly resized to the token layout, so one weight set serves any
// valid input resolution.
template <typename S>
struct PatchEmbed {
    DaftConfig cfg;
    nn::Linear<S> proj;
    Var<S> pos; // (1, C, G, G)

    PatchEmbed() = default;
    PatchEmbed(ParamStore<S>& ps, Rng& rng, const std::string& name, const DaftConfig& config)
        : cfg(config) {
        const int64_t pdim = int64_t(3) * cfg.patch_size * cfg.patch_size;
        proj = nn::Linear<S>(ps, rng, name + ".proj", pdim, cfg.channels);
        Tensor<S> p({1, cfg.channels, cfg.pos_grid, cfg.pos_grid});
        for (auto& v : p.data) v = static_cast<S>(0.02 * rng.normal());
        pos = ps.create(name + ".pos", std::move(p));
    }

    TokenGrid<S> operator()(const Var<S>& lowfreq) const {
        const int64_t H = lowfreq->value.shape[2], W = lowfreq->value.shape[3];
        const int64_t P = cfg.patch_size;
        if (H % P != 0 || W % P != 0)
            throw StructuralError("patch_embed: input " + lowfreq->value.shape_str() +
                                  " not divisible by patch size " + std::to_string(P));
        TokenGrid<S> tg;
        tg.hp = H / P;
        tg.wp = W / P;
        Var<S> patches = ops::patchify(lowfreq, P);                    // (B, N, 3*P*P)
        Var<S> tokens = proj(patches);                                 // (B, N, C)
        Var<S> pos_resized = ops::bilinear_resize(pos, tg.hp, tg.wp);  // (1, C, Hp, Wp)
        Var<S> pos_tokens = ops::grid_to_tokens(pos_resized);          // (1, N, C)
        tg.tokens = ops::add_batchcast(tokens, pos_tokens);
        return tg;
    }
};

// Pre-norm ViT block; attention and MLP output projections start at zero so
// a fresh block is the identity.
template <typename S>
struct TransformerBlock {
    int heads = 4;
    nn::LayerNorm<S> ln1, ln2;
    nn::Linear<S> qkv, attn_out;
    nn::Linear<S> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<S>& ps, Rng& rng, const std::string& name, const DaftConfig& cfg)
        : heads(cfg.heads) {
        const int64_t c = cfg.channels;
        const int64_t hidden = static_cast<int64_t>(cfg.mlp_ratio * c + 0.5);
        ln1 = nn::LayerNorm<S>(ps, name + ".ln1", c);
        qkv = nn::Linear<S>(ps, rng, name + ".qkv", c, 3 * c);
        attn_out = nn::Linear<S>(ps, rng, name + ".attn_out", c, c, nn::Init::Zero);
        ln2 = nn::LayerNorm<S>(ps, name + ".ln2", c);
        fc1 = nn::Linear<S>(ps, rng, name + ".fc1", c, hidden);
        fc2 = nn::Linear<S>(ps, rng, name + ".fc2", hidden, c, nn::Init::Zero);
    }

    Var<S> operator()(const Var<S>& tokens) const {
        const int64_t B = tokens->value.shape[0];
        const int64_t C = tokens->value.shape[2];
        const int64_t D = C / heads;

        Var<S> h = ln1.last(tokens);
        Var<S> qkv_all = qkv(h); // (B,N,3C)
        Var<S> q = ops::split_heads(ops::slice_last(qkv_all, 0, C), heads);
        Var<S> k = ops::split_heads(ops::slice_last(qkv_all, C, C), heads);
        Var<S> v = ops::split_heads(ops::slice_last(qkv_all, 2 * C, C), heads);
        Var<S> ctx;
        if (GradMode::enabled()) {
            Var<S> att =
                ops::scale(ops::bmm_nt(q, k), static_cast<S>(1.0 / std::sqrt(static_cast<double>(D))));
            ctx = ops::bmm(ops::softmax_last(att), v);
        } else {
            // avoids materializing the token^2 score matrix at inference
            ctx = ops::attention_nograd(q, k, v);
        }
        Var<S> o = ops::merge_heads(ctx, B, heads);
        Var<S> x = ops::add(tokens, attn_out(o));

        Var<S> m = ln2.last(x);
        m = fc2(ops::gelu(fc1(m)));
        return ops::add(x, m);
    }
};

// Two sequential stacks of n blocks whose outputs are summed:
// out = m2(m1(x)) + m1(x).
template <typename S>
struct FusionTransformer {
    std::vector<TransformerBlock<S>> m1, m2;

    FusionTransformer() = default;
    FusionTransformer(ParamStore<S>& ps, Rng& rng, const std::string& name, const DaftConfig& cfg,
                      int n_blocks) {
        require(n_blocks >= 1 && n_blocks <= 4, "fusion transformer block count must be in {1,2,3,4}");
        for (int i = 0; i < n_blocks; ++i) {
            m1.emplace_back(ps, rng, name + ".m1.block" + std::to_string(i), cfg);
            m2.emplace_back(ps, rng, name + ".m2.block" + std::to_string(i), cfg);
        }
    }

    Var<S> operator()(const Var<S>& tokens) const {
        Var<S> a = tokens;
        for (const auto& blk : m1) a = blk(a);
        Var<S> b = a;
        for (const auto& blk : m2) b = blk(b);
        return ops::add(b, a);
    }
};

// Feature integration: concat the two operands and project back to C.
template <typename S>
struct AggregationNode {
    nn::Conv1x1<S> project;

    AggregationNode() = default;
    AggregationNode(ParamStore<S>& ps, Rng& rng, const std::string& name, int64_t channels) {
        project = nn::Conv1x1<S>(ps, rng, name + ".project", 2 * channels, channels);
    }

    Var<S> operator()(const Var<S>& a, const Var<S>& b) const {
        if (a->value.shape != b->value.shape)
            throw StructuralError("aggregation_node: operands " + a->value.shape_str() + " vs " +
                                  b->value.shape_str());
        return project(ops::concat_channels(a, b));
    }
};

// Low-frequency branch: four fusion transformers in sequence, a cascade of
// three aggregation nodes, HCAM over the three aggregated features, and a
// zero-initialized 3-channel head added residually to the input.
template <typename S>
struct Daft {
    DaftConfig cfg;
    PatchEmbed<S> embed;
    std::vector<FusionTransformer<S>> fts;
    std::vector<AggregationNode<S>> aggs;
    Hcam<S> hcam;
    nn::Conv1x1<S> head;

    Daft() = default;
    Daft(ParamStore<S>& ps, Rng& rng, const std::string& name, const DaftConfig& config,
         double hcam_alpha_init)
        : cfg(config) {
        cfg.validate();
        if (!cfg.enabled) return;
        embed = PatchEmbed<S>(ps, rng, name + ".embed", cfg);
        for (int i = 0; i < 4; ++i)
            fts.emplace_back(ps, rng, name + ".ft" + std::to_string(i + 1), cfg, cfg.block_counts[i]);
        for (int i = 0; i < 3; ++i)
            aggs.emplace_back(ps, rng, name + ".agg" + std::to_string(i + 1), cfg.channels);
        hcam = Hcam<S>(ps, rng, name + ".hcam", cfg.channels, hcam_alpha_init);
        head = nn::Conv1x1<S>(ps, rng, name + ".head", cfg.channels, 3, nn::Init::Zero);
    }

    Var<S> operator()(const Var<S>& lowfreq) const {
        if (!cfg.enabled) return lowfreq;
        const int64_t H = lowfreq->value.shape[2], W = lowfreq->value.shape[3];

        TokenGrid<S> tg = embed(lowfreq);
        std::array<Var<S>, 4> f;
        Var<S> t = tg.tokens;
        for (int i = 0; i < 4; ++i) {
            t = fts[i](t);
            f[i] = ops::tokens_to_grid(t, tg.hp, tg.wp);
        }
        Var<S> a1 = aggs[0](f[0], f[1]);
        Var<S> a2 = aggs[1](a1, f[2]);
        Var<S> a3 = aggs[2](a2, f[3]);

        LayerStack<S> stack{{a1, a2, a3}};
        Var<S> fused = hcam(stack, a3);

        Var<S> correction = head(fused);                       // (B,3,Hp,Wp)
        correction = ops::bilinear_resize(correction, H, W);   // back to low-freq resolution
        return ops::add(lowfreq, correction);
    }
};

} // namespace devignet
