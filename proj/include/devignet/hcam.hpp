#pragma once

#include "nn.hpp"

#include <array>

namespace devignet {

// N = 3 hierarchical features of identical shape, attended as whole layers.
template <typename S>
struct LayerStack {
    std::array<Var<S>, 3> features;

    void validate() const {
        for (const auto& f : features) require(f != nullptr, "LayerStack: missing feature");
        require(features[0]->value.rank() == 4, "LayerStack: features must be (B,C,H,W)");
        require(features[0]->value.same_shape(features[1]->value) &&
                    features[1]->value.same_shape(features[2]->value),
                "LayerStack: features must share one shape");
    }
};

// Hierarchical channel attention: pointwise Q/K/V extraction shared across
// the three layers, an N x N attention over flattened layers with learnable
// positive temperature, and a zero-initialized merge projection so the
// residual path is the identity at init.
template <typename S>
struct Hcam {
    nn::Conv1x1<S> to_q, to_k, to_v;
    Var<S> log_alpha; // alpha = exp(log_alpha) keeps the temperature positive
    nn::Conv1x1<S> merge;

    Hcam() = default;
    Hcam(ParamStore<S>& ps, Rng& rng, const std::string& name, int64_t channels, double alpha_init) {
        require(alpha_init > 0.0, "hcam alpha_init must be positive");
        to_q = nn::Conv1x1<S>(ps, rng, name + ".q", channels, channels);
        to_k = nn::Conv1x1<S>(ps, rng, name + ".k", channels, channels);
        to_v = nn::Conv1x1<S>(ps, rng, name + ".v", channels, channels);
        log_alpha = ps.create(name + ".log_alpha",
                              Tensor<S>::full({1}, static_cast<S>(std::log(alpha_init))));
        merge = nn::Conv1x1<S>(ps, rng, name + ".merge", 3 * channels, channels, nn::Init::Zero);
    }

    S alpha() const { return std::exp(log_alpha->value.data[0]); }

    // Row-stochastic (B,3,3) layer-attention weights.
    Var<S> attention_matrix(const LayerStack<S>& stack) const {
        stack.validate();
        const auto& sh = stack.features[0]->value.shape;
        const int64_t B = sh[0], M = sh[1] * sh[2] * sh[3];
        std::array<Var<S>, 3> q, k;
        for (int i = 0; i < 3; ++i) {
            q[i] = ops::reshape(to_q(stack.features[i]), {B, M});
            k[i] = ops::reshape(to_k(stack.features[i]), {B, M});
        }
        Var<S> qh = ops::stack3_rows(q[0], q[1], q[2]); // (B,3,M)
        Var<S> kh = ops::stack3_rows(k[0], k[1], k[2]);
        Var<S> alpha_var = ops::exp_elem(log_alpha);
        Var<S> scores = ops::div_by_scalar_var(ops::bmm_nt(qh, kh), alpha_var); // (B,3,3)
        return ops::softmax_last(scores);
    }

    // scores = softmax_rows(Q_hat K_hat^T / alpha); output stack = scores * V_hat.
    std::array<Var<S>, 3> layer_attention(const LayerStack<S>& stack) const {
        stack.validate();
        const auto& sh = stack.features[0]->value.shape;
        const int64_t B = sh[0], C = sh[1], H = sh[2], W = sh[3];
        const int64_t M = C * H * W;

        Var<S> weights = attention_matrix(stack);
        std::array<Var<S>, 3> v;
        for (int i = 0; i < 3; ++i) v[i] = ops::reshape(to_v(stack.features[i]), {B, M});
        Var<S> vh = ops::stack3_rows(v[0], v[1], v[2]);
        Var<S> attended = ops::bmm(weights, vh); // (B,3,M)

        std::array<Var<S>, 3> out;
        for (int i = 0; i < 3; ++i)
            out[i] = ops::reshape(ops::slice_row3(attended, i), {B, C, H, W});
        return out;
    }

    // Residual fusion: W_1x1 over the merged attended stack plus R_in.
    Var<S> operator()(const LayerStack<S>& stack, const Var<S>& r_in) const {
        stack.validate();
        if (r_in->value.shape != stack.features[0]->value.shape)
            throw StructuralError("hcam: r_in " + r_in->value.shape_str() + " does not match stack " +
                                  stack.features[0]->value.shape_str());
        auto att = layer_attention(stack);
        Var<S> merged = ops::concat_channels(ops::concat_channels(att[0], att[1]), att[2]);
        return ops::add(merge(merged), r_in);
    }
};

} // namespace devignet
