#pragma once

#include "ops.hpp"

namespace devignet {

// Laplacian pyramid with exact reconstruction: the same zero-insertion
// upsample is used when forming the band-pass levels and when rebuilding,
// so decompose followed by reconstruct is an algebraic identity.
template <typename S>
struct PyramidDecomposition {
    std::vector<Var<S>> highs; // highs[k] has shape (B,C,H/2^k,W/2^k)
    Var<S> low;                // (B,C,H/2^D,W/2^D)
    int depth = 0;
};

namespace pyramid {

template <typename S>
Var<S> gaussian_downsample(const Var<S>& x) {
    return ops::gaussian_downsample(x);
}

template <typename S>
Var<S> upsample(const Var<S>& x) {
    return ops::upsample_x2(x);
}

template <typename S>
PyramidDecomposition<S> decompose(const Var<S>& img, int depth) {
    require(depth >= 1, "pyramid depth must be >= 1");
    const int64_t H = img->value.shape[2], W = img->value.shape[3];
    const int64_t m = int64_t(1) << depth;
    if (H % m != 0 || W % m != 0)
        throw StructuralError("decompose: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                              " must be multiples of " + std::to_string(m) + " for depth " + std::to_string(depth));
    PyramidDecomposition<S> pyr;
    pyr.depth = depth;
    Var<S> cur = img;
    for (int k = 0; k < depth; ++k) {
        Var<S> down = ops::gaussian_downsample(cur);
        Var<S> up = ops::upsample_x2(down);
        pyr.highs.push_back(ops::sub(cur, up));
        cur = down;
    }
    pyr.low = cur;
    return pyr;
}

template <typename S>
Var<S> reconstruct(const PyramidDecomposition<S>& pyr) {
    require(pyr.low != nullptr && static_cast<int>(pyr.highs.size()) == pyr.depth,
            "reconstruct: malformed pyramid");
    Var<S> cur = pyr.low;
    for (int k = pyr.depth - 1; k >= 0; --k) {
        Var<S> up = ops::upsample_x2(cur);
        const auto& hs = pyr.highs[k]->value.shape;
        if (up->value.shape != hs)
            throw StructuralError("reconstruct: level " + std::to_string(k) + " expects " +
                                  pyr.highs[k]->value.shape_str() + " but upsampled coarse level is " +
                                  up->value.shape_str());
        cur = ops::add(pyr.highs[k], up);
    }
    return cur;
}

} // namespace pyramid

} // namespace devignet
