#pragma once

#include "image.hpp"

#include <json.hpp>

#include <limits>

namespace devignet {

// ---------------------------------------------------------------------------
// SSIM (single-scale, Wang et al. conventions): 11x11 Gaussian window,
// sigma 1.5, C1=(0.01 L)^2, C2=(0.03 L)^2 with L=1, valid windows only,
// channel-mean of per-channel maps. Differentiable.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> ssim(const Var<S>& a, const Var<S>& b) {
    if (a->value.shape != b->value.shape)
        throw StructuralError("ssim: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    const S c1 = S(0.01 * 0.01);
    const S c2 = S(0.03 * 0.03);

    Var<S> mu_a = ops::gauss11_valid(a);
    Var<S> mu_b = ops::gauss11_valid(b);
    Var<S> e_aa = ops::gauss11_valid(ops::mul(a, a));
    Var<S> e_bb = ops::gauss11_valid(ops::mul(b, b));
    Var<S> e_ab = ops::gauss11_valid(ops::mul(a, b));

    Var<S> mu_aa = ops::mul(mu_a, mu_a);
    Var<S> mu_bb = ops::mul(mu_b, mu_b);
    Var<S> mu_ab = ops::mul(mu_a, mu_b);

    Var<S> var_a = ops::sub(e_aa, mu_aa);
    Var<S> var_b = ops::sub(e_bb, mu_bb);
    Var<S> cov = ops::sub(e_ab, mu_ab);

    Var<S> num = ops::mul(ops::add_scalar(ops::scale(mu_ab, S(2)), c1),
                          ops::add_scalar(ops::scale(cov, S(2)), c2));
    Var<S> den = ops::mul(ops::add_scalar(ops::add(mu_aa, mu_bb), c1),
                          ops::add_scalar(ops::add(var_a, var_b), c2));
    return ops::mean_all(ops::div(num, den));
}

inline double ssim(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw StructuralError("ssim: image size mismatch");
    NoGradGuard ng;
    auto va = make_leaf(image_to_tensor<double>(a));
    auto vb = make_leaf(image_to_tensor<double>(b));
    return ssim(va, vb)->value.data[0];
}

// ---------------------------------------------------------------------------
// Training objective: L_total = L_MSE + lambda * (1 - SSIM).
// ---------------------------------------------------------------------------

template <typename S>
Var<S> mse(const Var<S>& pred, const Var<S>& gt) {
    if (pred->value.shape != gt->value.shape)
        throw StructuralError("mse: shape mismatch " + pred->value.shape_str() + " vs " + gt->value.shape_str());
    Var<S> d = ops::sub(pred, gt);
    return ops::mean_all(ops::mul(d, d));
}

template <typename S>
Var<S> loss_total(const Var<S>& pred, const Var<S>& gt, S lambda = S(0.4)) {
    Var<S> l_mse = mse(pred, gt);
    Var<S> l_ssim = ops::add_scalar(ops::scale(ssim(pred, gt), S(-1)), S(1)); // 1 - SSIM
    return ops::add(l_mse, ops::scale(l_ssim, lambda));
}

// ---------------------------------------------------------------------------
// Scalar image metrics with pinned conventions: PSNR in dB with peak 1.0 on
// [0,1] data (identical images report +inf), MAE on the 0-255 scale.
// ---------------------------------------------------------------------------

inline double mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw StructuralError("mse: image size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

inline double mae_255(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw StructuralError("mae: image size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        acc += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    return acc / static_cast<double>(a.data.size()) * 255.0;
}

// ---------------------------------------------------------------------------
// MetricsReport
// ---------------------------------------------------------------------------

// Extension point for metrics that need external resources (e.g. LPIPS with
// a pretrained network). Registered metrics ride along in the JSON report;
// the CSV keeps its fixed column set.
using PairedMetric = std::function<double(const Image& a, const Image& b)>;
using ExtraMetrics = std::vector<std::pair<std::string, PairedMetric>>;

struct MetricsReport {
    struct Entry {
        std::string id;
        double psnr_db = 0.0;
        double ssim = 0.0;
        double mae_255 = 0.0;
        std::vector<std::pair<std::string, double>> extra;
    };

    std::vector<Entry> per_image;
    Entry aggregate; // id left empty; fields are arithmetic means
    int64_t resolution = 0;

    void add(std::string id, double psnr_db, double ssim_v, double mae_v,
             std::vector<std::pair<std::string, double>> extra = {}) {
        per_image.push_back({std::move(id), psnr_db, ssim_v, mae_v, std::move(extra)});
    }

    void finalize() {
        aggregate = Entry{};
        if (per_image.empty()) return;
        for (const auto& e : per_image) {
            aggregate.psnr_db += e.psnr_db;
            aggregate.ssim += e.ssim;
            aggregate.mae_255 += e.mae_255;
        }
        const double n = static_cast<double>(per_image.size());
        aggregate.psnr_db /= n;
        aggregate.ssim /= n;
        aggregate.mae_255 /= n;
        if (!per_image.front().extra.empty()) {
            aggregate.extra = per_image.front().extra;
            for (auto& [name, v] : aggregate.extra) v = 0.0;
            for (const auto& e : per_image)
                for (size_t k = 0; k < e.extra.size(); ++k) aggregate.extra[k].second += e.extra[k].second;
            for (auto& [name, v] : aggregate.extra) v /= n;
        }
    }
};

namespace detail {

inline nlohmann::json json_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

} // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
    auto entry_json = [](const MetricsReport::Entry& e, bool with_id) {
        nlohmann::json j = {{"psnr_db", detail::json_number(e.psnr_db)},
                            {"ssim", e.ssim},
                            {"mae_255", e.mae_255}};
        if (with_id) j["id"] = e.id;
        for (const auto& [name, v] : e.extra) j[name] = detail::json_number(v);
        return j;
    };
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : r.per_image) per.push_back(entry_json(e, true));
    return {{"resolution", r.resolution},
            {"per_image", per},
            {"aggregate", entry_json(r.aggregate, false)}};
}

inline std::string to_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "id,psnr_db,ssim,mae_255\n";
    auto num = [](double v) -> std::string {
        if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
        std::ostringstream s;
        s.precision(10);
        s << v;
        return s.str();
    };
    for (const auto& e : r.per_image)
        os << e.id << "," << num(e.psnr_db) << "," << num(e.ssim) << "," << num(e.mae_255) << "\n";
    return os.str();
}

} // namespace devignet
