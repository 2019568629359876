#pragma once

#include "acem.hpp"
#include "daft.hpp"
#include "image.hpp"
#include "pyramid.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace devignet {

struct ModelConfig {
    int pyramid_depth = 2;
    DaftConfig daft;
    AcemConfig acem;
    double hcam_alpha_init = 1.0;
    uint64_t seed = 0;

    void validate() const {
        require(pyramid_depth >= 1, "pyramid_depth must be >= 1");
        require(hcam_alpha_init > 0.0, "hcam_alpha_init must be positive");
        daft.validate();
        acem.validate();
    }

    // The coarsest level must still hold at least one patch; below this the
    // reflect padding cannot stretch the image far enough.
    int64_t geometry_multiple() const { return (int64_t(1) << pyramid_depth) * daft.patch_size; }
    int64_t min_dimension() const { return std::max<int64_t>(8, geometry_multiple() / 2); }
};

inline void to_json(nlohmann::json& j, const DaftConfig& c) {
    j = {{"channels", c.channels},     {"patch_size", c.patch_size}, {"heads", c.heads},
         {"mlp_ratio", c.mlp_ratio},   {"block_counts", c.block_counts}, {"enabled", c.enabled},
         {"pos_grid", c.pos_grid}};
}

inline void from_json(const nlohmann::json& j, DaftConfig& c) {
    c.channels = j.value("channels", c.channels);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    if (j.contains("block_counts")) {
        auto v = j.at("block_counts").get<std::vector<int>>();
        require(v.size() == 4, "daft.block_counts must have 4 entries");
        std::copy(v.begin(), v.end(), c.block_counts.begin());
    }
    c.enabled = j.value("enabled", c.enabled);
    c.pos_grid = j.value("pos_grid", c.pos_grid);
}

inline void to_json(nlohmann::json& j, const AcemConfig& c) {
    j = {{"channels", c.channels},
         {"expansion", c.expansion},
         {"blocks_per_level", c.blocks_per_level},
         {"enabled", c.enabled}};
}

inline void from_json(const nlohmann::json& j, AcemConfig& c) {
    c.channels = j.value("channels", c.channels);
    c.expansion = j.value("expansion", c.expansion);
    c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
    c.enabled = j.value("enabled", c.enabled);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"pyramid_depth", c.pyramid_depth},
         {"daft", c.daft},
         {"acem", c.acem},
         {"hcam_alpha_init", c.hcam_alpha_init},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.pyramid_depth = j.value("pyramid_depth", c.pyramid_depth);
    if (j.contains("daft")) j.at("daft").get_to(c.daft);
    if (j.contains("acem")) j.at("acem").get_to(c.acem);
    c.hcam_alpha_init = j.value("hcam_alpha_init", c.hcam_alpha_init);
    c.seed = j.value("seed", c.seed);
}

inline uint64_t config_hash(const ModelConfig& cfg) {
    return fnv1a64(nlohmann::json(cfg).dump());
}

// Full assembly: pad -> decompose -> DAFT+HCAM on the low frequency ->
// per-level ACEM refinement of the high frequencies against the running
// reconstruction -> crop -> clamp.
template <typename S>
class DeVigNet {
public:
    explicit DeVigNet(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        daft_ = Daft<S>(params_, rng, "daft", cfg_.daft, cfg_.hcam_alpha_init);
        for (int k = 0; k < cfg_.pyramid_depth; ++k)
            refiners_.emplace_back(params_, rng, "acem.level" + std::to_string(k), cfg_.acem);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }

    // Pre-clamp forward on an autodiff variable; the training loss is taken
    // on this output so gradients stay defined everywhere.
    Var<S> forward_train(const Var<S>& img) const {
        require(img->value.rank() == 4 && img->value.shape[1] == 3,
                "forward expects (B,3,H,W), got " + img->value.shape_str());
        const int64_t H = img->value.shape[2], W = img->value.shape[3];
        const int64_t m = cfg_.geometry_multiple();
        if (H < cfg_.min_dimension() || W < cfg_.min_dimension())
            throw StructuralError("input " + std::to_string(H) + "x" + std::to_string(W) +
                                  " too small for pyramid_depth=" + std::to_string(cfg_.pyramid_depth) +
                                  ", patch_size=" + std::to_string(cfg_.daft.patch_size) +
                                  "; minimum is " + std::to_string(cfg_.min_dimension()) + "x" +
                                  std::to_string(cfg_.min_dimension()));

        const int64_t Hp = (H + m - 1) / m * m;
        const int64_t Wp = (W + m - 1) / m * m;
        Var<S> x = img;
        if (Hp != H || Wp != W) {
            const int64_t pt = (Hp - H) / 2, pb = Hp - H - pt;
            const int64_t pl = (Wp - W) / 2, pr = Wp - W - pl;
            x = ops::reflect_pad2d(img, pl, pr, pt, pb);
        }

        PyramidDecomposition<S> pyr = pyramid::decompose(x, cfg_.pyramid_depth);
        Var<S> running = daft_(pyr.low);
        for (int k = cfg_.pyramid_depth - 1; k >= 0; --k) {
            Var<S> context = pyramid::upsample(running);
            Var<S> refined = refiners_[k](pyr.highs[k], context);
            running = ops::add(refined, context);
        }

        if (Hp != H || Wp != W) running = ops::crop2d(running, (Hp - H) / 2, (Wp - W) / 2, H, W);
        return running;
    }

    Image forward(const Image& img) const {
        require(img.valid_size(), "image must be at least 8x8");
        NoGradGuard ng;
        Var<S> in = make_leaf(image_to_tensor<S>(img));
        Var<S> out = forward_train(in);
        Image result = tensor_to_image(out->value);
        result.clamp01();
        return result;
    }

private:
    ModelConfig cfg_;
    ParamStore<S> params_;
    Daft<S> daft_;
    std::vector<HighFreqRefiner<S>> refiners_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a directory with weights.bin (named float32 records),
// config.json and meta.json. Optimizer moments ride along as extra records
// so a resumed run continues bit-for-bit.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    int64_t step = 0;
    std::string library_version = kLibraryVersion;
    uint64_t cfg_hash = 0;
};

namespace detail {

constexpr uint32_t kWeightsMagic = 0x44564e31; // "DVN1"
constexpr uint32_t kWeightsVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

} // namespace detail

struct NamedTensorF {
    std::string name;
    Tensor<float> tensor;
};

inline void write_weights_file(const std::string& path, const std::vector<NamedTensorF>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    detail::write_u32(os, detail::kWeightsMagic);
    detail::write_u32(os, detail::kWeightsVersion);
    detail::write_u64(os, records.size());
    for (const auto& r : records) {
        detail::write_u64(os, r.name.size());
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::write_u32(os, static_cast<uint32_t>(r.tensor.shape.size()));
        for (int64_t d : r.tensor.shape) detail::write_u64(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(r.tensor.data.data()),
                 static_cast<std::streamsize>(r.tensor.data.size() * sizeof(float)));
    }
    if (!os) throw DataError("short write on " + path);
}

inline std::vector<NamedTensorF> read_weights_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path);
    if (detail::read_u32(is) != detail::kWeightsMagic) throw DataError("not a weights file: " + path);
    const uint32_t version = detail::read_u32(is);
    if (version != detail::kWeightsVersion)
        throw DataError("unsupported weights version " + std::to_string(version) + " in " + path);
    const uint64_t count = detail::read_u64(is);
    std::vector<NamedTensorF> records;
    records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        NamedTensorF r;
        const uint64_t nlen = detail::read_u64(is);
        r.name.resize(nlen);
        is.read(r.name.data(), static_cast<std::streamsize>(nlen));
        const uint32_t ndim = detail::read_u32(is);
        r.tensor.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) r.tensor.shape[d] = static_cast<int64_t>(detail::read_u64(is));
        r.tensor.data.resize(Tensor<float>::count(r.tensor.shape));
        is.read(reinterpret_cast<char*>(r.tensor.data.data()),
                static_cast<std::streamsize>(r.tensor.data.size() * sizeof(float)));
        if (!is) throw DataError("truncated weights file: " + path);
        records.push_back(std::move(r));
    }
    return records;
}

inline void save_checkpoint(const std::string& dir, const DeVigNet<float>& model, int64_t step,
                            const std::vector<NamedTensorF>& extra = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<NamedTensorF> records;
    for (const auto& p : model.params().items()) records.push_back({p->name, p->value});
    for (const auto& e : extra) records.push_back(e);
    write_weights_file(dir + "/weights.bin", records);

    {
        std::ofstream os(dir + "/config.json");
        os << nlohmann::json(model.config()).dump(2) << "\n";
    }
    {
        nlohmann::json meta = {{"step", step},
                               {"library_version", kLibraryVersion},
                               {"config_hash", config_hash(model.config())}};
        std::ofstream os(dir + "/meta.json");
        os << meta.dump(2) << "\n";
    }
}

struct LoadedCheckpoint {
    std::unique_ptr<DeVigNet<float>> model;
    CheckpointMeta meta;
    std::vector<NamedTensorF> extra; // records not matching a model parameter
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir + "/weights.bin") || !fs::exists(dir + "/config.json") ||
        !fs::exists(dir + "/meta.json"))
        throw DataError("checkpoint directory " + dir + " is missing weights.bin/config.json/meta.json");

    nlohmann::json cfg_json, meta_json;
    {
        std::ifstream is(dir + "/config.json");
        try {
            is >> cfg_json;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corrupt config.json in " + dir + ": " + e.what());
        }
    }
    {
        std::ifstream is(dir + "/meta.json");
        try {
            is >> meta_json;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("corrupt meta.json in " + dir + ": " + e.what());
        }
    }
    ModelConfig cfg = cfg_json.get<ModelConfig>();

    LoadedCheckpoint out;
    out.meta.step = meta_json.value("step", int64_t(0));
    out.meta.library_version = meta_json.value("library_version", std::string("unknown"));
    out.meta.cfg_hash = meta_json.value("config_hash", uint64_t(0));
    if (out.meta.cfg_hash != config_hash(cfg))
        throw DataError("checkpoint config hash mismatch in " + dir +
                        " (config.json does not match meta.json fingerprint)");

    out.model = std::make_unique<DeVigNet<float>>(cfg);
    auto records = read_weights_file(dir + "/weights.bin");
    for (auto& r : records) {
        Var<float> p = out.model->params().find(r.name);
        if (!p) {
            out.extra.push_back(std::move(r));
            continue;
        }
        if (p->value.shape != r.tensor.shape)
            throw DataError("checkpoint parameter " + r.name + " has shape " + r.tensor.shape_str() +
                            ", model expects " + p->value.shape_str());
        p->value = std::move(r.tensor);
    }
    for (const auto& p : out.model->params().items())
        if (std::none_of(records.begin(), records.end(),
                         [&](const NamedTensorF& r) { return r.name == p->name; }))
            throw DataError("checkpoint is missing parameter " + p->name);
    return out;
}

} // namespace devignet
