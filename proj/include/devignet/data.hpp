#pragma once

#include "image.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>

namespace devignet {

// Parametric radial gain standing in for physically captured vignetting.
// Two falloff families; the optical center is deliberately allowed off the
// image center.
struct VignetteProfile {
    enum class Model { Cos4, Polynomial };

    double cx = 0.5, cy = 0.5; // normalized optical center
    Model model = Model::Cos4;
    double f = 1.0;                     // cos4 field-of-view scale
    double a = 0.0, b = 0.0, c = 0.0;   // polynomial gain coefficients

    // Gain at normalized radius r (farthest corner of the image has r = 1).
    double gain(double r) const {
        if (model == Model::Cos4) {
            // cos^4(arctan(r f)) == 1 / (1 + (r f)^2)^2
            const double t = r * f;
            const double d = 1.0 + t * t;
            return 1.0 / (d * d);
        }
        const double r2 = r * r;
        return 1.0 / (1.0 + a * r2 + b * r2 * r2 + c * r2 * r2 * r2);
    }

    const char* model_name() const { return model == Model::Cos4 ? "cos4" : "polynomial"; }
};

namespace data {

inline VignetteProfile sample_profile(uint64_t rng_seed) {
    Rng rng(rng_seed);
    VignetteProfile p;
    p.model = (rng.below(2) == 0) ? VignetteProfile::Model::Cos4 : VignetteProfile::Model::Polynomial;
    p.cx = rng.uniform(0.35, 0.65);
    p.cy = rng.uniform(0.35, 0.65);
    p.f = rng.uniform(0.6, 1.4);
    p.a = rng.uniform(0.5, 2.0);
    p.b = rng.uniform(0.0, 1.0);
    p.c = rng.uniform(0.0, 0.5);
    return p;
}

inline Image apply_vignette(const Image& img, const VignetteProfile& p) {
    Image out(img.h, img.w);
    const double cx = p.cx * static_cast<double>(img.w - 1);
    const double cy = p.cy * static_cast<double>(img.h - 1);
    // normalize so the farthest corner sits at r = 1
    double rmax = 0.0;
    for (const double yy : {0.0, static_cast<double>(img.h - 1)})
        for (const double xx : {0.0, static_cast<double>(img.w - 1)}) {
            const double d = std::hypot(xx - cx, yy - cy);
            rmax = std::max(rmax, d);
        }
    if (rmax <= 0.0) rmax = 1.0;
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const double r = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) / rmax;
            const float g = static_cast<float>(p.gain(r));
            for (int c = 0; c < 3; ++c) {
                float v = img.at(y, x, c) * g;
                out.at(y, x, c) = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
        }
    return out;
}

// Procedural clean sources: gradients, checker blends and smooth random
// fields, all reasonably bright so the falloff is visible.
inline Image make_clean_texture(Rng& rng, int64_t size) {
    Image img(size, size);
    const int kind = static_cast<int>(rng.below(3));
    if (kind == 0) {
        // directional color gradient
        const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double dx = std::cos(ang), dy = std::sin(ang);
        float c0[3], c1[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = static_cast<float>(rng.uniform(0.2, 0.9));
            c1[c] = static_cast<float>(rng.uniform(0.2, 0.9));
        }
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                const double t =
                    0.5 + 0.5 * ((x * dx + y * dy) / (static_cast<double>(size) * std::sqrt(2.0)));
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<float>((1.0 - t) * c0[c] + t * c1[c]);
            }
    } else if (kind == 1) {
        // checkerboard blended over a gradient
        const int64_t cell = 4 + rng.below(size / 8);
        const double mixw = rng.uniform(0.3, 0.7);
        float hi = static_cast<float>(rng.uniform(0.7, 1.0));
        float lo = static_cast<float>(rng.uniform(0.1, 0.4));
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                const bool on = ((x / cell) + (y / cell)) % 2 == 0;
                const float chk = on ? hi : lo;
                const float grad = 0.3f + 0.6f * static_cast<float>(x + y) / (2.0f * size);
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<float>(mixw * chk + (1.0 - mixw) * grad);
            }
    } else {
        // smooth random field: coarse grid, bilinearly upsampled
        const int64_t g = 4 + rng.below(5);
        Image coarse(g, g);
        for (auto& v : coarse.data) v = static_cast<float>(rng.uniform(0.15, 0.95));
        img = resize_bilinear(coarse, size, size);
    }
    return img;
}

struct PairedSample {
    Image input;  // vignetted
    Image target; // clean
    std::string id;
};

// Writes target/xxxx.png + input/xxxx.png pairs plus a JSON manifest with the
// per-id profile parameters. Fully seeded: the same call produces identical
// bytes.
inline void make_synthetic_dataset(int n, int size, uint64_t seed, const std::string& out_dir,
                                   const std::optional<std::string>& clean_dir = std::nullopt) {
    namespace fs = std::filesystem;
    require(n > 0 && size >= 8, "synthetic dataset needs n > 0 and size >= 8");

    std::vector<std::string> clean_files;
    if (clean_dir) {
        for (const auto& e : fs::directory_iterator(*clean_dir))
            if (e.path().extension() == ".png") clean_files.push_back(e.path().string());
        std::sort(clean_files.begin(), clean_files.end());
        if (clean_files.empty()) throw DataError("no .png files in clean folder " + *clean_dir);
    }

    std::error_code ec;
    fs::create_directories(out_dir + "/input", ec);
    fs::create_directories(out_dir + "/target", ec);
    if (!fs::exists(out_dir + "/input") || !fs::exists(out_dir + "/target"))
        throw DataError("cannot create dataset directory " + out_dir);

    nlohmann::json manifest = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "%04d", i);
        const std::string id = idbuf;

        Image clean;
        if (clean_dir) {
            clean = read_png(clean_files[i % clean_files.size()]);
            if (clean.h != size || clean.w != size) clean = resize_bilinear(clean, size, size);
        } else {
            Rng trng = Rng::derive(seed, 2 * static_cast<uint64_t>(i));
            clean = make_clean_texture(trng, size);
        }
        const VignetteProfile prof = sample_profile(Rng::derive(seed, 2 * i + 1).next_u64());
        const Image vig = apply_vignette(clean, prof);

        write_png(out_dir + "/target/" + id + ".png", clean);
        write_png(out_dir + "/input/" + id + ".png", vig);

        nlohmann::json entry = {{"id", id},
                                {"model", prof.model_name()},
                                {"center", {prof.cx, prof.cy}}};
        if (prof.model == VignetteProfile::Model::Cos4) entry["params"] = {{"f", prof.f}};
        else entry["params"] = {{"a", prof.a}, {"b", prof.b}, {"c", prof.c}};
        manifest.push_back(entry);
    }
    std::ofstream os(out_dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw DataError("cannot write manifest in " + out_dir);
}

enum class Split { Train, Test };

// Loads a paired directory (input/ + target/, matching filenames). Training
// applies aligned random crops; evaluation applies an aligned resize when
// requested. Order is filename-sorted; crops are derived from (seed, index).
inline std::vector<PairedSample> load_paired_dir(const std::string& path, Split split,
                                                 std::optional<int> crop = std::nullopt,
                                                 std::optional<int> resize = std::nullopt,
                                                 uint64_t seed = 0) {
    namespace fs = std::filesystem;
    const fs::path in_dir = fs::path(path) / "input";
    const fs::path tg_dir = fs::path(path) / "target";
    if (!fs::is_directory(in_dir) || !fs::is_directory(tg_dir))
        throw DataError("dataset at " + path + " must contain input/ and target/ directories");

    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(in_dir))
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("dataset at " + path + " is empty");

    std::vector<PairedSample> samples;
    samples.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const std::string& id = ids[i];
        const fs::path tg_file = tg_dir / (id + ".png");
        if (!fs::exists(tg_file))
            throw DataError("missing target counterpart for id \"" + id + "\" in " + path);
        PairedSample s;
        s.id = id;
        s.input = read_png((in_dir / (id + ".png")).string());
        s.target = read_png(tg_file.string());
        if (s.input.h != s.target.h || s.input.w != s.target.w)
            throw DataError("size mismatch within pair \"" + id + "\": input " +
                            std::to_string(s.input.h) + "x" + std::to_string(s.input.w) + ", target " +
                            std::to_string(s.target.h) + "x" + std::to_string(s.target.w));

        if (split == Split::Train && crop) {
            const int64_t ch = std::min<int64_t>(*crop, s.input.h);
            const int64_t cw = std::min<int64_t>(*crop, s.input.w);
            Rng crng = Rng::derive(seed, i);
            const int64_t oy = (s.input.h > ch) ? crng.below(s.input.h - ch + 1) : 0;
            const int64_t ox = (s.input.w > cw) ? crng.below(s.input.w - cw + 1) : 0;
            auto crop_img = [&](const Image& src) {
                Image dst(ch, cw);
                for (int64_t y = 0; y < ch; ++y)
                    for (int64_t x = 0; x < cw; ++x)
                        for (int c = 0; c < 3; ++c) dst.at(y, x, c) = src.at(oy + y, ox + x, c);
                return dst;
            };
            s.input = crop_img(s.input);
            s.target = crop_img(s.target);
        } else if (split == Split::Test && resize) {
            s.input = resize_bilinear(s.input, *resize, *resize);
            s.target = resize_bilinear(s.target, *resize, *resize);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace data

} // namespace devignet
