#pragma once

#include "ops.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>

namespace devignet {

// H x W x 3 interleaved floats in [0,1], sRGB. The unit of all file I/O.
struct Image {
    int64_t h = 0, w = 0;
    std::vector<float> data; // h*w*3, row-major HWC

    Image() = default;
    Image(int64_t height, int64_t width) : h(height), w(width), data(height * width * 3, 0.0f) {}

    float& at(int64_t y, int64_t x, int64_t c) { return data[(y * w + x) * 3 + c]; }
    float at(int64_t y, int64_t x, int64_t c) const { return data[(y * w + x) * 3 + c]; }

    bool valid_size() const { return h >= 8 && w >= 8; }

    void clamp01() {
        for (auto& v : data) v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
};

template <typename S>
Tensor<S> image_to_tensor(const Image& img) {
    Tensor<S> t({1, 3, img.h, img.w});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) t.at4(0, c, y, x) = static_cast<S>(img.at(y, x, c));
    return t;
}

template <typename S>
Image tensor_to_image(const Tensor<S>& t) {
    require(t.rank() == 4 && t.shape[0] == 1 && t.shape[1] == 3,
            "tensor_to_image expects (1,3,H,W), got " + t.shape_str());
    Image img(t.shape[2], t.shape[3]);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) img.at(y, x, c) = static_cast<float>(t.at4(0, c, y, x));
    return img;
}

inline Image resize_bilinear(const Image& img, int64_t h2, int64_t w2) {
    const auto ty = ops::detail::bilinear_taps(img.h, h2);
    const auto tx = ops::detail::bilinear_taps(img.w, w2);
    Image out(h2, w2);
    for (int64_t y = 0; y < h2; ++y) {
        const auto& a = ty[y];
        for (int64_t x = 0; x < w2; ++x) {
            const auto& b = tx[x];
            for (int64_t c = 0; c < 3; ++c) {
                out.at(y, x, c) = static_cast<float>(
                    a.w0 * (b.w0 * img.at(a.i0, b.i0, c) + b.w1 * img.at(a.i0, b.i1, c)) +
                    a.w1 * (b.w0 * img.at(a.i1, b.i0, c) + b.w1 * img.at(a.i1, b.i1, c)));
            }
        }
    }
    return out;
}

inline uint8_t to_byte(float v) {
    const float s = v * 255.0f + 0.5f;
    return static_cast<uint8_t>(s < 0.0f ? 0.0f : (s > 255.0f ? 255.0f : s));
}

// --------------------------------------------------------------------------
// PNG I/O (8-bit RGB on disk; reads are normalized to that via libpng
// transforms, so gray / palette / alpha / 16-bit inputs all load).
// --------------------------------------------------------------------------

namespace detail {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace detail

inline Image read_png(const std::string& path) {
    std::unique_ptr<FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image file: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG file: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<uint8_t> rowbuf(static_cast<size_t>(w) * 3);
    Image img(h, w);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>(rowbuf[x * 3 + c]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::unique_ptr<FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write image file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> rowbuf(static_cast<size_t>(img.w) * 3);
    for (int64_t y = 0; y < img.h; ++y) {
        for (int64_t x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) rowbuf[x * 3 + c] = to_byte(img.at(y, x, c));
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace devignet
