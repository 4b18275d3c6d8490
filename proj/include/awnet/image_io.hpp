// File I/O: 8/16-bit RGB PNG and the .praw Bayer container.
//
// .praw layout (little-endian, 16-byte header):
//   bytes 0-3   magic "PRAW"
//   bytes 4-5   u16 version (1)
//   bytes 6-7   u16 bit depth (8 or 16)
//   bytes 8-11  u32 height
//   bytes 12-15 u32 width
// followed by row-major samples, u8 for depth 8 and little-endian u16 for 16.
#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "awnet/serialize.hpp"
#include "awnet/tensor.hpp"

namespace awnet {

struct BayerImage {
    std::size_t height = 0, width = 0;
    unsigned bit_depth = 8;  // 8 or 16
    std::vector<std::uint16_t> mosaic;  // row-major, one sample per site

    std::uint16_t max_value() const {
        return static_cast<std::uint16_t>((1u << bit_depth) - 1);
    }

    void validate() const {
        if (bit_depth != 8 && bit_depth != 16)
            shape_error("BayerImage: bit depth must be 8 or 16, got " +
                        std::to_string(bit_depth));
        if (height % 2 != 0 || width % 2 != 0)
            shape_error("BayerImage: extents must be even, got " + std::to_string(height) +
                        "x" + std::to_string(width));
        if (mosaic.size() != height * width)
            shape_error("BayerImage: sample count does not match extents");
        for (std::uint16_t v : mosaic)
            if (v > max_value())
                shape_error("BayerImage: sample " + std::to_string(v) + " exceeds " +
                            std::to_string(bit_depth) + "-bit range");
    }
};

namespace io {

inline void write_praw(const std::string& path, const BayerImage& img) {
    img.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw SerializationError("write_praw: cannot open " + path);
    os.write("PRAW", 4);
    write_u16(os, 1);
    write_u16(os, static_cast<std::uint16_t>(img.bit_depth));
    write_u32(os, static_cast<std::uint32_t>(img.height));
    write_u32(os, static_cast<std::uint32_t>(img.width));
    if (img.bit_depth == 8) {
        for (std::uint16_t v : img.mosaic) os.put(static_cast<char>(v & 0xff));
    } else {
        for (std::uint16_t v : img.mosaic) write_u16(os, v);
    }
    if (!os) throw SerializationError("write_praw: short write to " + path);
}

inline BayerImage read_praw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw SerializationError("read_praw: cannot open " + path);
    expect_magic(is, "PRAW", "read_praw");
    const std::uint16_t version = read_u16(is);
    if (version != 1)
        throw SerializationError("read_praw: unsupported version " + std::to_string(version));
    BayerImage img;
    img.bit_depth = read_u16(is);
    if (img.bit_depth != 8 && img.bit_depth != 16)
        throw SerializationError("read_praw: bad bit depth " + std::to_string(img.bit_depth));
    img.height = read_u32(is);
    img.width = read_u32(is);
    img.mosaic.resize(img.height * img.width);
    if (img.bit_depth == 8) {
        for (auto& v : img.mosaic) {
            const int c = is.get();
            if (c == EOF) throw SerializationError("read_praw: truncated " + path);
            v = static_cast<std::uint16_t>(c);
        }
    } else {
        for (auto& v : img.mosaic) v = read_u16(is);
    }
    img.validate();
    return img;
}

namespace detail_png {

struct PngReadCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail_png

// Reads an RGB (or gray, expanded to RGB) PNG into a {3, H, W} tensor in
// [0, 1]; bit_depth_out reports the source depth.
inline Tensor<float> read_png_rgb(const std::string& path, unsigned* bit_depth_out = nullptr) {
    detail_png::PngReadCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw SerializationError("read_png: cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, ctx.fp) != 8 || png_sig_cmp(header, 0, 8))
        throw SerializationError("read_png: not a PNG file: " + path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw SerializationError("read_png: libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw SerializationError("read_png: libpng error reading " + path);
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const unsigned bit_depth = png_get_bit_depth(ctx.png, ctx.info);
    const png_byte color = png_get_color_type(ctx.png, ctx.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(ctx.png);
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    png_set_strip_alpha(ctx.png);
    if (bit_depth == 16) png_set_swap(ctx.png);  // stream is big-endian
    png_read_update_info(ctx.png, ctx.info);

    const std::size_t h = png_get_image_height(ctx.png, ctx.info);
    const std::size_t w = png_get_image_width(ctx.png, ctx.info);
    const std::size_t stride = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<png_byte> rows(h * stride);
    std::vector<png_bytep> row_ptrs(h);
    for (std::size_t i = 0; i < h; ++i) row_ptrs[i] = rows.data() + i * stride;
    png_read_image(ctx.png, row_ptrs.data());
    png_read_end(ctx.png, nullptr);

    const unsigned depth = (bit_depth == 16) ? 16 : 8;
    if (bit_depth_out) *bit_depth_out = depth;
    const float scale = 1.0f / static_cast<float>((1u << depth) - 1);
    std::vector<float> out(3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                std::uint16_t v;
                if (depth == 16) {
                    const auto* p =
                        reinterpret_cast<const std::uint16_t*>(rows.data() + y * stride);
                    v = p[x * 3 + c];
                } else {
                    v = rows[y * stride + x * 3 + c];
                }
                out[(c * h + y) * w + x] = static_cast<float>(v) * scale;
            }
    return Tensor<float>::from_vector({3, h, w}, std::move(out));
}

// Writes a {3, H, W} tensor in [0, 1] as an RGB PNG with round-half-up
// quantization.
inline void write_png_rgb(const std::string& path, const Tensor<float>& rgb,
                          unsigned bit_depth = 8) {
    if (rgb.dim() != 3 || rgb.extent(0) != 3)
        shape_error("write_png: expected {3, H, W} tensor, got " + shape_str(rgb.shape()));
    if (bit_depth != 8 && bit_depth != 16)
        shape_error("write_png: bit depth must be 8 or 16");
    const std::size_t h = rgb.extent(1), w = rgb.extent(2);
    const float maxval = static_cast<float>((1u << bit_depth) - 1);

    detail_png::PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw SerializationError("write_png: cannot open " + path);
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw SerializationError("write_png: libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png)))
        throw SerializationError("write_png: libpng error writing " + path);
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 static_cast<int>(bit_depth), PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    if (bit_depth == 16) png_set_swap(ctx.png);

    auto quantize = [&](float v) -> std::uint16_t {
        v = std::min(1.0f, std::max(0.0f, v));
        return static_cast<std::uint16_t>(std::floor(v * maxval + 0.5f));
    };
    auto data = rgb.data();
    if (bit_depth == 8) {
        std::vector<png_byte> row(w * 3);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    row[x * 3 + c] =
                        static_cast<png_byte>(quantize(data[(c * h + y) * w + x]));
            png_write_row(ctx.png, row.data());
        }
    } else {
        std::vector<std::uint16_t> row(w * 3);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    row[x * 3 + c] = quantize(data[(c * h + y) * w + x]);
            png_write_row(ctx.png, reinterpret_cast<png_bytep>(row.data()));
        }
    }
    png_write_end(ctx.png, nullptr);
}

}  // namespace io
}  // namespace awnet
