#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "advlab/core/error.hpp"
#include "advlab/core/io.hpp"
#include "advlab/core/tensor.hpp"

namespace advlab {

// Minimal PNG codec: 8-bit gray / RGB / RGBA, zlib via system libz.
// Writer always emits filter 0 at a fixed compression level so encoded bytes
// are deterministic for a given zlib build.

namespace pngdetail {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
}

inline uint32_t get_u32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.append(type, 4);
    out.append(payload);
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

inline std::string encode_png(int width, int height, int channels, const std::vector<uint8_t>& pixels) {
    if (channels != 1 && channels != 3 && channels != 4) throw IoError("png: unsupported channel count");
    if (pixels.size() != static_cast<size_t>(width) * height * channels)
        throw IoError("png: pixel buffer size mismatch");

    std::string raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * channels));
    const size_t stride = static_cast<size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
        raw.push_back('\0');  // filter type 0
        raw.append(reinterpret_cast<const char*>(pixels.data() + y * stride), stride);
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::string comp(comp_cap, '\0');
    if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    comp.resize(comp_cap);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    pngdetail::put_u32(ihdr, static_cast<uint32_t>(width));
    pngdetail::put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(channels == 1 ? 0 : (channels == 3 ? 2 : 6));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::put_chunk(out, "IHDR", ihdr);
    pngdetail::put_chunk(out, "IDAT", comp);
    pngdetail::put_chunk(out, "IEND", "");
    return out;
}

struct PngImage {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> pixels;
};

inline PngImage decode_png(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw IoError("png: bad signature");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t pos = 8;
    PngImage img;
    std::string idat;
    int bit_depth = 0, color_type = 0;
    while (pos + 12 <= bytes.size()) {
        uint32_t len = pngdetail::get_u32(p + pos);
        std::string type(bytes.substr(pos + 4, 4));
        if (pos + 12 + len > bytes.size()) throw IoError("png: truncated chunk");
        const char* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            img.width = static_cast<int>(pngdetail::get_u32(p + pos + 8));
            img.height = static_cast<int>(pngdetail::get_u32(p + pos + 12));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw IoError("png: interlace unsupported");
        } else if (type == "IDAT") {
            idat.append(payload, len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8) throw IoError("png: only 8-bit supported");
    switch (color_type) {
        case 0: img.channels = 1; break;
        case 2: img.channels = 3; break;
        case 6: img.channels = 4; break;
        default: throw IoError("png: unsupported color type");
    }
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    const size_t raw_size = static_cast<size_t>(img.height) * (stride + 1);
    std::vector<uint8_t> raw(raw_size);
    uLongf out_len = static_cast<uLongf>(raw_size);
    if (uncompress(raw.data(), &out_len, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        out_len != raw_size)
        throw IoError("png: inflate failed");

    img.pixels.assign(static_cast<size_t>(img.height) * stride, 0);
    const int bpp = img.channels;
    std::vector<uint8_t> prev(stride, 0);
    for (int y = 0; y < img.height; ++y) {
        const uint8_t filter = raw[y * (stride + 1)];
        const uint8_t* src = raw.data() + y * (stride + 1) + 1;
        uint8_t* dst = img.pixels.data() + y * stride;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
            const int b = prev[x];
            const int c = x >= static_cast<size_t>(bpp) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += pngdetail::paeth(a, b, c); break;
                default: throw IoError("png: bad filter type");
            }
            dst[x] = static_cast<uint8_t>(v);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

// [C,H,W] float in [0,1] -> 8-bit PNG bytes (C must be 1 or 3)
inline std::string image_to_png(const Tensor& img) {
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) throw IoError("image_to_png needs [1|3,H,W]");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::vector<uint8_t> px(static_cast<size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < c; ++ci) {
                float v = img.at3(ci, y, x);
                v = std::min(std::max(v, 0.0f), 1.0f);
                px[(static_cast<size_t>(y) * w + x) * c + ci] =
                    static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return encode_png(w, h, c, px);
}

inline Tensor png_to_image(std::string_view bytes) {
    PngImage p = decode_png(bytes);
    const int c = p.channels == 4 ? 3 : p.channels;
    Tensor img({c, p.height, p.width});
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x)
            for (int ci = 0; ci < c; ++ci)
                img.at3(ci, y, x) =
                    static_cast<float>(p.pixels[(static_cast<size_t>(y) * p.width + x) * p.channels + ci]) /
                    255.0f;
    return img;
}

}  // namespace advlab
