#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tcformer/errors.hpp"
#include "tcformer/io.hpp"

namespace tcformer::io {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

}  // namespace

void write_png(const std::string& path, const Image8& image) {
    check_input(image.w > 0 && image.h > 0, "empty image");
    check_input(image.rgb.size() == static_cast<size_t>(image.w) * image.h * 3,
                "image buffer does not match its dimensions");

    // filter byte 0 in front of every scanline
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(image.h) * (static_cast<size_t>(image.w) * 3 + 1));
    for (int y = 0; y < image.h; ++y) {
        raw.push_back(0);
        const uint8_t* row = image.rgb.data() + static_cast<size_t>(y) * image.w * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(image.w) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    check_internal(compress2(compressed.data(), &bound, raw.data(),
                             static_cast<uLong>(raw.size()), 9) == Z_OK,
                   "deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(image.w));
    put_u32(ihdr, static_cast<uint32_t>(image.h));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    check_input(f.good(), "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

Image8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw MissingArtifactError("cannot open: " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    check_input(data.size() > 8 && std::memcmp(data.data(), sig, 8) == 0,
                path + ": not a PNG file");

    Image8 image;
    int channels = 0;
    std::vector<uint8_t> idat;
    size_t at = 8;
    while (at + 8 <= data.size()) {
        const uint32_t len = get_u32(data.data() + at);
        check_input(at + 12 + len <= data.size(), path + ": truncated chunk");
        const char* type = reinterpret_cast<const char*>(data.data() + at + 4);
        const uint8_t* payload = data.data() + at + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            image.w = static_cast<int>(get_u32(payload));
            image.h = static_cast<int>(get_u32(payload + 4));
            check_input(payload[8] == 8, path + ": only 8-bit PNG supported");
            check_input(payload[9] == 2 || payload[9] == 6,
                        path + ": only RGB/RGBA PNG supported");
            check_input(payload[12] == 0, path + ": interlaced PNG not supported");
            channels = payload[9] == 2 ? 3 : 4;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        at += 12 + len;
    }
    check_input(image.w > 0 && image.h > 0 && !idat.empty(), path + ": missing image data");

    const size_t stride = static_cast<size_t>(image.w) * channels;
    std::vector<uint8_t> raw(static_cast<size_t>(image.h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    check_input(uncompress(raw.data(), &raw_len, idat.data(),
                           static_cast<uLong>(idat.size())) == Z_OK &&
                    raw_len == raw.size(),
                path + ": corrupt image data");

    // undo per-scanline filters
    std::vector<uint8_t> pixels(static_cast<size_t>(image.h) * stride);
    const int bpp = channels;
    for (int y = 0; y < image.h; ++y) {
        const uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* dst = pixels.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw InvalidInputError(path + ": unknown PNG filter");
            }
            dst[x] = static_cast<uint8_t>(v & 0xff);
        }
    }

    image.rgb.resize(static_cast<size_t>(image.w) * image.h * 3);
    for (size_t p = 0; p < static_cast<size_t>(image.w) * image.h; ++p) {
        for (int c = 0; c < 3; ++c) {
            image.rgb[p * 3 + static_cast<size_t>(c)] = pixels[p * channels + static_cast<size_t>(c)];
        }
    }
    return image;
}

void plot_series_png(const std::string& path, const std::vector<double>& values, int w, int h) {
    Image8 img;
    img.w = w;
    img.h = h;
    img.rgb.assign(static_cast<size_t>(w) * h * 3, 245);
    if (values.empty()) {
        write_png(path, img);
        return;
    }
    auto set = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        const size_t at = (static_cast<size_t>(y) * w + x) * 3;
        img.rgb[at] = r;
        img.rgb[at + 1] = g;
        img.rgb[at + 2] = b;
    };
    const int margin = 24;
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    // log scale when everything is positive
    const bool log_scale = lo > 0.0;
    if (log_scale) {
        lo = std::log10(lo);
        hi = std::log10(hi);
    }
    if (hi - lo < 1e-12) hi = lo + 1e-12;
    for (int x = margin; x < w - margin; ++x) set(x, h - margin, 120, 120, 120);
    for (int y = margin; y < h - margin; ++y) set(margin, y, 120, 120, 120);
    int prev_y = -1;
    for (size_t i = 0; i < values.size(); ++i) {
        double v = values[i];
        if (log_scale) v = std::log10(v);
        const int x = margin + static_cast<int>((w - 2.0 * margin - 1) * i /
                                                std::max<size_t>(values.size() - 1, 1));
        const int y = h - margin -
                      static_cast<int>((h - 2.0 * margin - 1) * (v - lo) / (hi - lo)) - 1;
        if (prev_y >= 0) {
            const int y0 = std::min(prev_y, y), y1 = std::max(prev_y, y);
            for (int yy = y0; yy <= y1; ++yy) set(x, yy, 30, 80, 200);
        } else {
            set(x, y, 30, 80, 200);
        }
        prev_y = y;
    }
    write_png(path, img);
}

}  // namespace tcformer::io
