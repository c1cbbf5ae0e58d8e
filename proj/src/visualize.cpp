#include "tcformer/visualize.hpp"

#include <algorithm>
#include <cmath>

#include "tcformer/errors.hpp"

namespace tcformer {

void palette_color(int token, uint8_t rgb[3]) {
    // golden-angle hue walk, fixed saturation/value
    const double hue = std::fmod(token * 137.50776405003785, 360.0);
    const double s = 0.72, v = 0.95;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(hue / 60.0, 2.0) - 1.0));
    const double m = v - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hue / 60.0)) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    rgb[0] = static_cast<uint8_t>(std::lround((r + m) * 255.0));
    rgb[1] = static_cast<uint8_t>(std::lround((g + m) * 255.0));
    rgb[2] = static_cast<uint8_t>(std::lround((b + m) * 255.0));
}

io::Image8 tensor_to_image(const Tensor& data, int h, int w) {
    check_input(data.rows() == static_cast<Index>(h) * w && data.cols() == 3,
                "expected an (h*w) x 3 tensor");
    io::Image8 img;
    img.h = h;
    img.w = w;
    img.rgb.resize(static_cast<size_t>(h) * w * 3);
    for (Index p = 0; p < data.rows(); ++p) {
        for (int c = 0; c < 3; ++c) {
            img.rgb[static_cast<size_t>(p) * 3 + static_cast<size_t>(c)] = static_cast<uint8_t>(
                std::lround(std::clamp(data.at(p, c), 0.0, 1.0) * 255.0));
        }
    }
    return img;
}

Tensor image_to_tensor(const io::Image8& image) {
    Tensor out({static_cast<Index>(image.h) * image.w, 3});
    for (Index p = 0; p < out.rows(); ++p) {
        for (int c = 0; c < 3; ++c) {
            out.at(p, c) =
                image.rgb[static_cast<size_t>(p) * 3 + static_cast<size_t>(c)] / 255.0;
        }
    }
    return out;
}

io::Image8 region_overlay(const TokenLayout& layout, const Tensor& image, int img_h, int img_w) {
    check_input(img_h % layout.base_h == 0 && img_w % layout.base_w == 0,
                "image resolution must be a multiple of the base grid");
    check_input(image.rows() == static_cast<Index>(img_h) * img_w && image.cols() == 3,
                "image must be (h*w) x 3");
    const int sy = img_h / layout.base_h, sx = img_w / layout.base_w;

    // mean image color per token region
    std::vector<double> mean(static_cast<size_t>(layout.count) * 3, 0.0);
    std::vector<long> area(static_cast<size_t>(layout.count), 0);
    for (int y = 0; y < img_h; ++y) {
        for (int x = 0; x < img_w; ++x) {
            const int cell = (y / sy) * layout.base_w + (x / sx);
            const int token = layout.region_map[static_cast<size_t>(cell)];
            for (int c = 0; c < 3; ++c) {
                mean[static_cast<size_t>(token) * 3 + static_cast<size_t>(c)] +=
                    image.at(static_cast<Index>(y) * img_w + x, c);
            }
            area[static_cast<size_t>(token)]++;
        }
    }
    io::Image8 out;
    out.h = img_h;
    out.w = img_w;
    out.rgb.resize(static_cast<size_t>(img_h) * img_w * 3);
    for (int y = 0; y < img_h; ++y) {
        for (int x = 0; x < img_w; ++x) {
            const int cell = (y / sy) * layout.base_w + (x / sx);
            const int token = layout.region_map[static_cast<size_t>(cell)];
            uint8_t pal[3];
            palette_color(token, pal);
            for (int c = 0; c < 3; ++c) {
                const double m = mean[static_cast<size_t>(token) * 3 + static_cast<size_t>(c)] /
                                 std::max<long>(area[static_cast<size_t>(token)], 1);
                const double v = 0.5 * m * 255.0 + 0.5 * pal[c];
                out.rgb[(static_cast<size_t>(y) * img_w + x) * 3 + static_cast<size_t>(c)] =
                    static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    }
    return out;
}

io::Image8 overlay_strip(const std::vector<io::Image8>& overlays, int gap) {
    check_input(!overlays.empty(), "no overlays to combine");
    int w = static_cast<int>(overlays.size() - 1) * gap;
    int h = 0;
    for (const auto& o : overlays) {
        w += o.w;
        h = std::max(h, o.h);
    }
    io::Image8 strip;
    strip.w = w;
    strip.h = h;
    strip.rgb.assign(static_cast<size_t>(w) * h * 3, 255);
    int at_x = 0;
    for (const auto& o : overlays) {
        for (int y = 0; y < o.h; ++y) {
            for (int x = 0; x < o.w; ++x) {
                for (int c = 0; c < 3; ++c) {
                    strip.rgb[(static_cast<size_t>(y) * w + at_x + x) * 3 +
                              static_cast<size_t>(c)] =
                        o.rgb[(static_cast<size_t>(y) * o.w + x) * 3 + static_cast<size_t>(c)];
                }
            }
        }
        at_x += o.w + gap;
    }
    return strip;
}

}  // namespace tcformer
