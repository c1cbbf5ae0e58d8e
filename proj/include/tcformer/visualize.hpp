#pragma once

#include <string>
#include <vector>

#include "tcformer/io.hpp"
#include "tcformer/token_space.hpp"

namespace tcformer {

// Categorical palette keyed by token index (stable across runs).
void palette_color(int token, uint8_t rgb[3]);

// Token-region overlay: every region gets its mean image color blended 50/50
// with a categorical palette color. image: (h*w) x 3 in [0, 1]; the base grid
// is upscaled to the image resolution.
io::Image8 region_overlay(const TokenLayout& layout, const Tensor& image, int img_h, int img_w);

// Side-by-side strip of one overlay per stage.
io::Image8 overlay_strip(const std::vector<io::Image8>& overlays, int gap = 4);

io::Image8 tensor_to_image(const Tensor& data, int h, int w);
Tensor image_to_tensor(const io::Image8& image);

}  // namespace tcformer
