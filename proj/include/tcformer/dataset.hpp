#pragma once

#include <cstdint>
#include <vector>

#include "tcformer/tensor.hpp"

namespace tcformer {

// Cell classes used by the token-density diagnostics.
enum class CellClass : uint8_t { background = 0, body = 1, detail = 2 };

// One synthetic keypoint sample: 1-3 bright disks ("body") each carrying two
// small high-contrast dots ("detail parts") on a textured noise background.
// Keypoint slots are fixed: disk d (ordered left to right) owns channels
// 3d (disk center), 3d+1 and 3d+2 (its dots, ordered by angle). Slots of
// absent disks have all-zero target heatmaps and are excluded from scoring.
struct SyntheticSample {
    static constexpr int kSlots = 9;

    int h = 0, w = 0;
    Tensor image;  // (h*w) x 3, values in [0, 1]

    struct Keypoint {
        double x = 0.0, y = 0.0;  // pixel units
        int slot = 0;
    };
    std::vector<Keypoint> keypoints;

    int base_h = 0, base_w = 0;
    Tensor target;  // (base_h*base_w) x kSlots, Gaussian peaks (sigma = 2 cells)

    std::vector<CellClass> cell_class;  // per base cell
};

// Deterministic per (seed, index); images are anti-aliased and keypoints are
// kept inside the image bounds.
std::vector<SyntheticSample> generate_dataset(uint64_t seed, int count, int resolution);

// Target heatmap builder shared with the tests: peak value exactly 1 at the
// keypoint's base cell.
Tensor keypoint_heatmaps(const std::vector<SyntheticSample::Keypoint>& keypoints, int base_h,
                         int base_w, int cell_size, double sigma_cells = 2.0);

}  // namespace tcformer
