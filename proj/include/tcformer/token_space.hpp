#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tcformer/autograd.hpp"
#include "tcformer/tensor.hpp"

namespace tcformer {

// Dense H' x W' feature grid in position-major form: data row p is the feature
// of pixel (p / w, p % w).
struct FeatureMap {
    int h = 0;
    int w = 0;
    Tensor data;  // (h*w) x C

    Index channels() const { return data.cols(); }
};

// Region structure of a token set. Every token owns a set of base-grid cells;
// the region_map stores, for each base cell, the index of the owning token.
// Regions always partition the base grid. The nominal processing grid of a
// stage is the base grid halved (stage - 1) times.
struct TokenLayout {
    int base_h = 0;
    int base_w = 0;
    int count = 0;
    int stage = 1;
    std::vector<int32_t> region_map;  // base_h * base_w entries

    std::pair<int, int> stage_resolution() const {
        return {base_h >> (stage - 1), base_w >> (stage - 1)};
    }
    int base_cells() const { return base_h * base_w; }
    std::vector<int> region_sizes() const;
    void validate() const;  // partition + surjectivity invariants
};

// Token features together with their region structure.
struct TokenSet {
    TokenLayout layout;
    Tensor features;  // N x C
};

// Autograd flavor used inside the model forward.
struct TokenVar {
    TokenLayout layout;
    ad::Var features;
};

// Original-token -> merged-token relationship retained for MTA upsampling.
struct MergeRecord {
    std::vector<int32_t> assignment;  // per original token
    std::vector<double> importance;   // per original token
    int merged_count = 0;

    void validate() const;  // surjectivity onto [0, merged_count)
};

// --- transforms ----------------------------------------------------------------

// Mixing table mapping token features to map pixels: each pixel is the
// cell-count-weighted average of the tokens overlapping its block of base cells.
ad::MixTable tokens_to_map_table(const TokenLayout& layout, int map_h, int map_w);

// Inverse direction: each token is the cell-count-weighted average of the map
// pixels its region touches.
ad::MixTable map_to_tokens_table(const TokenLayout& layout, int map_h, int map_w);

// r x r average pooling over an h x w grid.
ad::MixTable avgpool_table(int h, int w, int r);

FeatureMap tokens_to_map(const TokenSet& tokens, int map_h, int map_w);
Tensor map_to_tokens(const FeatureMap& map, const TokenLayout& layout);

// One token per base cell, features copied from a base-resolution map.
TokenSet init_tokens(const FeatureMap& stem_map);

// Remap the region grid through a merge assignment. The merged token's region
// is the union of its members' regions.
TokenLayout merge_regions(const TokenLayout& layout, const MergeRecord& record);

}  // namespace tcformer
