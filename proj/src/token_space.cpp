#include "tcformer/token_space.hpp"

#include <algorithm>

#include "tcformer/errors.hpp"

namespace tcformer {

std::vector<int> TokenLayout::region_sizes() const {
    std::vector<int> sizes(static_cast<size_t>(count), 0);
    for (int32_t t : region_map) sizes[static_cast<size_t>(t)]++;
    return sizes;
}

void TokenLayout::validate() const {
    check_input(base_h > 0 && base_w > 0, "token layout: empty base grid");
    check_input(count > 0, "token layout: no tokens");
    check_input(static_cast<int>(region_map.size()) == base_h * base_w,
                "token layout: region map size mismatch");
    std::vector<bool> seen(static_cast<size_t>(count), false);
    for (int32_t t : region_map) {
        check_input(t >= 0 && t < count, "token layout: region map index out of range");
        seen[static_cast<size_t>(t)] = true;
    }
    for (bool s : seen) check_input(s, "token layout: token with empty region");
}

void MergeRecord::validate() const {
    check_input(merged_count > 0, "merge record: no merged tokens");
    std::vector<bool> seen(static_cast<size_t>(merged_count), false);
    for (int32_t a : assignment) {
        check_input(a >= 0 && a < merged_count, "merge record: assignment out of range");
        seen[static_cast<size_t>(a)] = true;
    }
    for (bool s : seen) check_input(s, "merge record: assignment not surjective");
}

namespace {

ad::MixTable from_lists(std::vector<std::vector<std::pair<int, double>>> rows, Index in_count) {
    ad::MixTable table;
    table.out_count = static_cast<Index>(rows.size());
    table.in_count = in_count;
    table.offsets.resize(rows.size() + 1, 0);
    for (size_t i = 0; i < rows.size(); ++i) {
        table.offsets[i + 1] = table.offsets[i] + static_cast<Index>(rows[i].size());
    }
    table.indices.reserve(static_cast<size_t>(table.offsets.back()));
    table.weights.reserve(static_cast<size_t>(table.offsets.back()));
    for (const auto& row : rows) {
        for (const auto& [idx, w] : row) {
            table.indices.push_back(idx);
            table.weights.push_back(w);
        }
    }
    return table;
}

void check_divisible(const TokenLayout& layout, int map_h, int map_w) {
    check_input(map_h > 0 && map_w > 0, "map resolution must be positive");
    check_input(layout.base_h % map_h == 0 && layout.base_w % map_w == 0,
                "map resolution must divide the base resolution");
}

// Count, for every map pixel, how many base cells of each token fall inside
// the pixel's block.
std::vector<std::vector<std::pair<int, double>>> overlap_counts(const TokenLayout& layout,
                                                                int map_h, int map_w) {
    const int bh = layout.base_h / map_h;
    const int bw = layout.base_w / map_w;
    std::vector<std::vector<std::pair<int, double>>> counts(
        static_cast<size_t>(map_h) * map_w);
    for (int cy = 0; cy < layout.base_h; ++cy) {
        for (int cx = 0; cx < layout.base_w; ++cx) {
            const int token = layout.region_map[static_cast<size_t>(cy * layout.base_w + cx)];
            auto& row = counts[static_cast<size_t>((cy / bh) * map_w + (cx / bw))];
            auto it = std::find_if(row.begin(), row.end(),
                                   [token](const auto& e) { return e.first == token; });
            if (it == row.end()) {
                row.emplace_back(token, 1.0);
            } else {
                it->second += 1.0;
            }
        }
    }
    return counts;
}

}  // namespace

ad::MixTable tokens_to_map_table(const TokenLayout& layout, int map_h, int map_w) {
    check_divisible(layout, map_h, map_w);
    auto counts = overlap_counts(layout, map_h, map_w);
    const double block_area =
        static_cast<double>(layout.base_h / map_h) * (layout.base_w / map_w);
    for (auto& row : counts) {
        for (auto& [token, w] : row) w /= block_area;
    }
    return from_lists(std::move(counts), layout.count);
}

ad::MixTable map_to_tokens_table(const TokenLayout& layout, int map_h, int map_w) {
    check_divisible(layout, map_h, map_w);
    auto counts = overlap_counts(layout, map_h, map_w);
    // invert: token <- pixels, weighted by cells of the token inside each pixel
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(layout.count));
    for (size_t pixel = 0; pixel < counts.size(); ++pixel) {
        for (const auto& [token, cells] : counts[pixel]) {
            rows[static_cast<size_t>(token)].emplace_back(static_cast<int>(pixel), cells);
        }
    }
    const auto sizes = layout.region_sizes();
    for (int t = 0; t < layout.count; ++t) {
        for (auto& [pixel, w] : rows[static_cast<size_t>(t)]) {
            w /= static_cast<double>(sizes[static_cast<size_t>(t)]);
        }
    }
    return from_lists(std::move(rows), static_cast<Index>(map_h) * map_w);
}

ad::MixTable avgpool_table(int h, int w, int r) {
    check_input(r >= 1 && h % r == 0 && w % r == 0, "pooling ratio must divide the grid");
    const int oh = h / r, ow = w / r;
    std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(oh) * ow);
    const double weight = 1.0 / (static_cast<double>(r) * r);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            rows[static_cast<size_t>((y / r) * ow + (x / r))].emplace_back(y * w + x, weight);
        }
    }
    return from_lists(std::move(rows), static_cast<Index>(h) * w);
}

FeatureMap tokens_to_map(const TokenSet& tokens, int map_h, int map_w) {
    check_input(tokens.features.rows() == tokens.layout.count,
                "token feature count does not match layout");
    const auto table = tokens_to_map_table(tokens.layout, map_h, map_w);
    return FeatureMap{map_h, map_w, ad::apply_mix(tokens.features, table)};
}

Tensor map_to_tokens(const FeatureMap& map, const TokenLayout& layout) {
    check_input(map.data.rows() == static_cast<Index>(map.h) * map.w,
                "feature map data does not match its resolution");
    const auto table = map_to_tokens_table(layout, map.h, map.w);
    return ad::apply_mix(map.data, table);
}

TokenSet init_tokens(const FeatureMap& stem_map) {
    check_input(stem_map.h > 0 && stem_map.w > 0, "empty stem map");
    TokenSet tokens;
    tokens.layout.base_h = stem_map.h;
    tokens.layout.base_w = stem_map.w;
    tokens.layout.count = stem_map.h * stem_map.w;
    tokens.layout.stage = 1;
    tokens.layout.region_map.resize(static_cast<size_t>(tokens.layout.count));
    for (int i = 0; i < tokens.layout.count; ++i) {
        tokens.layout.region_map[static_cast<size_t>(i)] = i;
    }
    tokens.features = stem_map.data;
    return tokens;
}

TokenLayout merge_regions(const TokenLayout& layout, const MergeRecord& record) {
    check_input(static_cast<int>(record.assignment.size()) == layout.count,
                "merge record does not match token count");
    record.validate();
    TokenLayout merged = layout;
    merged.count = record.merged_count;
    for (auto& cell : merged.region_map) {
        cell = record.assignment[static_cast<size_t>(cell)];
    }
    return merged;
}

}  // namespace tcformer
