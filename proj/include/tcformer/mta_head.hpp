#pragma once

#include <vector>

#include "tcformer/blocks.hpp"
#include "tcformer/token_space.hpp"

namespace tcformer {

struct MtaConfig {
    int agg_channels = 32;  // common aggregation width across levels
    int out_channels = 1;   // number of heatmaps
    int heads = 1;
    int expansion = 4;
};

struct HeadOutput {
    ad::Var data;  // (h*w) x out_channels
    int h = 0;
    int w = 0;
};

// Copy merged token features back to the original tokens through the recorded
// assignment. Pure gather, no interpolation.
ad::Var upsample_tokens(ad::Var merged, const MergeRecord& record);
Tensor upsample_tokens(const Tensor& merged, const MergeRecord& record);

// Multi-stage token aggregation: start from the last stage, repeatedly
// upsample through the recorded merges, add the laterally-projected tokens of
// the previous stage and run one transformer block at that stage's
// resolution. The final tokens sit one per base cell and reshape directly to
// a heatmap grid.
class MtaHead {
public:
    MtaHead() = default;
    MtaHead(const std::vector<int>& stage_channels, MtaConfig cfg);

    void init(Rng& rng);

    HeadOutput forward(ad::Graph& g, const std::vector<TokenVar>& stage_tokens,
                       const std::vector<MergeRecord>& records) const;

    void visit(const std::string& prefix, const nn::ParamFn& fn) const;
    const MtaConfig& config() const { return cfg_; }

private:
    MtaConfig cfg_;
    nn::Linear input_proj_;
    std::vector<nn::Linear> laterals_;       // one per aggregation level, deepest first
    std::vector<TransformerBlock> blocks_;   // one per aggregation level, deepest first
    nn::Linear out_proj_;
};

// Ablation baseline: rasterize the final-stage tokens to their nominal grid
// and upsample with stride-2 transposed convolutions back to base resolution.
class DeconvHead {
public:
    DeconvHead() = default;
    DeconvHead(int in_channels, int levels, MtaConfig cfg);

    void init(Rng& rng);
    HeadOutput forward(ad::Graph& g, const TokenVar& final_tokens) const;
    void visit(const std::string& prefix, const nn::ParamFn& fn) const;

private:
    MtaConfig cfg_;
    std::vector<nn::ConvTranspose2d> deconvs_;
    nn::Linear out_proj_;
};

}  // namespace tcformer
