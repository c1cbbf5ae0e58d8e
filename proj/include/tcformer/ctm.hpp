#pragma once

#include "tcformer/blocks.hpp"
#include "tcformer/clustering.hpp"
#include "tcformer/token_space.hpp"

namespace tcformer {

struct CtmConfig {
    double cluster_fraction = 0.25;
    int knn = 5;
    BlockConfig inner_block;         // same setting as the next stage's blocks
    bool use_topk_centers = false;   // pick centers by importance score instead of DPC-KNN
};

// Pinned clustering decision, used by gradient checks so the hard assignment
// stays constant across the perturbed forward evaluations.
struct FrozenClustering {
    std::vector<int> centers;
    std::vector<int> assignment;
};

struct CtmOutput {
    TokenVar tokens;  // merged + refined, stage advanced by one
    MergeRecord record;
    dpc::ClusterResult clustering;  // density/indicator empty in topk mode
};

// Clustering-based token merge: project tokens to the next stage's width,
// score their importance, cluster, merge each cluster by importance-weighted
// averaging, then refine the merged tokens with one transformer block whose
// queries are the merged tokens and whose keys/values are the pre-merge
// tokens, with the importance scores added to the attention logits.
class CtmBlock {
public:
    CtmBlock() = default;
    CtmBlock(int in_channels, CtmConfig cfg);

    void init(Rng& rng);

    CtmOutput forward(ad::Graph& g, const TokenVar& in,
                      const FrozenClustering* frozen = nullptr) const;

    // Learned scalar importance of already-projected tokens.
    ad::Var importance_scores(ad::Graph& g, ad::Var projected) const;

    // Channel/width transition: strided 3x3 convolution over the stage grid
    // plus a pointwise skip, then norm, activation and a pointwise mix.
    ad::Var project(ad::Graph& g, const TokenVar& in) const;

    void visit(const std::string& prefix, const nn::ParamFn& fn) const;
    const CtmConfig& config() const { return cfg_; }
    int out_channels() const { return cfg_.inner_block.channels; }

private:
    int in_channels_ = 0;
    CtmConfig cfg_;
    nn::Conv2d proj_conv_;
    nn::Linear proj_skip_;
    nn::LayerNorm proj_norm_;
    nn::Linear proj_fc_;
    nn::Linear score_;
    TransformerBlock refine_;
};

// Importance-weighted merge over already-projected features; exposed on its
// own for tests. y_m = sum_j exp(p_j) x_j / sum_j exp(p_j) within cluster m.
ad::Var merge_features(ad::Var features, ad::Var scores, const std::vector<int>& assignment,
                       int merged_count);

// Wall-clock spent inside the clustering + merge part of CTM forwards since
// the last reset; lets callers report the fraction of total forward time.
double ctm_cluster_merge_seconds();
void reset_ctm_profile();

}  // namespace tcformer
