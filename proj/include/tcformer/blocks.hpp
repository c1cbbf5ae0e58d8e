#pragma once

#include "tcformer/nn.hpp"
#include "tcformer/token_space.hpp"

namespace tcformer {

// Per-stage transformer block hyperparameters (R, N, E, C naming of the
// stage tables maps to reduction / heads / expansion / channels).
struct BlockConfig {
    int channels = 0;
    int heads = 1;
    int expansion = 4;
    int reduction = 1;

    void validate() const;
};

// Pre-norm transformer block operating on token sets: multi-head attention
// with spatial reduction of the key/value set, then a feed-forward network
// whose hidden activations pass through a depth-wise 3x3 convolution on the
// stage grid. Token count and regions are invariant under forward().
class TransformerBlock {
public:
    TransformerBlock() = default;
    explicit TransformerBlock(BlockConfig cfg);

    void init(Rng& rng);

    ad::Var forward(ad::Graph& g, ad::Var x, const TokenLayout& layout) const;

    // Cross-attention flavor used by the CTM block: queries come from the
    // merged tokens, keys/values from the pre-merge tokens, and an optional
    // per-key bias (importance score) is added to the attention logits.
    ad::Var forward_cross(ad::Graph& g, ad::Var queries, const TokenLayout& q_layout,
                          ad::Var kv, const TokenLayout& kv_layout, ad::Var bias) const;

    // Key/value set after spatial reduction, with the bias carried along the
    // same path (token map + strided average) when reduction > 1.
    std::pair<ad::Var, ad::Var> spatial_reduction(ad::Graph& g, ad::Var tokens,
                                                  const TokenLayout& layout, ad::Var bias) const;

    ad::Var attention(ad::Graph& g, ad::Var queries, ad::Var keys_values, ad::Var bias) const;
    ad::Var ffn(ad::Graph& g, ad::Var x, const TokenLayout& layout) const;

    void visit(const std::string& prefix, const nn::ParamFn& fn) const;
    const BlockConfig& config() const { return cfg_; }

private:
    BlockConfig cfg_;
    nn::LayerNorm norm1_, norm2_;
    nn::Linear q_, kv_, proj_;
    nn::Conv2d sr_;  // only used when reduction > 1
    nn::LayerNorm sr_norm_;
    nn::Linear fc1_, fc2_;
    nn::DepthwiseConv3x3 dw_;
};

}  // namespace tcformer
