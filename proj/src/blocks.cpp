#include "tcformer/blocks.hpp"

#include <cmath>

#include "tcformer/errors.hpp"

namespace tcformer {

void BlockConfig::validate() const {
    check_input(channels > 0 && heads > 0 && expansion > 0 && reduction > 0,
                "block config values must be positive");
    check_input(channels % heads == 0, "channels must be divisible by head count");
    check_input((reduction & (reduction - 1)) == 0, "reduction ratio must be a power of two");
}

namespace {
BlockConfig checked(BlockConfig cfg) {
    cfg.validate();
    return cfg;
}
}  // namespace

TransformerBlock::TransformerBlock(BlockConfig cfg)
    : cfg_(checked(cfg)),
      norm1_(cfg.channels),
      norm2_(cfg.channels),
      q_(cfg.channels, cfg.channels),
      kv_(cfg.channels, 2 * cfg.channels),
      proj_(cfg.channels, cfg.channels),
      fc1_(cfg.channels, cfg.channels * cfg.expansion),
      fc2_(cfg.channels * cfg.expansion, cfg.channels),
      dw_(cfg.channels * cfg.expansion) {
    if (cfg_.reduction > 1) {
        sr_ = nn::Conv2d(cfg.channels, cfg.channels, cfg.reduction, cfg.reduction, 0);
        sr_norm_ = nn::LayerNorm(cfg.channels);
    }
}

void TransformerBlock::init(Rng& rng) {
    q_.init(rng);
    kv_.init(rng);
    proj_.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
    dw_.init(rng);
    if (cfg_.reduction > 1) sr_.init(rng);
}

std::pair<ad::Var, ad::Var> TransformerBlock::spatial_reduction(ad::Graph& g, ad::Var tokens,
                                                                const TokenLayout& layout,
                                                                ad::Var bias) const {
    if (cfg_.reduction == 1) return {tokens, bias};
    const auto [h, w] = layout.stage_resolution();
    check_input(h % cfg_.reduction == 0 && w % cfg_.reduction == 0,
                "reduction ratio must divide the stage resolution");
    const auto to_map = tokens_to_map_table(layout, h, w);
    ad::Var map = ad::apply_mix(tokens, to_map);
    ad::Var reduced = sr_.forward(g, map, h, w);
    ad::Var keys = sr_norm_.forward(g, reduced);
    ad::Var reduced_bias;
    if (bias) {
        const auto pool = avgpool_table(h, w, cfg_.reduction);
        reduced_bias = ad::apply_mix(ad::apply_mix(bias, to_map), pool);
    }
    return {keys, reduced_bias};
}

ad::Var TransformerBlock::attention(ad::Graph& g, ad::Var queries, ad::Var keys_values,
                                    ad::Var bias) const {
    const int c = cfg_.channels;
    const int d = c / cfg_.heads;
    ad::Var q = q_.forward(g, queries);
    ad::Var kv = kv_.forward(g, keys_values);
    ad::Var k = ad::slice_cols(kv, 0, c);
    ad::Var v = ad::slice_cols(kv, c, c);

    const double scaling = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<size_t>(cfg_.heads));
    for (int hI = 0; hI < cfg_.heads; ++hI) {
        ad::Var qh = ad::slice_cols(q, static_cast<Index>(hI) * d, d);
        ad::Var kh = ad::slice_cols(k, static_cast<Index>(hI) * d, d);
        ad::Var vh = ad::slice_cols(v, static_cast<Index>(hI) * d, d);
        ad::Var logits = ad::scale(ad::matmul(qh, kh, false, true), scaling);
        if (bias) logits = ad::add_rowvec(logits, bias);
        ad::Var weights = ad::softmax_rows(logits);
        heads.push_back(ad::matmul(weights, vh));
    }
    ad::Var merged = cfg_.heads == 1 ? heads[0] : ad::concat_cols(heads);
    return proj_.forward(g, merged);
}

ad::Var TransformerBlock::ffn(ad::Graph& g, ad::Var x, const TokenLayout& layout) const {
    const auto [h, w] = layout.stage_resolution();
    ad::Var hidden = fc1_.forward(g, x);
    ad::Var map = ad::apply_mix(hidden, tokens_to_map_table(layout, h, w));
    ad::Var conv = dw_.forward(g, map, h, w);
    ad::Var tokens = ad::apply_mix(conv, map_to_tokens_table(layout, h, w));
    return fc2_.forward(g, ad::gelu(tokens));
}

ad::Var TransformerBlock::forward(ad::Graph& g, ad::Var x, const TokenLayout& layout) const {
    ad::Var normed = norm1_.forward(g, x);
    auto [keys, reduced_bias] = spatial_reduction(g, normed, layout, ad::Var{});
    x = ad::add(x, attention(g, normed, keys, reduced_bias));
    x = ad::add(x, ffn(g, norm2_.forward(g, x), layout));
    return x;
}

ad::Var TransformerBlock::forward_cross(ad::Graph& g, ad::Var queries,
                                        const TokenLayout& q_layout, ad::Var kv,
                                        const TokenLayout& kv_layout, ad::Var bias) const {
    ad::Var nq = norm1_.forward(g, queries);
    ad::Var nkv = norm1_.forward(g, kv);
    auto [keys, reduced_bias] = spatial_reduction(g, nkv, kv_layout, bias);
    ad::Var x = ad::add(queries, attention(g, nq, keys, reduced_bias));
    x = ad::add(x, ffn(g, norm2_.forward(g, x), q_layout));
    return x;
}

void TransformerBlock::visit(const std::string& prefix, const nn::ParamFn& fn) const {
    norm1_.visit(prefix + ".norm1", fn);
    q_.visit(prefix + ".attn_q", fn);
    kv_.visit(prefix + ".attn_kv", fn);
    proj_.visit(prefix + ".attn_proj", fn);
    if (cfg_.reduction > 1) {
        sr_.visit(prefix + ".sr_conv", fn);
        sr_norm_.visit(prefix + ".sr_norm", fn);
    }
    norm2_.visit(prefix + ".norm2", fn);
    fc1_.visit(prefix + ".ffn_fc1", fn);
    dw_.visit(prefix + ".ffn_dw", fn);
    fc2_.visit(prefix + ".ffn_fc2", fn);
}

}  // namespace tcformer
