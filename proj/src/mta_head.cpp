#include "tcformer/mta_head.hpp"

#include "tcformer/errors.hpp"

namespace tcformer {

ad::Var upsample_tokens(ad::Var merged, const MergeRecord& record) {
    record.validate();
    check_input(merged.val().rows() == record.merged_count,
                "merged feature count does not match record");
    return ad::gather_rows(merged,
                           std::vector<int>(record.assignment.begin(), record.assignment.end()));
}

Tensor upsample_tokens(const Tensor& merged, const MergeRecord& record) {
    record.validate();
    check_input(merged.rows() == record.merged_count,
                "merged feature count does not match record");
    Tensor out({static_cast<Index>(record.assignment.size()), merged.cols()});
    for (size_t i = 0; i < record.assignment.size(); ++i) {
        out.mat().row(static_cast<Index>(i)) = merged.mat().row(record.assignment[i]);
    }
    return out;
}

MtaHead::MtaHead(const std::vector<int>& stage_channels, MtaConfig cfg)
    : cfg_(cfg),
      input_proj_(stage_channels.back(), cfg.agg_channels),
      out_proj_(cfg.agg_channels, cfg.out_channels) {
    check_input(cfg.agg_channels > 0 && cfg.out_channels > 0, "head widths must be positive");
    check_input(stage_channels.size() >= 2, "MTA head needs at least two stages");
    const BlockConfig level{cfg.agg_channels, cfg.heads, cfg.expansion, 1};
    for (size_t s = stage_channels.size() - 1; s-- > 0;) {
        laterals_.emplace_back(stage_channels[s], cfg.agg_channels);
        blocks_.emplace_back(level);
    }
}

void MtaHead::init(Rng& rng) {
    input_proj_.init(rng);
    out_proj_.init(rng);
    for (auto& l : laterals_) l.init(rng);
    for (auto& b : blocks_) b.init(rng);
}

HeadOutput MtaHead::forward(ad::Graph& g, const std::vector<TokenVar>& stage_tokens,
                            const std::vector<MergeRecord>& records) const {
    const size_t levels = laterals_.size();
    check_input(stage_tokens.size() == levels + 1, "stage count does not match head");
    check_input(records.size() == levels, "record count does not match head");

    ad::Var x = input_proj_.forward(g, stage_tokens.back().features);
    for (size_t i = 0; i < levels; ++i) {
        const size_t s = levels - 1 - i;  // stage index being reconstructed
        check_input(static_cast<int>(records[s].assignment.size()) ==
                        stage_tokens[s].layout.count,
                    "record does not link adjacent stages");
        x = upsample_tokens(x, records[s]);
        x = ad::add(x, laterals_[i].forward(g, stage_tokens[s].features));
        x = blocks_[i].forward(g, x, stage_tokens[s].layout);
    }

    const TokenLayout& base = stage_tokens.front().layout;
    check_internal(base.count == base.base_cells(), "final tokens must cover one cell each");
    for (int i = 0; i < base.count; ++i) {
        check_internal(base.region_map[static_cast<size_t>(i)] == i,
                       "final tokens must be in base-cell order");
    }
    return HeadOutput{out_proj_.forward(g, x), base.base_h, base.base_w};
}

void MtaHead::visit(const std::string& prefix, const nn::ParamFn& fn) const {
    input_proj_.visit(prefix + ".input_proj", fn);
    for (size_t i = 0; i < laterals_.size(); ++i) {
        const std::string level = prefix + ".level" + std::to_string(i);
        laterals_[i].visit(level + ".lateral", fn);
        blocks_[i].visit(level + ".block", fn);
    }
    out_proj_.visit(prefix + ".out_proj", fn);
}

DeconvHead::DeconvHead(int in_channels, int levels, MtaConfig cfg) : cfg_(cfg) {
    check_input(levels >= 1, "deconv head needs at least one upsampling level");
    for (int i = 0; i < levels; ++i) {
        deconvs_.emplace_back(i == 0 ? in_channels : cfg.agg_channels, cfg.agg_channels, 4, 2, 1);
    }
    out_proj_ = nn::Linear(cfg.agg_channels, cfg.out_channels);
}

void DeconvHead::init(Rng& rng) {
    for (auto& d : deconvs_) d.init(rng);
    out_proj_.init(rng);
}

HeadOutput DeconvHead::forward(ad::Graph& g, const TokenVar& final_tokens) const {
    auto [h, w] = final_tokens.layout.stage_resolution();
    ad::Var x = ad::apply_mix(final_tokens.features,
                              tokens_to_map_table(final_tokens.layout, h, w));
    for (const auto& d : deconvs_) {
        x = ad::gelu(d.forward(g, x, h, w));
        h = d.out_size(h);
        w = d.out_size(w);
    }
    check_internal(h == final_tokens.layout.base_h && w == final_tokens.layout.base_w,
                   "deconv stack must end at base resolution");
    return HeadOutput{out_proj_.forward(g, x), h, w};
}

void DeconvHead::visit(const std::string& prefix, const nn::ParamFn& fn) const {
    for (size_t i = 0; i < deconvs_.size(); ++i) {
        deconvs_[i].visit(prefix + ".deconv" + std::to_string(i), fn);
    }
    out_proj_.visit(prefix + ".out_proj", fn);
}

}  // namespace tcformer
