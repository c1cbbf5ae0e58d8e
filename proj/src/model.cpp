#include "tcformer/model.hpp"

#include <cmath>

#include "tcformer/errors.hpp"

namespace tcformer {

namespace {

std::vector<StageConfig> standard_stages(const std::vector<int>& depths) {
    // published stage table: R = 8,4,2,1; N = 1,2,5,8; E = 8,8,4,4; C = 64,128,320,512
    const int channels[] = {64, 128, 320, 512};
    const int heads[] = {1, 2, 5, 8};
    const int expansion[] = {8, 8, 4, 4};
    const int reduction[] = {8, 4, 2, 1};
    std::vector<StageConfig> stages;
    for (size_t s = 0; s < depths.size(); ++s) {
        stages.push_back({BlockConfig{channels[s], heads[s], expansion[s], reduction[s]},
                          depths[s]});
    }
    return stages;
}

}  // namespace

ModelConfig ModelConfig::preset_config(const std::string& name) {
    ModelConfig cfg;
    cfg.preset = name;
    if (name == "light") {
        cfg.stages = standard_stages({2, 1, 1, 1});
    } else if (name == "base") {
        cfg.stages = standard_stages({3, 2, 5, 2});
    } else if (name == "large") {
        cfg.stages = standard_stages({3, 7, 26, 2});
    } else if (name == "mini") {
        cfg.stages = {{BlockConfig{32, 1, 4, 4}, 1}, {BlockConfig{64, 2, 4, 2}, 1}};
        cfg.mta.agg_channels = 32;
    } else {
        throw InvalidInputError("unknown preset: " + name);
    }
    return cfg;
}

void ModelConfig::validate() const {
    check_input(!stages.empty() && stages.size() <= 4, "model needs 1 to 4 stages");
    for (const auto& s : stages) {
        s.block.validate();
        check_input(s.depth >= 0, "stage depth must be nonnegative");
    }
    check_input(cluster_fraction > 0.0 && cluster_fraction <= 1.0,
                "cluster fraction must be in (0, 1]");
    check_input(knn >= 1, "knn size must be positive");
    check_input(stem_kernel >= 1 && stem_kernel % 2 == 1, "stem kernel must be odd");
    if (head == HeadKind::classification) {
        check_input(num_classes >= 2, "classification needs at least 2 classes");
    } else {
        check_input(mta.agg_channels > 0 && mta.out_channels > 0,
                    "head channel widths must be positive");
    }
}

std::vector<long> ModelConfig::token_schedule(int img_h, int img_w) const {
    std::vector<long> counts;
    long n = static_cast<long>(img_h / 4) * (img_w / 4);
    counts.push_back(n);
    for (int s = 1; s < stage_count(); ++s) {
        n = ctm_mode == CtmMode::strided
                ? n / 4
                : static_cast<long>(std::ceil(static_cast<double>(n) * cluster_fraction));
        counts.push_back(n);
    }
    return counts;
}

TCFormer::TCFormer(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int c1 = cfg_.stages.front().block.channels;
    stem_conv_ = nn::Conv2d(3, c1, cfg_.stem_kernel, 4, cfg_.stem_kernel / 2);
    stem_norm_ = nn::LayerNorm(c1);

    for (const auto& stage : cfg_.stages) {
        std::vector<TransformerBlock> blocks;
        for (int i = 0; i < stage.depth; ++i) blocks.emplace_back(stage.block);
        stage_blocks_.push_back(std::move(blocks));
        stage_norms_.emplace_back(stage.block.channels);
    }

    for (int s = 0; s + 1 < cfg_.stage_count(); ++s) {
        const int in_ch = cfg_.stages[static_cast<size_t>(s)].block.channels;
        const BlockConfig next = cfg_.stages[static_cast<size_t>(s + 1)].block;
        if (cfg_.ctm_mode == CtmMode::strided) {
            strided_.push_back({nn::Conv2d(in_ch, next.channels, 3, 2, 1)});
        } else {
            CtmConfig ctm;
            ctm.cluster_fraction = cfg_.cluster_fraction;
            ctm.knn = cfg_.knn;
            ctm.inner_block = next;
            ctm.use_topk_centers = cfg_.ctm_mode == CtmMode::topk;
            ctms_.emplace_back(in_ch, ctm);
        }
    }

    std::vector<int> stage_channels;
    for (const auto& s : cfg_.stages) stage_channels.push_back(s.block.channels);
    const int last = stage_channels.back();
    switch (cfg_.head) {
        case HeadKind::mta:
            mta_ = std::make_unique<MtaHead>(stage_channels, cfg_.mta);
            break;
        case HeadKind::deconv:
            deconv_ = std::make_unique<DeconvHead>(last, cfg_.stage_count() - 1, cfg_.mta);
            break;
        case HeadKind::classification:
            cls_ = nn::Linear(last, cfg_.num_classes);
            break;
    }
}

void TCFormer::init(uint64_t seed) {
    Rng rng(seed);
    stem_conv_.init(rng);
    for (auto& stage : stage_blocks_) {
        for (auto& block : stage) block.init(rng);
    }
    for (auto& ctm : ctms_) ctm.init(rng);
    for (auto& sd : strided_) sd.conv.init(rng);
    if (mta_) mta_->init(rng);
    if (deconv_) deconv_->init(rng);
    if (cfg_.head == HeadKind::classification) cls_.init(rng);
}

ad::Var TCFormer::stem_tokens(ad::Graph& g, const Tensor& image, int img_h, int img_w,
                              int* base_h, int* base_w) const {
    const int factor = 4 << (cfg_.stage_count() - 1);
    check_input(img_h % factor == 0 && img_w % factor == 0,
                "image resolution must be divisible by " + std::to_string(factor));
    check_input(image.rows() == static_cast<Index>(img_h) * img_w && image.cols() == 3,
                "image must be (h*w) x 3");
    check_input(image.all_finite(), "image contains non-finite values");
    ad::Var x = stem_conv_.forward(g, g.constant(image), img_h, img_w);
    *base_h = img_h / 4;
    *base_w = img_w / 4;
    return stem_norm_.forward(g, x);
}

FeatureMap TCFormer::stem(ad::Graph& g, const Tensor& image, int img_h, int img_w) const {
    int bh = 0, bw = 0;
    ad::Var x = stem_tokens(g, image, img_h, img_w, &bh, &bw);
    return FeatureMap{bh, bw, x.val()};
}

TCFormer::Forward TCFormer::forward(ad::Graph& g, const Tensor& image, int img_h, int img_w,
                                    const FrozenForward* frozen) const {
    Forward out;
    int bh = 0, bw = 0;
    ad::Var x = stem_tokens(g, image, img_h, img_w, &bh, &bw);

    TokenLayout layout;
    layout.base_h = bh;
    layout.base_w = bw;
    layout.count = bh * bw;
    layout.stage = 1;
    layout.region_map.resize(static_cast<size_t>(layout.count));
    for (int i = 0; i < layout.count; ++i) layout.region_map[static_cast<size_t>(i)] = i;

    for (int s = 0; s < cfg_.stage_count(); ++s) {
        for (const auto& block : stage_blocks_[static_cast<size_t>(s)]) {
            x = block.forward(g, x, layout);
        }
        x = stage_norms_[static_cast<size_t>(s)].forward(g, x);
        out.stage_tokens.push_back(TokenVar{layout, x});

        if (s + 1 == cfg_.stage_count()) break;
        if (cfg_.ctm_mode == CtmMode::strided) {
            const auto [h, w] = layout.stage_resolution();
            check_input(h % 2 == 0 && w % 2 == 0, "stage resolution must be even to merge");
            const auto& sd = strided_[static_cast<size_t>(s)];
            ad::Var map = ad::apply_mix(x, tokens_to_map_table(layout, h, w));
            x = sd.conv.forward(g, map, h, w);

            // re-tokenize on the halved grid: fixed 2x2 region unions
            const int h2 = h / 2, w2 = w / 2;
            const int cell_h = bh / h2, cell_w = bw / w2;
            TokenLayout coarse;
            coarse.base_h = bh;
            coarse.base_w = bw;
            coarse.count = h2 * w2;
            coarse.stage = layout.stage + 1;
            coarse.region_map.resize(static_cast<size_t>(bh) * bw);
            for (int cy = 0; cy < bh; ++cy) {
                for (int cx = 0; cx < bw; ++cx) {
                    coarse.region_map[static_cast<size_t>(cy * bw + cx)] =
                        (cy / cell_h) * w2 + (cx / cell_w);
                }
            }
            MergeRecord record;
            record.merged_count = coarse.count;
            record.assignment.resize(static_cast<size_t>(layout.count));
            record.importance.assign(static_cast<size_t>(layout.count), 0.0);
            // every old token sits inside exactly one coarse grid square
            std::vector<int32_t> owner(static_cast<size_t>(layout.count), -1);
            for (int cell = 0; cell < bh * bw; ++cell) {
                owner[static_cast<size_t>(layout.region_map[static_cast<size_t>(cell)])] =
                    coarse.region_map[static_cast<size_t>(cell)];
            }
            record.assignment = owner;
            out.records.push_back(std::move(record));
            out.clusterings.emplace_back();
            layout = std::move(coarse);
        } else {
            const FrozenClustering* fc =
                frozen ? &frozen->ctms.at(static_cast<size_t>(s)) : nullptr;
            CtmOutput merged = ctms_[static_cast<size_t>(s)].forward(g, TokenVar{layout, x}, fc);
            out.records.push_back(std::move(merged.record));
            out.clusterings.push_back(std::move(merged.clustering));
            layout = std::move(merged.tokens.layout);
            x = merged.tokens.features;
        }
    }

    switch (cfg_.head) {
        case HeadKind::mta: {
            HeadOutput head = mta_->forward(g, out.stage_tokens, out.records);
            out.head_out = head.data;
            out.head_h = head.h;
            out.head_w = head.w;
            break;
        }
        case HeadKind::deconv: {
            HeadOutput head = deconv_->forward(g, out.stage_tokens.back());
            out.head_out = head.data;
            out.head_h = head.h;
            out.head_w = head.w;
            break;
        }
        case HeadKind::classification:
            out.head_out = cls_.forward(g, ad::mean_rows(x));
            break;
    }
    return out;
}

void TCFormer::visit_params(const nn::ParamFn& fn) const {
    stem_conv_.visit("stem.conv", fn);
    stem_norm_.visit("stem.norm", fn);
    for (size_t s = 0; s < stage_blocks_.size(); ++s) {
        const std::string stage = "stages." + std::to_string(s);
        for (size_t b = 0; b < stage_blocks_[s].size(); ++b) {
            stage_blocks_[s][b].visit(stage + ".blocks." + std::to_string(b), fn);
        }
        stage_norms_[s].visit(stage + ".norm", fn);
    }
    for (size_t c = 0; c < ctms_.size(); ++c) {
        ctms_[c].visit("ctm." + std::to_string(c), fn);
    }
    for (size_t c = 0; c < strided_.size(); ++c) {
        strided_[c].visit("downsample." + std::to_string(c), fn);
    }
    if (mta_) mta_->visit("head.mta", fn);
    if (deconv_) deconv_->visit("head.deconv", fn);
    if (cfg_.head == HeadKind::classification) cls_.visit("head.cls", fn);
}

std::vector<nn::Parameter*> TCFormer::parameters() const {
    std::vector<nn::Parameter*> out;
    visit_params([&](const std::string&, nn::Parameter& p) { out.push_back(&p); });
    return out;
}

long TCFormer::param_count() const {
    long total = 0;
    visit_params([&](const std::string&, nn::Parameter& p) { total += p.value.numel(); });
    return total;
}

}  // namespace tcformer
