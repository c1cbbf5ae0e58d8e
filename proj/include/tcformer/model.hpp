#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tcformer/ctm.hpp"
#include "tcformer/mta_head.hpp"

namespace tcformer {

enum class HeadKind { mta, deconv, classification };
enum class CtmMode { dpc_knn, topk, strided };

struct StageConfig {
    BlockConfig block;
    int depth = 1;
};

struct ModelConfig {
    std::vector<StageConfig> stages;
    double cluster_fraction = 0.25;
    int knn = 5;
    CtmMode ctm_mode = CtmMode::dpc_knn;
    HeadKind head = HeadKind::mta;
    MtaConfig mta;           // aggregation/heatmap widths for mta and deconv heads
    int num_classes = 1000;  // classification head
    int stem_kernel = 7;     // stem is a single stride-4 convolution
    std::string preset;

    // "light" | "base" | "large": the published stage tables.
    // "mini": two-stage configuration for desk-scale training.
    static ModelConfig preset_config(const std::string& name);

    void validate() const;
    int stage_count() const { return static_cast<int>(stages.size()); }
    // Token count per stage under the configured cluster fraction.
    std::vector<long> token_schedule(int img_h, int img_w) const;
};

// Full token clustering transformer: convolutional stem, stages of
// transformer blocks with token-merge blocks between them, and one of three
// heads (token-aggregation, deconvolution baseline, classification).
class TCFormer {
public:
    explicit TCFormer(ModelConfig cfg);

    void init(uint64_t seed);

    struct Forward {
        std::vector<TokenVar> stage_tokens;
        std::vector<MergeRecord> records;
        std::vector<dpc::ClusterResult> clusterings;
        ad::Var head_out;  // heatmap grid (cells x K) or logits (1 x classes)
        int head_h = 0, head_w = 0;
    };

    struct FrozenForward {
        std::vector<FrozenClustering> ctms;  // one per merge, in stage order
    };

    // image: (img_h * img_w) x 3 position-major, values finite.
    Forward forward(ad::Graph& g, const Tensor& image, int img_h, int img_w,
                    const FrozenForward* frozen = nullptr) const;

    FeatureMap stem(ad::Graph& g, const Tensor& image, int img_h, int img_w) const;

    void visit_params(const nn::ParamFn& fn) const;
    std::vector<nn::Parameter*> parameters() const;
    long param_count() const;

    // Complexity model, one unit per multiply-accumulate; see flops.cpp for
    // the per-layer formulas and what is included.
    static double flop_count(const ModelConfig& cfg, int img_h, int img_w);
    // Same model broken down by module (stem, stages.s, ctm.s / downsample.s, head).
    static std::vector<std::pair<std::string, double>> flop_breakdown(const ModelConfig& cfg,
                                                                      int img_h, int img_w);

    const ModelConfig& config() const { return cfg_; }

private:
    ad::Var stem_tokens(ad::Graph& g, const Tensor& image, int img_h, int img_w, int* base_h,
                        int* base_w) const;

    struct StridedDownsample {
        nn::Conv2d conv;  // 3x3 stride 2
        void visit(const std::string& prefix, const nn::ParamFn& fn) const {
            conv.visit(prefix + ".conv", fn);
        }
    };

    ModelConfig cfg_;
    nn::Conv2d stem_conv_;
    nn::LayerNorm stem_norm_;
    std::vector<std::vector<TransformerBlock>> stage_blocks_;
    std::vector<nn::LayerNorm> stage_norms_;
    std::vector<CtmBlock> ctms_;                    // dpc_knn / topk modes
    std::vector<StridedDownsample> strided_;        // strided mode
    std::unique_ptr<MtaHead> mta_;
    std::unique_ptr<DeconvHead> deconv_;
    nn::Linear cls_;
};

}  // namespace tcformer
