#include "tcformer/ctm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tcformer/errors.hpp"

namespace tcformer {

namespace {

thread_local double g_cluster_merge_seconds = 0.0;

struct ProfileScope {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    ~ProfileScope() {
        g_cluster_merge_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

CtmConfig checked(CtmConfig cfg) {
    check_input(cfg.cluster_fraction > 0.0 && cfg.cluster_fraction <= 1.0,
                "cluster fraction must be in (0, 1]");
    check_input(cfg.knn >= 1, "knn size must be positive");
    cfg.inner_block.validate();
    return cfg;
}
}  // namespace

CtmBlock::CtmBlock(int in_channels, CtmConfig cfg)
    : in_channels_(in_channels),
      cfg_(checked(cfg)),
      proj_conv_(in_channels, cfg.inner_block.channels, 3, 2, 1),
      proj_skip_(in_channels, cfg.inner_block.channels, /*bias=*/false),
      proj_norm_(cfg.inner_block.channels),
      proj_fc_(cfg.inner_block.channels, cfg.inner_block.channels),
      score_(cfg.inner_block.channels, 1),
      refine_(cfg.inner_block) {}

void CtmBlock::init(Rng& rng) {
    proj_conv_.init(rng);
    proj_skip_.init(rng);
    proj_fc_.init(rng);
    score_.init(rng);
    refine_.init(rng);
}

ad::Var CtmBlock::project(ad::Graph& g, const TokenVar& in) const {
    const auto [h, w] = in.layout.stage_resolution();
    check_input(h % 2 == 0 && w % 2 == 0, "stage resolution must be even to merge");
    ad::Var map = ad::apply_mix(in.features, tokens_to_map_table(in.layout, h, w));
    ad::Var reduced = proj_conv_.forward(g, map, h, w);
    ad::Var from_map = ad::apply_mix(reduced, map_to_tokens_table(in.layout, h / 2, w / 2));
    ad::Var z = ad::add(proj_skip_.forward(g, in.features), from_map);
    return proj_fc_.forward(g, ad::gelu(proj_norm_.forward(g, z)));
}

ad::Var CtmBlock::importance_scores(ad::Graph& g, ad::Var projected) const {
    return score_.forward(g, projected);
}

CtmOutput CtmBlock::forward(ad::Graph& g, const TokenVar& in,
                            const FrozenClustering* frozen) const {
    const int n = in.layout.count;
    check_input(n >= 2, "token merge needs at least 2 tokens");
    const int m = static_cast<int>(std::ceil(n * cfg_.cluster_fraction));
    check_input(m >= 1 && m <= n, "merged token count out of range");

    ad::Var z = project(g, in);
    ad::Var p = importance_scores(g, z);

    dpc::ClusterResult clustering;
    ad::Var merged;
    MergeRecord record;
    {
        ProfileScope timed;
        if (frozen) {
            clustering.centers = frozen->centers;
            clustering.assignment = frozen->assignment;
        } else if (cfg_.use_topk_centers) {
            // ablation variant: centers are the tokens with the highest importance
            std::vector<int> order(static_cast<size_t>(n));
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                const double pa = p.val()[a], pb = p.val()[b];
                return pa > pb || (pa == pb && a < b);
            });
            order.resize(static_cast<size_t>(m));
            clustering.centers = order;
            clustering.assignment = dpc::assign_clusters(z.val(), clustering.centers);
        } else {
            clustering = dpc::cluster(z.val(), m, cfg_.knn);
        }

        record.merged_count = m;
        record.assignment.assign(clustering.assignment.begin(), clustering.assignment.end());
        record.importance.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) record.importance[static_cast<size_t>(i)] = p.val()[i];

        merged = merge_features(z, p, clustering.assignment, m);
    }
    TokenLayout merged_layout = merge_regions(in.layout, record);
    merged_layout.stage = in.layout.stage + 1;

    ad::Var refined = refine_.forward_cross(g, merged, merged_layout, z, in.layout, p);

    return CtmOutput{TokenVar{std::move(merged_layout), refined}, std::move(record),
                     std::move(clustering)};
}

void CtmBlock::visit(const std::string& prefix, const nn::ParamFn& fn) const {
    proj_conv_.visit(prefix + ".proj_conv", fn);
    proj_skip_.visit(prefix + ".proj_skip", fn);
    proj_norm_.visit(prefix + ".proj_norm", fn);
    proj_fc_.visit(prefix + ".proj_fc", fn);
    score_.visit(prefix + ".score", fn);
    refine_.visit(prefix + ".refine", fn);
}

ad::Var merge_features(ad::Var features, ad::Var scores, const std::vector<int>& assignment,
                       int merged_count) {
    check_input(scores.val().all_finite(), "importance scores must be finite");
    return ad::segment_merge(features, scores, assignment, merged_count);
}

double ctm_cluster_merge_seconds() { return g_cluster_merge_seconds; }
void reset_ctm_profile() { g_cluster_merge_seconds = 0.0; }

}  // namespace tcformer
