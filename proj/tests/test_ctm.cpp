#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "reference_clustering.hpp"
#include "tcformer/ctm.hpp"
#include "tcformer/harness.hpp"

using namespace tcformer;

namespace {

TokenLayout base_grid(int h, int w) {
    TokenLayout layout;
    layout.base_h = h;
    layout.base_w = w;
    layout.count = h * w;
    layout.stage = 1;
    layout.region_map.resize(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) layout.region_map[static_cast<size_t>(i)] = i;
    return layout;
}

Tensor random_matrix(Rng& rng, Index n, Index c, double scale = 1.0) {
    Tensor t({n, c});
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

CtmBlock make_ctm(Rng& rng, double fraction, bool topk = false) {
    CtmConfig cfg;
    cfg.cluster_fraction = fraction;
    cfg.knn = 3;
    cfg.inner_block = BlockConfig{16, 2, 2, 2};
    cfg.use_topk_centers = topk;
    CtmBlock ctm(8, cfg);
    ctm.init(rng);
    return ctm;
}

}  // namespace

TEST_CASE("importance scores") {
    Rng rng(1);
    CtmBlock ctm = make_ctm(rng, 0.25);
    SUBCASE("zero projection gives zero scores") {
        ctm.visit("ctm", [](const std::string& name, nn::Parameter& p) {
            if (name.find("score") != std::string::npos) p.value.fill(0.0);
        });
        ad::Graph g;
        const Tensor p = ctm.importance_scores(g, g.constant(random_matrix(rng, 6, 16))).val();
        for (Index i = 0; i < p.numel(); ++i) CHECK(p[i] == 0.0);
    }
    SUBCASE("unit first-axis projection reads the first feature") {
        ctm.visit("ctm", [](const std::string& name, nn::Parameter& p) {
            if (name == "ctm.score.weight") {
                p.value.fill(0.0);
                p.value[0] = 1.0;
            }
            if (name == "ctm.score.bias") p.value.fill(0.0);
        });
        Tensor f({2, 16});
        f.at(0, 0) = 2.0;
        f.at(1, 0) = 5.0;
        ad::Graph g;
        const Tensor p = ctm.importance_scores(g, g.constant(f)).val();
        CHECK(p[0] == 2.0);
        CHECK(p[1] == 5.0);
    }
}

TEST_CASE("importance-weighted merge") {
    SUBCASE("equal scores give the arithmetic mean") {
        ad::Graph g;
        Tensor x({4, 2}, {1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0});
        Tensor p = Tensor::full({4, 1}, 0.7);
        const Tensor y =
            merge_features(g.constant(x), g.constant(p), {0, 0, 1, 1}, 2).val();
        CHECK(y.at(0, 0) == doctest::Approx(2.0));
        CHECK(y.at(0, 1) == doctest::Approx(3.0));
        CHECK(y.at(1, 0) == doctest::Approx(20.0));
        CHECK(y.at(1, 1) == doctest::Approx(30.0));
    }
    SUBCASE("hand-computed 1:3 weighting") {
        ad::Graph g;
        Tensor x({2, 2}, {1.0, 0.0, 3.0, 0.0});
        Tensor p({2, 1}, {0.0, std::log(3.0)});
        const Tensor y = merge_features(g.constant(x), g.constant(p), {0, 0}, 1).val();
        CHECK(y.at(0, 0) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(y.at(0, 1) == doctest::Approx(0.0));
    }
    SUBCASE("singleton cluster copies the feature exactly") {
        ad::Graph g;
        Tensor x({3, 2}, {1.5, -2.5, 7.0, 8.0, -1.0, 0.5});
        Tensor p({3, 1}, {0.3, -4.0, 2.0});
        const Tensor y = merge_features(g.constant(x), g.constant(p), {0, 1, 2}, 3).val();
        for (Index i = 0; i < 6; ++i) CHECK(y[i] == x[i]);
    }
    SUBCASE("shift invariance of the weights") {
        Rng rng(2);
        ad::Graph g;
        const Tensor x = random_matrix(rng, 8, 3);
        Tensor p = random_matrix(rng, 8, 1);
        Tensor p2 = p;
        p2.vec().array() += 1000.0;
        const std::vector<int> assignment{0, 1, 2, 0, 1, 2, 0, 1};
        const Tensor a = merge_features(g.constant(x), g.constant(p), assignment, 3).val();
        const Tensor b = merge_features(g.constant(x), g.constant(p2), assignment, 3).val();
        for (Index i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a[i] - b[i]) <= 1e-6 * std::max(1.0, std::abs(a[i])));
        }
    }
    SUBCASE("merged features stay inside per-dimension cluster bounds") {
        Rng rng(3);
        ad::Graph g;
        const Tensor x = random_matrix(rng, 12, 4);
        const Tensor p = random_matrix(rng, 12, 1, 2.0);
        std::vector<int> assignment(12);
        for (int i = 0; i < 12; ++i) assignment[static_cast<size_t>(i)] = i % 3;
        const Tensor y = merge_features(g.constant(x), g.constant(p), assignment, 3).val();
        for (int m = 0; m < 3; ++m) {
            for (Index c = 0; c < 4; ++c) {
                double lo = 1e300, hi = -1e300;
                for (int i = 0; i < 12; ++i) {
                    if (assignment[static_cast<size_t>(i)] == m) {
                        lo = std::min(lo, x.at(i, c));
                        hi = std::max(hi, x.at(i, c));
                    }
                }
                CHECK(y.at(m, c) >= lo - 1e-12);
                CHECK(y.at(m, c) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("ctm forward") {
    Rng rng(4);
    const TokenLayout layout = base_grid(4, 4);

    SUBCASE("cardinality follows the ceiling rule") {
        for (double fraction : {0.25, 0.3, 1.0}) {
            CtmBlock ctm = make_ctm(rng, fraction);
            ad::Graph g;
            auto out = ctm.forward(g, TokenVar{layout, g.constant(random_matrix(rng, 16, 8))});
            CHECK(out.tokens.layout.count ==
                  static_cast<int>(std::ceil(16 * fraction)));
            CHECK(out.tokens.features.val().rows() == out.tokens.layout.count);
            out.tokens.layout.validate();  // regions still partition the base grid
            CHECK(out.tokens.layout.stage == 2);
        }
    }
    SUBCASE("fraction one with identity-forced refinement permutes the projected tokens") {
        CtmBlock ctm = make_ctm(rng, 1.0);
        ctm.visit("ctm", [](const std::string& name, nn::Parameter& p) {
            if (name.find("refine.attn_proj") != std::string::npos ||
                name.find("refine.ffn_fc2") != std::string::npos) {
                p.value.fill(0.0);
            }
        });
        ad::Graph g;
        TokenVar in{layout, g.constant(random_matrix(rng, 16, 8))};
        const Tensor projected = ctm.project(g, in).val();
        auto out = ctm.forward(g, in);
        REQUIRE(out.tokens.layout.count == 16);
        for (int rank = 0; rank < 16; ++rank) {
            const int token = out.clustering.centers[static_cast<size_t>(rank)];
            for (Index c = 0; c < 16; ++c) {
                CHECK(out.tokens.features.val().at(rank, c) ==
                      doctest::Approx(projected.at(token, c)).epsilon(1e-12));
            }
        }
    }
    SUBCASE("two feature blobs split into the oracle partition") {
        CtmBlock ctm = make_ctm(rng, 2.0 / 16.0);
        ad::Graph g;
        Tensor features({16, 8});
        for (int i = 0; i < 16; ++i) {
            for (int c = 0; c < 8; ++c) {
                features.at(i, c) = (i < 8 ? 0.0 : 25.0) + rng.normal(0.0, 0.05);
            }
        }
        TokenVar in{layout, g.constant(features)};
        const Tensor projected = ctm.project(g, in).val();
        auto out = ctm.forward(g, in);
        const auto want = reference::cluster(
            std::vector<double>(projected.data(), projected.data() + projected.numel()), 16, 16,
            2, 3);
        CHECK(out.clustering.assignment == want.assignment);
        CHECK(out.clustering.centers == want.centers);
    }
    SUBCASE("importance shift leaves the merged and refined tokens unchanged") {
        CtmBlock ctm = make_ctm(rng, 0.25);
        const Tensor features = random_matrix(rng, 16, 8);
        ad::Graph g;
        auto base = ctm.forward(g, TokenVar{layout, g.constant(features)});
        ctm.visit("ctm", [](const std::string& name, nn::Parameter& p) {
            if (name == "ctm.score.bias") p.value[0] += 17.0;
        });
        // clustering does not depend on the scores, so the partition is stable
        auto shifted = ctm.forward(g, TokenVar{layout, g.constant(features)});
        CHECK(base.record.assignment == shifted.record.assignment);
        const Tensor& a = base.tokens.features.val();
        const Tensor& b = shifted.tokens.features.val();
        for (Index i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a[i] - b[i]) <=
                  1e-6 * std::max({std::abs(a[i]), std::abs(b[i]), 1.0}));
        }
    }
    SUBCASE("topk variant centers by importance") {
        CtmBlock ctm = make_ctm(rng, 0.25, /*topk=*/true);
        ad::Graph g;
        auto out = ctm.forward(g, TokenVar{layout, g.constant(random_matrix(rng, 16, 8))});
        REQUIRE(out.clustering.centers.size() == 4);
        // centers must be the top-4 tokens by importance score
        std::vector<std::pair<double, int>> ranked;
        for (int i = 0; i < 16; ++i) {
            ranked.emplace_back(-out.record.importance[static_cast<size_t>(i)], i);
        }
        std::sort(ranked.begin(), ranked.end());
        for (int rank = 0; rank < 4; ++rank) {
            CHECK(out.clustering.centers[static_cast<size_t>(rank)] ==
                  ranked[static_cast<size_t>(rank)].second);
        }
        CHECK(out.clustering.density.empty());
    }
    SUBCASE("record stores the scores used for merging") {
        CtmBlock ctm = make_ctm(rng, 0.25);
        ad::Graph g;
        TokenVar in{layout, g.constant(random_matrix(rng, 16, 8))};
        const Tensor projected = ctm.project(g, in).val();
        const Tensor scores = ctm.importance_scores(g, g.constant(projected)).val();
        auto out = ctm.forward(g, in);
        for (int i = 0; i < 16; ++i) {
            CHECK(out.record.importance[static_cast<size_t>(i)] == doctest::Approx(scores[i]));
        }
    }
    SUBCASE("too few tokens rejected") {
        CtmBlock ctm = make_ctm(rng, 0.25);
        TokenLayout tiny = base_grid(1, 1);
        ad::Graph g;
        CHECK_THROWS_AS(ctm.forward(g, TokenVar{tiny, g.constant(Tensor({1, 8}))}),
                        InvalidInputError);
    }
    SUBCASE("gradients flow through features and scores with frozen assignment") {
        CHECK(grad_check_module("ctm", 5).max_rel_error < 1e-5);
    }
}
