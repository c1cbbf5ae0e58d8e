#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "tcformer/blocks.hpp"
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

void zero_params_matching(const TransformerBlock& block, const std::string& needle) {
    block.visit("b", [&](const std::string& name, nn::Parameter& p) {
        if (name.find(needle) != std::string::npos) p.value.fill(0.0);
    });
}

}  // namespace

TEST_CASE("block config validation") {
    CHECK_THROWS_AS(BlockConfig({6, 4, 2, 2}).validate(), InvalidInputError);  // 6 % 4 != 0
    CHECK_THROWS_AS(BlockConfig({8, 2, 2, 3}).validate(), InvalidInputError);  // R not 2^k
    CHECK_NOTHROW(BlockConfig({8, 2, 2, 4}).validate());
}

TEST_CASE("spatial reduction") {
    Rng rng(1);
    const TokenLayout layout = base_grid(4, 4);
    SUBCASE("reduction one returns the tokens untouched") {
        TransformerBlock block(BlockConfig{8, 2, 2, 1});
        block.init(rng);
        ad::Graph g;
        ad::Var x = g.constant(random_matrix(rng, 16, 8));
        auto [keys, bias] = block.spatial_reduction(g, x, layout, ad::Var{});
        CHECK(keys.node == x.node);
        CHECK(keys.val().rows() == 16);
    }
    SUBCASE("reduction two over a 4x4 grid gives 4 keys") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        ad::Graph g;
        auto [keys, bias] =
            block.spatial_reduction(g, g.constant(random_matrix(rng, 16, 8)), layout, ad::Var{});
        CHECK(keys.val().rows() == 4);
    }
    SUBCASE("constant tokens with zero conv bias give identical keys") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        zero_params_matching(block, "sr_conv.bias");
        ad::Graph g;
        auto [keys, bias] = block.spatial_reduction(
            g, g.constant(Tensor::full({16, 8}, 0.75)), layout, ad::Var{});
        for (Index i = 1; i < keys.val().rows(); ++i) {
            for (Index c = 0; c < 8; ++c) {
                CHECK(keys.val().at(i, c) == doctest::Approx(keys.val().at(0, c)).epsilon(1e-12));
            }
        }
    }
    SUBCASE("bias follows the same reduction path") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        ad::Graph g;
        Tensor p({16, 1});
        for (Index i = 0; i < 16; ++i) p[i] = static_cast<double>(i);
        auto [keys, bias] = block.spatial_reduction(
            g, g.constant(random_matrix(rng, 16, 8)), layout, g.constant(p));
        REQUIRE(bias.val().numel() == 4);
        // first key block covers cells 0,1,4,5
        CHECK(bias.val()[0] == doctest::Approx((0.0 + 1.0 + 4.0 + 5.0) / 4.0));
    }
    SUBCASE("indivisible resolution rejected") {
        TransformerBlock block(BlockConfig{8, 2, 2, 8});
        block.init(rng);
        ad::Graph g;
        CHECK_THROWS_AS(
            block.spatial_reduction(g, g.constant(random_matrix(rng, 16, 8)), layout, ad::Var{}),
            InvalidInputError);
    }
}

TEST_CASE("attention") {
    Rng rng(2);
    SUBCASE("zero bias equals no bias") {
        TransformerBlock block(BlockConfig{8, 2, 2, 1});
        block.init(rng);
        ad::Graph g;
        ad::Var q = g.constant(random_matrix(rng, 5, 8));
        ad::Var kv = g.constant(random_matrix(rng, 7, 8));
        const Tensor a = block.attention(g, q, kv, ad::Var{}).val();
        const Tensor b = block.attention(g, q, kv, g.constant(Tensor::zeros({7, 1}))).val();
        for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
    }
    SUBCASE("single key ignores the queries and the bias") {
        TransformerBlock block(BlockConfig{8, 2, 2, 1});
        block.init(rng);
        ad::Graph g;
        ad::Var kv = g.constant(random_matrix(rng, 1, 8));
        const Tensor a =
            block.attention(g, g.constant(random_matrix(rng, 4, 8)), kv, ad::Var{}).val();
        const Tensor b =
            block.attention(g, g.constant(random_matrix(rng, 4, 8)), kv,
                            g.constant(Tensor::full({1, 1}, 3.5)))
                .val();
        for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
        for (Index i = 1; i < a.rows(); ++i) {
            for (Index c = 0; c < 8; ++c) CHECK(a.at(i, c) == doctest::Approx(a.at(0, c)));
        }
    }
    SUBCASE("hand-computed biased softmax mix") {
        // equal logits, bias [ln 3, 0], values [4, 0] -> weights 3/4, 1/4 -> 3
        ad::Graph g;
        ad::Var q = g.constant(Tensor({1, 1}, {0.0}));
        ad::Var k = g.constant(Tensor({2, 1}, {0.0, 0.0}));
        ad::Var v = g.constant(Tensor({2, 1}, {4.0, 0.0}));
        ad::Var logits = ad::scale(ad::matmul(q, k, false, true), 1.0);
        logits = ad::add_rowvec(logits, g.constant(Tensor({2}, {std::log(3.0), 0.0})));
        const Tensor out = ad::matmul(ad::softmax_rows(logits), v).val();
        CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-12));
    }
}

TEST_CASE("feed-forward with depth-wise convolution") {
    Rng rng(3);
    const TokenLayout layout = base_grid(4, 4);
    SUBCASE("delta kernel and identity projections reduce to a pointwise nonlinearity") {
        TransformerBlock block(BlockConfig{4, 1, 1, 1});  // expansion 1 keeps shapes square
        block.init(rng);
        block.visit("b", [&](const std::string& name, nn::Parameter& p) {
            if (name.find("ffn_fc") != std::string::npos) {
                p.value.fill(0.0);
                if (name.find("weight") != std::string::npos) {
                    for (Index i = 0; i < 4; ++i) p.value.at(i, i) = 1.0;
                }
            }
            if (name == "b.ffn_dw.weight") {
                p.value.fill(0.0);
                for (Index c = 0; c < 4; ++c) p.value.at(c, 4) = 1.0;  // center tap
            }
            if (name == "b.ffn_dw.bias") p.value.fill(0.0);
        });
        ad::Graph g;
        const Tensor x = random_matrix(rng, 16, 4);
        const Tensor out = block.ffn(g, g.constant(x), layout).val();
        for (Index i = 0; i < out.numel(); ++i) {
            const double z = x[i];
            CHECK(out[i] == doctest::Approx(0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0)))));
        }
    }
    SUBCASE("gradient against finite differences") {
        CHECK(grad_check_module("block", 9).max_rel_error < 1e-5);
    }
}

TEST_CASE("block forward") {
    Rng rng(4);
    const TokenLayout layout = base_grid(4, 4);
    SUBCASE("zeroed output projections make the block an identity") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        zero_params_matching(block, "attn_proj");
        zero_params_matching(block, "ffn_fc2");
        ad::Graph g;
        const Tensor x = random_matrix(rng, 16, 8);
        const Tensor out = block.forward(g, g.constant(x), layout).val();
        for (Index i = 0; i < out.numel(); ++i) CHECK(out[i] == x[i]);
    }
    SUBCASE("token count preserved") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        for (Index n : {16}) {
            ad::Graph g;
            CHECK(block.forward(g, g.constant(random_matrix(rng, n, 8)), layout).val().rows() ==
                  n);
        }
    }
    SUBCASE("bias shift invariance through cross attention") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        TokenLayout coarse = layout;
        coarse.count = 4;
        coarse.stage = 2;
        for (int cy = 0; cy < 4; ++cy) {
            for (int cx = 0; cx < 4; ++cx) {
                coarse.region_map[static_cast<size_t>(cy * 4 + cx)] = (cy / 2) * 2 + (cx / 2);
            }
        }
        const Tensor q = random_matrix(rng, 4, 8);
        const Tensor kv = random_matrix(rng, 16, 8);
        Tensor p({16, 1});
        for (Index i = 0; i < 16; ++i) p[i] = rng.normal();
        Tensor p_shift = p;
        p_shift.vec().array() += 42.0;

        ad::Graph g;
        const Tensor a = block
                             .forward_cross(g, g.constant(q), coarse, g.constant(kv), layout,
                                            g.constant(p))
                             .val();
        const Tensor b = block
                             .forward_cross(g, g.constant(q), coarse, g.constant(kv), layout,
                                            g.constant(p_shift))
                             .val();
        for (Index i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(a[i] - b[i]) <=
                  1e-6 * std::max({std::abs(a[i]), std::abs(b[i]), 1.0}));
        }
    }
    SUBCASE("every parameter receives gradient on a generic input") {
        TransformerBlock block(BlockConfig{8, 2, 2, 2});
        block.init(rng);
        std::vector<nn::Parameter*> params;
        block.visit("b", [&](const std::string&, nn::Parameter& p) {
            p.zero_grad();
            params.push_back(&p);
        });
        ad::Graph g;
        ad::Var x = g.constant(random_matrix(rng, 16, 8));
        ad::Var out = block.forward(g, x, layout);
        g.backward(ad::mean_all(ad::gelu(out)));
        for (nn::Parameter* p : params) {
            bool any = false;
            for (Index i = 0; i < p->grad.numel(); ++i) any = any || p->grad[i] != 0.0;
            CHECK(any);
        }
    }
}
