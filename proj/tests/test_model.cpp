#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tcformer/harness.hpp"
#include "tcformer/io.hpp"

using namespace tcformer;

namespace {

Tensor random_image(Rng& rng, int h, int w) {
    Tensor t({static_cast<Index>(h) * w, 3});
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    return t;
}

ModelConfig mini_with(HeadKind head, CtmMode mode = CtmMode::dpc_knn) {
    ModelConfig cfg = ModelConfig::preset_config("mini");
    cfg.head = head;
    cfg.ctm_mode = mode;
    cfg.mta.out_channels = 5;
    cfg.num_classes = 4;
    return cfg;
}

}  // namespace

TEST_CASE("token schedule follows the quarter rule") {
    const ModelConfig base = ModelConfig::preset_config("base");
    CHECK(base.token_schedule(224, 224) == std::vector<long>{3136, 784, 196, 49});
    CHECK(base.token_schedule(256, 192) == std::vector<long>{3072, 768, 192, 48});
    const ModelConfig mini = ModelConfig::preset_config("mini");
    CHECK(mini.token_schedule(64, 64) == std::vector<long>{256, 64});
}

TEST_CASE("stem") {
    Rng rng(1);
    const ModelConfig cfg = mini_with(HeadKind::mta);
    TCFormer model(cfg);
    model.init(7);
    SUBCASE("resolution arithmetic") {
        ad::Graph g;
        const FeatureMap map = model.stem(g, random_image(rng, 64, 64), 64, 64);
        CHECK(map.h == 16);
        CHECK(map.w == 16);
        CHECK(map.data.cols() == 32);
    }
    SUBCASE("indivisible image rejected") {
        ad::Graph g;
        CHECK_THROWS_AS(model.forward(g, random_image(rng, 60, 60), 60, 60), InvalidInputError);
    }
    SUBCASE("gradient") { CHECK(grad_check_module("stem", 2).max_rel_error < 1e-5); }
}

TEST_CASE("full forward") {
    Rng rng(2);
    const Tensor image = random_image(rng, 64, 64);

    SUBCASE("mta head: counts, partitions, heatmap shape") {
        TCFormer model(mini_with(HeadKind::mta));
        model.init(3);
        ad::Graph g;
        const auto fwd = model.forward(g, image, 64, 64);
        REQUIRE(fwd.stage_tokens.size() == 2);
        CHECK(fwd.stage_tokens[0].layout.count == 256);
        CHECK(fwd.stage_tokens[1].layout.count == 64);
        for (const auto& stage : fwd.stage_tokens) stage.layout.validate();
        CHECK(fwd.head_h == 16);
        CHECK(fwd.head_w == 16);
        CHECK(fwd.head_out.val().rows() == 256);
        CHECK(fwd.head_out.val().cols() == 5);
        REQUIRE(fwd.records.size() == 1);
        CHECK(static_cast<int>(fwd.records[0].assignment.size()) == 256);
    }
    SUBCASE("deterministic across runs") {
        TCFormer model(mini_with(HeadKind::mta));
        model.init(3);
        ad::Graph g1, g2;
        const Tensor a = model.forward(g1, image, 64, 64).head_out.val();
        const Tensor b = model.forward(g2, image, 64, 64).head_out.val();
        for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    }
    SUBCASE("classification head") {
        TCFormer model(mini_with(HeadKind::classification));
        model.init(4);
        ad::Graph g;
        const auto fwd = model.forward(g, image, 64, 64);
        CHECK(fwd.head_out.val().rows() == 1);
        CHECK(fwd.head_out.val().cols() == 4);
        CHECK(grad_check_module("classifier", 4).max_rel_error < 1e-5);
    }
    SUBCASE("mean pooling is permutation invariant") {
        Rng prng(9);
        nn::Linear cls(8, 3);
        cls.init(prng);
        Tensor tokens({6, 8});
        for (Index i = 0; i < tokens.numel(); ++i) tokens[i] = prng.normal();
        Tensor shuffled({6, 8});
        const int perm[6] = {4, 2, 0, 5, 1, 3};
        for (int i = 0; i < 6; ++i) {
            shuffled.mat().row(i) = tokens.cmat().row(perm[i]);
        }
        ad::Graph g;
        const Tensor a = cls.forward(g, ad::mean_rows(g.constant(tokens))).val();
        const Tensor b = cls.forward(g, ad::mean_rows(g.constant(shuffled))).val();
        for (Index i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
    }
}

TEST_CASE("strided ablation") {
    Rng rng(5);
    const Tensor image = random_image(rng, 64, 64);
    TCFormer model(mini_with(HeadKind::mta, CtmMode::strided));
    model.init(6);
    ad::Graph g;
    const auto fwd = model.forward(g, image, 64, 64);

    SUBCASE("token counts match the clustering path") {
        CHECK(fwd.stage_tokens[0].layout.count == 256);
        CHECK(fwd.stage_tokens[1].layout.count == 64);
    }
    SUBCASE("regions are fixed 2x2 unions") {
        const TokenLayout& layout = fwd.stage_tokens[1].layout;
        for (int cy = 0; cy < 16; ++cy) {
            for (int cx = 0; cx < 16; ++cx) {
                CHECK(layout.region_map[static_cast<size_t>(cy * 16 + cx)] ==
                      (cy / 2) * 8 + (cx / 2));
            }
        }
        const auto sizes = layout.region_sizes();
        for (int s : sizes) CHECK(s == 4);
    }
    SUBCASE("records stay usable for the MTA head") {
        fwd.records[0].validate();
        CHECK(fwd.head_out.val().rows() == 256);
    }
}

TEST_CASE("topk ablation produces the full pipeline") {
    Rng rng(6);
    TCFormer model(mini_with(HeadKind::mta, CtmMode::topk));
    model.init(7);
    ad::Graph g;
    const auto fwd = model.forward(g, random_image(rng, 64, 64), 64, 64);
    CHECK(fwd.stage_tokens[1].layout.count == 64);
    CHECK(fwd.clusterings[0].density.empty());  // no density computation in topk mode
}

TEST_CASE("parameter accounting") {
    SUBCASE("degenerate config is hand-countable") {
        ModelConfig cfg;
        cfg.stages = {{BlockConfig{8, 1, 2, 1}, 0}};
        cfg.head = HeadKind::classification;
        cfg.num_classes = 2;
        TCFormer model(cfg);
        // stem conv 7*7*3*8+8, stem norm 16, stage norm 16, classifier 8*2+2
        CHECK(model.param_count() == 1184 + 16 + 16 + 18);
    }
    SUBCASE("light preset is strictly smaller than base") {
        ModelConfig light = ModelConfig::preset_config("light");
        ModelConfig base = ModelConfig::preset_config("base");
        light.head = base.head = HeadKind::classification;
        CHECK(TCFormer(light).param_count() < TCFormer(base).param_count());
        CHECK(TCFormer::flop_count(light, 224, 224) < TCFormer::flop_count(base, 224, 224));
    }
    SUBCASE("breakdown sums to the total") {
        ModelConfig cfg = ModelConfig::preset_config("mini");
        double total = 0.0;
        for (const auto& [name, f] : TCFormer::flop_breakdown(cfg, 64, 64)) total += f;
        CHECK(total == TCFormer::flop_count(cfg, 64, 64));
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(7);
    const Tensor image = random_image(rng, 64, 64);
    TCFormer model(mini_with(HeadKind::mta));
    model.init(8);
    const std::string path = (std::filesystem::temp_directory_path() / "tcf_test_ckpt").string();
    io::save_model(path, model);

    SUBCASE("weights survive the float32 container") {
        TCFormer loaded = io::load_model(path);
        CHECK(loaded.param_count() == model.param_count());
        ad::Graph g1, g2;
        const Tensor a = model.forward(g1, image, 64, 64).head_out.val();
        const Tensor b = loaded.forward(g2, image, 64, 64).head_out.val();
        for (Index i = 0; i < a.numel(); ++i) {
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-4));
        }
    }
    SUBCASE("rewriting a loaded model is byte-stable") {
        TCFormer loaded = io::load_model(path);
        const std::string path2 = path + "_2";
        io::save_model(path2, loaded);
        std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
        const std::string b1((std::istreambuf_iterator<char>(f1)),
                             std::istreambuf_iterator<char>());
        const std::string b2((std::istreambuf_iterator<char>(f2)),
                             std::istreambuf_iterator<char>());
        CHECK(b1 == b2);
    }
    SUBCASE("missing checkpoint raises the artifact error") {
        CHECK_THROWS_AS(io::load_model("/nonexistent/path/model"), MissingArtifactError);
    }
    SUBCASE("mismatched architecture rejected") {
        TCFormer other(mini_with(HeadKind::deconv));
        CHECK_THROWS_AS(io::load_checkpoint(path, other), InvalidInputError);
    }
}

TEST_CASE("model gradient end to end") {
    CHECK(grad_check_module("model", 1).max_rel_error < 1e-5);
}
