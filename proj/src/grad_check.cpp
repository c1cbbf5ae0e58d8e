#include <algorithm>
#include <cmath>

#include "tcformer/harness.hpp"

namespace tcformer {

namespace {

Tensor random_tensor(std::vector<Index> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
    return t;
}

TokenLayout grid_layout(int h, int w) {
    TokenLayout layout;
    layout.base_h = h;
    layout.base_w = w;
    layout.count = h * w;
    layout.stage = 1;
    layout.region_map.resize(static_cast<size_t>(layout.count));
    for (int i = 0; i < layout.count; ++i) layout.region_map[static_cast<size_t>(i)] = i;
    return layout;
}

ModelConfig micro_config(HeadKind head) {
    ModelConfig cfg;
    cfg.stages = {{BlockConfig{8, 1, 2, 2}, 1}, {BlockConfig{16, 2, 2, 2}, 1}};
    cfg.head = head;
    cfg.mta.agg_channels = 8;
    cfg.mta.out_channels = 3;
    cfg.num_classes = 2;
    cfg.knn = 3;
    cfg.preset = "micro";
    return cfg;
}

// forward with a deliberately wrong backward; the negative control
ad::Var buggy_scale(ad::Var a) {
    Tensor out = a.val();
    out.vec() *= 2.0;
    return a.node->graph->make(std::move(out), true, [an = a.node](ad::Node& self) {
        an->accum_scaled(self.grad, 2.1);
    });
}

}  // namespace

GradCheckReport grad_check(const std::function<ad::Var(ad::Graph&)>& loss_fn,
                           const std::vector<nn::Parameter*>& params, double eps,
                           long max_coords) {
    for (nn::Parameter* p : params) p->zero_grad();
    {
        ad::Graph g;
        ad::Var loss = loss_fn(g);
        g.backward(loss);
    }
    GradCheckReport report;
    auto eval_at = [&](nn::Parameter* p, Index idx, double orig, double step) {
        double f_plus, f_minus;
        p->value[idx] = orig + step;
        {
            ad::Graph g;
            f_plus = loss_fn(g).val()[0];
        }
        p->value[idx] = orig - step;
        {
            ad::Graph g;
            f_minus = loss_fn(g).val()[0];
        }
        p->value[idx] = orig;
        return (f_plus - f_minus) / (2.0 * step);
    };
    auto rel_err = [](double analytic, double numeric) {
        const double denom = std::max(std::abs(numeric), std::abs(analytic));
        return denom < 1e-6 ? std::abs(analytic - numeric)
                            : std::abs(analytic - numeric) / denom;
    };
    for (nn::Parameter* p : params) {
        const Index n = p->value.numel();
        const long count = std::min<long>(max_coords, n);
        for (long t = 0; t < count; ++t) {
            const Index idx = static_cast<Index>(t * n / count);
            const double orig = p->value[idx];
            const double analytic = p->grad[idx];
            // step-size ladder: large steps suppress cancellation noise, small
            // steps suppress curvature; a wrong gradient fails at every step
            double err = rel_err(analytic, eval_at(p, idx, orig, eps));
            for (double step = eps / 16.0; err >= 1e-6 && step >= eps / 300.0; step /= 16.0) {
                err = std::min(err, rel_err(analytic, eval_at(p, idx, orig, step)));
            }
            report.max_rel_error = std::max(report.max_rel_error, err);
            report.checked_coords++;
        }
    }
    return report;
}

std::vector<std::string> grad_check_module_names() {
    return {"linear",  "stem",   "block",      "block_stack", "ctm",
            "mta",     "deconv", "classifier", "model",       "corrupted"};
}

GradCheckReport grad_check_module(const std::string& name, uint64_t seed) {
    Rng rng(Rng::derive(seed, 0xc0de));

    if (name == "linear" || name == "corrupted") {
        nn::Linear layer(6, 4);
        layer.init(rng);
        nn::Parameter input;
        input.value = random_tensor({5, 6}, rng);
        input.grad = Tensor::zeros({5, 6});
        const Tensor w = random_tensor({5, 4}, rng);
        const bool corrupt = name == "corrupted";
        auto loss_fn = [&, corrupt](ad::Graph& g) {
            ad::Var out = layer.forward(g, nn::use(g, input));
            if (corrupt) out = buggy_scale(out);
            return ad::dot_const(out, w);
        };
        std::vector<nn::Parameter*> params{&layer.weight, &layer.bias, &input};
        return grad_check(loss_fn, params);
    }

    if (name == "stem") {
        nn::Conv2d conv(3, 8, 7, 4, 3);
        nn::LayerNorm norm(8);
        conv.init(rng);
        const Tensor image = random_tensor({32 * 32, 3}, rng, 0.3);
        const Tensor w = random_tensor({8 * 8, 8}, rng);
        auto loss_fn = [&](ad::Graph& g) {
            ad::Var out = norm.forward(g, conv.forward(g, g.constant(image), 32, 32));
            return ad::dot_const(out, w);
        };
        std::vector<nn::Parameter*> params{&conv.weight, &conv.bias, &norm.gamma, &norm.beta};
        return grad_check(loss_fn, params);
    }

    if (name == "block" || name == "block_stack") {
        const TokenLayout layout = grid_layout(4, 4);
        TransformerBlock b1(BlockConfig{8, 2, 2, 2});
        TransformerBlock b2(BlockConfig{8, 2, 2, 2});
        b1.init(rng);
        b2.init(rng);
        nn::Parameter input;
        input.value = random_tensor({16, 8}, rng, 0.5);
        input.grad = Tensor::zeros({16, 8});
        const Tensor w = random_tensor({16, 8}, rng);
        const bool stacked = name == "block_stack";
        auto loss_fn = [&, stacked](ad::Graph& g) {
            ad::Var x = b1.forward(g, nn::use(g, input), layout);
            if (stacked) x = b2.forward(g, x, layout);
            return ad::dot_const(x, w);
        };
        std::vector<nn::Parameter*> params{&input};
        b1.visit("b1", [&](const std::string&, nn::Parameter& p) { params.push_back(&p); });
        if (stacked) {
            b2.visit("b2", [&](const std::string&, nn::Parameter& p) { params.push_back(&p); });
        }
        return grad_check(loss_fn, params);
    }

    if (name == "ctm") {
        const TokenLayout layout = grid_layout(4, 4);
        CtmConfig cfg;
        cfg.cluster_fraction = 0.25;
        cfg.knn = 3;
        cfg.inner_block = BlockConfig{16, 2, 2, 2};
        CtmBlock ctm(8, cfg);
        ctm.init(rng);
        nn::Parameter input;
        input.value = random_tensor({16, 8}, rng, 0.5);
        input.grad = Tensor::zeros({16, 8});
        const Tensor w = random_tensor({4, 16}, rng);

        // pin the hard clustering decision before differentiating
        FrozenClustering frozen;
        {
            ad::Graph g;
            auto out = ctm.forward(g, TokenVar{layout, nn::use(g, input)});
            frozen.centers = out.clustering.centers;
            frozen.assignment = out.clustering.assignment;
        }
        auto loss_fn = [&](ad::Graph& g) {
            auto out = ctm.forward(g, TokenVar{layout, nn::use(g, input)}, &frozen);
            return ad::dot_const(out.tokens.features, w);
        };
        std::vector<nn::Parameter*> params{&input};
        ctm.visit("ctm", [&](const std::string&, nn::Parameter& p) { params.push_back(&p); });
        return grad_check(loss_fn, params);
    }

    if (name == "mta") {
        // two hand-built stages: 16 base tokens and 4 merged tokens
        const TokenLayout fine = grid_layout(4, 4);
        TokenLayout coarse = fine;
        coarse.count = 4;
        coarse.stage = 2;
        MergeRecord record;
        record.merged_count = 4;
        record.assignment.resize(16);
        for (int cy = 0; cy < 4; ++cy) {
            for (int cx = 0; cx < 4; ++cx) {
                const int owner = (cy / 2) * 2 + (cx / 2);
                record.assignment[static_cast<size_t>(cy * 4 + cx)] = owner;
                coarse.region_map[static_cast<size_t>(cy * 4 + cx)] = owner;
            }
        }
        record.importance.assign(16, 0.0);

        MtaConfig cfg;
        cfg.agg_channels = 8;
        cfg.out_channels = 3;
        cfg.expansion = 2;
        MtaHead head({8, 16}, cfg);
        head.init(rng);
        nn::Parameter fine_feat, coarse_feat;
        fine_feat.value = random_tensor({16, 8}, rng, 0.5);
        fine_feat.grad = Tensor::zeros({16, 8});
        coarse_feat.value = random_tensor({4, 16}, rng, 0.5);
        coarse_feat.grad = Tensor::zeros({4, 16});
        const Tensor w = random_tensor({16, 3}, rng);
        auto loss_fn = [&](ad::Graph& g) {
            std::vector<TokenVar> stages{TokenVar{fine, nn::use(g, fine_feat)},
                                         TokenVar{coarse, nn::use(g, coarse_feat)}};
            auto out = head.forward(g, stages, {record});
            return ad::dot_const(out.data, w);
        };
        std::vector<nn::Parameter*> params{&fine_feat, &coarse_feat};
        head.visit("mta", [&](const std::string&, nn::Parameter& p) { params.push_back(&p); });
        return grad_check(loss_fn, params);
    }

    if (name == "deconv") {
        TokenLayout layout = grid_layout(4, 4);
        layout.count = 4;
        layout.stage = 2;
        for (int cy = 0; cy < 4; ++cy) {
            for (int cx = 0; cx < 4; ++cx) {
                layout.region_map[static_cast<size_t>(cy * 4 + cx)] = (cy / 2) * 2 + (cx / 2);
            }
        }
        MtaConfig cfg;
        cfg.agg_channels = 8;
        cfg.out_channels = 3;
        DeconvHead head(16, 1, cfg);
        head.init(rng);
        nn::Parameter input;
        input.value = random_tensor({4, 16}, rng, 0.5);
        input.grad = Tensor::zeros({4, 16});
        const Tensor w = random_tensor({16, 3}, rng);
        auto loss_fn = [&](ad::Graph& g) {
            auto out = head.forward(g, TokenVar{layout, nn::use(g, input)});
            return ad::dot_const(out.data, w);
        };
        std::vector<nn::Parameter*> params{&input};
        head.visit("deconv", [&](const std::string&, nn::Parameter& p) { params.push_back(&p); });
        return grad_check(loss_fn, params);
    }

    if (name == "classifier") {
        nn::Linear cls(8, 2);
        cls.init(rng);
        nn::Parameter input;
        input.value = random_tensor({16, 8}, rng, 0.5);
        input.grad = Tensor::zeros({16, 8});
        const Tensor w = random_tensor({1, 2}, rng);
        auto loss_fn = [&](ad::Graph& g) {
            return ad::dot_const(cls.forward(g, ad::mean_rows(nn::use(g, input))), w);
        };
        std::vector<nn::Parameter*> params{&cls.weight, &cls.bias, &input};
        return grad_check(loss_fn, params);
    }

    if (name == "model") {
        // end-to-end composition: stem + stage blocks + CTM + MTA head
        TCFormer model(micro_config(HeadKind::mta));
        model.init(seed);
        Rng img_rng(Rng::derive(seed, 7));
        const Tensor image = random_tensor({32 * 32, 3}, img_rng, 0.3);
        const Tensor w = random_tensor({64, 3}, img_rng);

        TCFormer::FrozenForward frozen;
        {
            ad::Graph g;
            auto fwd = model.forward(g, image, 32, 32);
            for (const auto& c : fwd.clusterings) {
                frozen.ctms.push_back({c.centers, c.assignment});
            }
        }
        auto loss_fn = [&](ad::Graph& g) {
            auto fwd = model.forward(g, image, 32, 32, &frozen);
            return ad::dot_const(fwd.head_out, w);
        };
        return grad_check(loss_fn, model.parameters(), 3e-4, 8);
    }

    throw InvalidInputError("unknown gradient-check module: " + name);
}

}  // namespace tcformer
