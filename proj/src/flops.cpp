#include "tcformer/model.hpp"

namespace tcformer {

// Complexity model for TCFormer forward passes.
//
// Convention: one unit per multiply-accumulate, the convention under which the
// standard backbone figures quoted alongside (ResNet50 4.1G, DeiT-S 4.6G at
// 224x224) reproduce. Counted terms:
//   linear, N positions, in -> out:        N * in * out
//   conv, P output positions, kernel k:    P * k^2 * in * out
//   depthwise 3x3, N positions:            N * C * 9
//   attention (all heads, both matmuls):   2 * Nq * Nk * C
//   cluster distance matrix:               N^2 * D  (dense form over all
//       ordered pairs, as in the batched formulation; the CPU implementation
//       halves this by symmetry)
//   top-k center assignment:               N * M * D
//   importance-weighted merge:             N * D
// Normalizations, activations, softmax and pooling are element-wise or
// O(N*C) and are not counted.
double TCFormer::flop_count(const ModelConfig& cfg, int img_h, int img_w) {
    double total = 0.0;
    for (const auto& [name, flops] : flop_breakdown(cfg, img_h, img_w)) total += flops;
    return total;
}

std::vector<std::pair<std::string, double>> TCFormer::flop_breakdown(const ModelConfig& cfg,
                                                                     int img_h, int img_w) {
    cfg.validate();
    const auto n = cfg.token_schedule(img_h, img_w);
    const int stages = cfg.stage_count();

    auto lin = [](double positions, double in, double out) { return positions * in * out; };
    auto conv = [](double positions, int k, double in, double out) {
        return positions * k * k * in * out;
    };
    auto attn = [](double nq, double nk, double c) { return 2.0 * nq * nk * c; };

    // one transformer block with nq query tokens and nkv key/value tokens
    // rasterized on a (res_h x res_w) grid
    auto block_flops = [&](const BlockConfig& b, double nq, double nkv, double res_h,
                           double res_w) {
        const double c = b.channels;
        const double hidden = c * b.expansion;
        double keys = nkv;
        double total = 0.0;
        if (b.reduction > 1) {
            keys = (res_h / b.reduction) * (res_w / b.reduction);
            total += conv(keys, b.reduction, c, c);  // strided reduction conv
        }
        total += lin(nq, c, c);        // queries
        total += lin(keys, c, 2 * c);  // keys and values
        total += attn(nq, keys, c);
        total += lin(nq, c, c);  // output projection
        total += lin(nq, c, hidden) + nq * hidden * 9.0 + lin(nq, hidden, c);
        return total;
    };

    std::vector<std::pair<std::string, double>> rows;
    const double base_h = img_h / 4.0, base_w = img_w / 4.0;
    rows.emplace_back("stem", conv(base_h * base_w, cfg.stem_kernel, 3,
                                   cfg.stages[0].block.channels));

    for (int s = 0; s < stages; ++s) {
        const auto& stage = cfg.stages[static_cast<size_t>(s)];
        const double res_h = base_h / (1 << s), res_w = base_w / (1 << s);
        rows.emplace_back("stages." + std::to_string(s),
                          stage.depth * block_flops(stage.block,
                                                    static_cast<double>(n[static_cast<size_t>(s)]),
                                                    static_cast<double>(n[static_cast<size_t>(s)]),
                                                    res_h, res_w));

        if (s + 1 == stages) break;
        const double n_in = static_cast<double>(n[static_cast<size_t>(s)]);
        const double n_out = static_cast<double>(n[static_cast<size_t>(s + 1)]);
        const double c_in = stage.block.channels;
        const BlockConfig& next = cfg.stages[static_cast<size_t>(s + 1)].block;
        const double c_out = next.channels;
        if (cfg.ctm_mode == CtmMode::strided) {
            rows.emplace_back("downsample." + std::to_string(s),
                              conv(res_h / 2 * (res_w / 2), 3, c_in, c_out));
            continue;
        }
        // projection: strided conv + pointwise skip + pointwise mix + score
        double ctm = conv(res_h / 2 * (res_w / 2), 3, c_in, c_out);
        ctm += lin(n_in, c_in, c_out);
        ctm += lin(n_in, c_out, c_out);
        ctm += lin(n_in, c_out, 1);
        // hard clustering decision
        if (cfg.ctm_mode == CtmMode::topk) {
            ctm += n_in * n_out * c_out;
        } else {
            ctm += n_in * n_in * c_out;
        }
        ctm += n_in * c_out;  // weighted merge
        // refinement block: merged queries against pre-merge keys/values
        ctm += block_flops(next, n_out, n_in, res_h, res_w);
        rows.emplace_back("ctm." + std::to_string(s), ctm);
    }

    const double c_last = cfg.stages.back().block.channels;
    double head = 0.0;
    switch (cfg.head) {
        case HeadKind::classification:
            head = lin(1, c_last, cfg.num_classes);
            break;
        case HeadKind::mta: {
            const double a = cfg.mta.agg_channels;
            head += lin(static_cast<double>(n.back()), c_last, a);
            const BlockConfig level{cfg.mta.agg_channels, cfg.mta.heads, cfg.mta.expansion, 1};
            for (int s = stages - 2; s >= 0; --s) {
                const double ns = static_cast<double>(n[static_cast<size_t>(s)]);
                head += lin(ns, cfg.stages[static_cast<size_t>(s)].block.channels, a);
                head += block_flops(level, ns, ns, base_h / (1 << s), base_w / (1 << s));
            }
            head += lin(base_h * base_w, a, cfg.mta.out_channels);
            break;
        }
        case HeadKind::deconv: {
            const double a = cfg.mta.agg_channels;
            double positions = base_h / (1 << (stages - 1)) * (base_w / (1 << (stages - 1)));
            double in_ch = c_last;
            for (int level = 0; level < stages - 1; ++level) {
                head += conv(positions, 4, in_ch, a);
                positions *= 4.0;
                in_ch = a;
            }
            head += lin(base_h * base_w, a, cfg.mta.out_channels);
            break;
        }
    }
    rows.emplace_back("head", head);
    return rows;
}

}  // namespace tcformer
