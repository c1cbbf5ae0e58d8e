#include <cmath>
#include <cstdio>

#include "tcformer/harness.hpp"

namespace tcformer {

TrainResult train(TCFormer& model, const std::vector<SyntheticSample>& data,
                  const TrainConfig& cfg, const std::function<void(int, double)>& on_step) {
    check_input(!data.empty(), "training needs at least one sample");
    check_input(cfg.steps >= 1 && cfg.batch_size >= 1, "invalid training schedule");

    auto params = model.parameters();
    nn::AdamW::Config opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(params, opt_cfg);
    Rng batch_rng(Rng::derive(cfg.seed, 0x5eed));

    TrainResult result;
    result.losses.reserve(static_cast<size_t>(cfg.steps));
    constexpr double kPi = 3.14159265358979323846;

    const int probe_count = std::min<int>(cfg.probe_count, static_cast<int>(data.size()));
    std::vector<Tensor> averaged;
    if (probe_count > 0) {
        for (nn::Parameter* p : params) averaged.push_back(p->value);
    }
    auto probe_loss = [&]() {
        for (size_t i = 0; i < params.size(); ++i) {
            averaged[i].vec() = cfg.probe_ema * averaged[i].vec() +
                                (1.0 - cfg.probe_ema) * params[i]->value.vec();
            std::swap(averaged[i], params[i]->value);
        }
        double acc = 0.0;
        for (int i = 0; i < probe_count; ++i) {
            const auto& sample = data[static_cast<size_t>(i)];
            ad::Graph g;
            auto fwd = model.forward(g, sample.image, sample.h, sample.w);
            acc += (fwd.head_out.val().cvec() - sample.target.cvec()).squaredNorm() /
                   static_cast<double>(sample.target.numel());
        }
        for (size_t i = 0; i < params.size(); ++i) std::swap(averaged[i], params[i]->value);
        return acc / probe_count;
    };

    for (int step = 0; step < cfg.steps; ++step) {
        // cosine decay to a small floor keeps late training quiet
        const double progress = static_cast<double>(step) / cfg.steps;
        const double decay = cfg.lr_min_fraction +
                             (1.0 - cfg.lr_min_fraction) * 0.5 * (1.0 + std::cos(kPi * progress));
        opt.set_lr(cfg.lr * decay);

        opt.zero_grad();
        double loss_acc = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& sample = data[static_cast<size_t>(batch_rng.uniform_int(
                static_cast<int>(data.size())))];
            ad::Graph g;
            auto fwd = model.forward(g, sample.image, sample.h, sample.w);
            ad::Var loss = ad::scale(ad::mse_loss(fwd.head_out, sample.target),
                                     1.0 / cfg.batch_size);
            g.backward(loss);
            loss_acc += loss.val()[0];
        }
        if (!std::isfinite(loss_acc)) {
            throw NumericError("training diverged at step " + std::to_string(step) +
                               " (loss not finite)");
        }
        opt.step();
        result.losses.push_back(loss_acc);
        if (probe_count > 0) result.probe_losses.push_back(probe_loss());
        if (on_step) on_step(step, loss_acc);
        if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) {
            std::fprintf(stderr, "step %5d  loss %.6f%s\n", step + 1, loss_acc,
                         probe_count > 0
                             ? ("  probe " + std::to_string(result.probe_losses.back())).c_str()
                             : "");
        }
    }
    return result;
}

}  // namespace tcformer
