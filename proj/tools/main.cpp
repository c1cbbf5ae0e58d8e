#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "tcformer/harness.hpp"
#include "tcformer/io.hpp"
#include "tcformer/run_config.hpp"
#include "tcformer/visualize.hpp"

namespace fs = std::filesystem;
using namespace tcformer;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string preset;
    std::string head;
    std::string ctm;
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "run configuration file (JSON)");
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--preset", flags.preset, "model preset: light|base|large|mini");
    cmd->add_option("--head", flags.head, "head: mta|deconv|cls");
    cmd->add_option("--ctm", flags.ctm, "token merge mode: dpcknn|topk|strided");
    cmd->add_option("--seed", flags.seed, "random seed")->each([&](const std::string&) {
        flags.seed_set = true;
    });
}

// flags > config file > defaults
RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_path.empty()) cfg = RunConfig::from_json_file(flags.config_path);
    if (!flags.preset.empty()) cfg.preset = flags.preset;
    if (!flags.head.empty()) cfg.head = parse_head(flags.head);
    if (!flags.ctm.empty()) cfg.ctm_mode = parse_ctm_mode(flags.ctm);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.seed_set) cfg.seed = flags.seed;
    return cfg;
}

int cmd_cluster(const std::string& points_path, int m, int k, const std::string& out_path) {
    const io::CsvTable table = io::read_csv(points_path);
    check_input(!table.rows.empty(), points_path + ": no data rows");
    const Index n = static_cast<Index>(table.rows.size());
    const Index d = static_cast<Index>(table.rows.front().size());
    Tensor features({n, d});
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) {
            features.at(i, j) = table.rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
    }
    const auto result = dpc::cluster(features, m, k);

    std::vector<std::vector<double>> rows;
    std::vector<bool> is_center(static_cast<size_t>(n), false);
    for (int c : result.centers) is_center[static_cast<size_t>(c)] = true;
    for (Index i = 0; i < n; ++i) {
        rows.push_back({static_cast<double>(i),
                        static_cast<double>(result.assignment[static_cast<size_t>(i)]),
                        result.density[static_cast<size_t>(i)],
                        result.indicator[static_cast<size_t>(i)],
                        result.score[static_cast<size_t>(i)],
                        is_center[static_cast<size_t>(i)] ? 1.0 : 0.0});
    }
    io::write_csv(out_path, {"point_index", "cluster_id", "density", "indicator", "score",
                             "is_center"},
                  rows);
    std::printf("clustered %lld points into %d clusters -> %s\n",
                static_cast<long long>(n), m, out_path.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::printf("generating %d train / %d eval samples at %dx%d (seed %llu)\n",
                cfg.train_count, cfg.eval_count, cfg.resolution, cfg.resolution,
                static_cast<unsigned long long>(cfg.seed));
    const auto train_set = generate_dataset(cfg.seed, cfg.train_count, cfg.resolution);
    const auto eval_set = generate_dataset(cfg.seed + 1, cfg.eval_count, cfg.resolution);

    TCFormer model(cfg.model_config());
    model.init(cfg.seed);
    std::printf("model: %s, %ld parameters\n", cfg.preset.c_str(), model.param_count());

    TrainConfig tc;
    tc.steps = cfg.steps;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.learning_rate;
    tc.weight_decay = cfg.weight_decay;
    tc.seed = cfg.seed;
    tc.log_every = std::max(cfg.steps / 20, 1);
    const TrainResult result = train(model, train_set, tc);

    const std::string ckpt = cfg.out_dir + "/checkpoint.tcf";
    io::save_model(ckpt, model);
    {
        std::ofstream rc(cfg.out_dir + "/run_config.json");
        rc << cfg.to_json() << "\n";
    }
    std::vector<std::vector<double>> loss_rows;
    for (size_t i = 0; i < result.losses.size(); ++i) {
        loss_rows.push_back({static_cast<double>(i), result.losses[i],
                             i < result.probe_losses.size() ? result.probe_losses[i] : 0.0});
    }
    io::write_csv(cfg.out_dir + "/loss_curve.csv", {"step", "batch_loss", "probe_loss"},
                  loss_rows);
    io::plot_series_png(cfg.out_dir + "/loss_curve.png",
                        result.probe_losses.empty() ? result.losses : result.probe_losses);

    const double pck = evaluate_pck(model, eval_set, 0.1);
    std::printf("final loss %.6f  eval PCK@0.1 %.4f\n", result.losses.back(), pck);
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const RunConfig& cfg) {
    TCFormer model = io::load_model(checkpoint);
    const auto eval_set = generate_dataset(cfg.seed + 1, cfg.eval_count, cfg.resolution);
    const double pck = evaluate_pck(model, eval_set, 0.1);
    const DensityReport density = token_density_report(model, eval_set);
    std::printf("PCK@0.1 %.4f on %zu samples\n", pck, eval_set.size());
    std::printf("token density  detail %.4f  body %.4f  background %.4f  ratio %.2f\n",
                density.detail, density.body, density.background,
                density.detail_to_background);
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        io::write_csv(cfg.out_dir + "/eval_report.csv",
                      {"pck_0_1", "density_detail", "density_body", "density_background",
                       "density_ratio"},
                      {{pck, density.detail, density.body, density.background,
                        density.detail_to_background}});
    }
    return 0;
}

int cmd_visualize(const std::string& checkpoint, const std::string& image_path,
                  uint64_t sample_seed, const std::string& out_dir) {
    TCFormer model = io::load_model(checkpoint);
    Tensor image;
    int h = 0, w = 0;
    if (!image_path.empty()) {
        const io::Image8 png = io::read_png(image_path);
        image = image_to_tensor(png);
        h = png.h;
        w = png.w;
    } else {
        const auto samples = generate_dataset(sample_seed, 1, 64);
        image = samples[0].image;
        h = samples[0].h;
        w = samples[0].w;
    }
    fs::create_directories(out_dir);

    ad::Graph g;
    const auto fwd = model.forward(g, image, h, w);
    std::vector<io::Image8> overlays;
    for (size_t s = 0; s < fwd.stage_tokens.size(); ++s) {
        overlays.push_back(region_overlay(fwd.stage_tokens[s].layout, image, h, w));
        const std::string path = out_dir + "/stage" + std::to_string(s + 1) + ".png";
        io::write_png(path, overlays.back());
        std::printf("stage %zu: %d tokens -> %s\n", s + 1, fwd.stage_tokens[s].layout.count,
                    path.c_str());
    }
    io::write_png(out_dir + "/stages.png", overlay_strip(overlays));
    std::printf("composite: %s/stages.png\n", out_dir.c_str());
    return 0;
}

int cmd_params(const RunConfig& cfg, int resolution, bool bench) {
    const ModelConfig mc = cfg.model_config();
    TCFormer model(mc);

    // group parameters by module key (stem / stages.s / ctm.s / head ...)
    std::map<std::string, long> params;
    std::vector<std::string> order;
    model.visit_params([&](const std::string& name, nn::Parameter& p) {
        std::string key = name.substr(0, name.find('.'));
        if (key == "stages" || key == "ctm" || key == "downsample") {
            key = name.substr(0, name.find('.', key.size() + 1));
        }
        if (!params.count(key)) order.push_back(key);
        params[key] += p.value.numel();
    });
    std::map<std::string, double> flops;
    for (const auto& [name, f] : TCFormer::flop_breakdown(mc, resolution, resolution)) {
        flops[name] += f;
    }

    std::printf("%-16s %14s %14s\n", "module", "params", "flops");
    long total_params = 0;
    double total_flops = 0.0;
    for (const auto& key : order) {
        total_params += params[key];
        total_flops += flops.count(key) ? flops[key] : 0.0;
        std::printf("%-16s %14ld %14.0f\n", key.c_str(), params[key],
                    flops.count(key) ? flops[key] : 0.0);
    }
    std::printf("%-16s %14ld %14.0f\n", "total", total_params, total_flops);
    std::printf("total: %.2fM params, %.2fG flops at %dx%d\n", total_params / 1e6,
                total_flops / 1e9, resolution, resolution);

    if (bench) {
        TCFormer bench_model(mc);
        bench_model.init(cfg.seed);
        Rng rng(cfg.seed);
        Tensor image({static_cast<Index>(resolution) * resolution, 3});
        for (Index i = 0; i < image.numel(); ++i) image[i] = rng.uniform();
        reset_ctm_profile();
        const auto start = std::chrono::steady_clock::now();
        const int iters = 5;
        for (int i = 0; i < iters; ++i) {
            ad::Graph g;
            bench_model.forward(g, image, resolution, resolution);
        }
        const double total =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("cluster+merge: %.1f%% of forward time (%d iters, %.3fs total)\n",
                    100.0 * ctm_cluster_merge_seconds() / total, iters, total);
    }
    return 0;
}

int cmd_gradcheck(const std::string& module, uint64_t seed) {
    std::vector<std::string> names =
        module == "all" ? grad_check_module_names() : std::vector<std::string>{module};
    bool all_ok = true;
    for (const auto& name : names) {
        const GradCheckReport report = grad_check_module(name, seed);
        const bool expect_fail = name == "corrupted";
        const bool ok = expect_fail ? report.max_rel_error > 1e-2 : report.passed();
        all_ok = all_ok && ok;
        std::printf("[%s] %-12s max rel error %.3e over %ld coords%s\n", ok ? "PASS" : "FAIL",
                    name.c_str(), report.max_rel_error, report.checked_coords,
                    expect_fail ? " (negative control, must exceed 1e-2)" : "");
    }
    if (!all_ok) throw NumericError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token clustering transformer workbench"};
    app.require_subcommand(1);

    // cluster
    auto* cluster_cmd = app.add_subcommand("cluster", "density-peaks clustering of a CSV of points");
    std::string points_path, cluster_out = "clusters.csv";
    int cluster_m = 2, cluster_k = 5;
    cluster_cmd->add_option("points", points_path, "CSV file, one point per row")->required();
    cluster_cmd->add_option("--clusters,-M", cluster_m, "number of clusters")->required();
    cluster_cmd->add_option("--k", cluster_k, "nearest-neighbor count for local density");
    cluster_cmd->add_option("--out", cluster_out, "output CSV");

    // train / eval
    auto* train_cmd = app.add_subcommand("train", "train on the synthetic keypoint task");
    CommonFlags train_flags;
    add_common(train_cmd, train_flags);
    int opt_steps = -1, opt_batch = -1, opt_count = -1, opt_res = -1;
    double opt_lr = -1.0, opt_wd = -1.0;
    train_cmd->add_option("--steps", opt_steps, "training steps");
    train_cmd->add_option("--batch-size", opt_batch, "batch size");
    train_cmd->add_option("--lr", opt_lr, "learning rate");
    train_cmd->add_option("--weight-decay", opt_wd, "weight decay");
    train_cmd->add_option("--samples", opt_count, "training sample count");
    train_cmd->add_option("--resolution", opt_res, "image resolution");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (PCK + diagnostics)");
    CommonFlags eval_flags;
    std::string eval_ckpt;
    add_common(eval_cmd, eval_flags);
    eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint path")->required();

    // visualize
    auto* vis_cmd = app.add_subcommand("visualize", "per-stage token region overlays");
    std::string vis_ckpt, vis_image, vis_out = "overlays";
    uint64_t vis_seed = 0;
    vis_cmd->add_option("checkpoint", vis_ckpt, "checkpoint path")->required();
    vis_cmd->add_option("--image", vis_image, "input PNG (8-bit RGB)");
    vis_cmd->add_option("--seed", vis_seed, "synthetic sample seed when no image is given");
    vis_cmd->add_option("--out", vis_out, "output directory");

    // params
    auto* params_cmd = app.add_subcommand("params", "parameter and flop accounting");
    CommonFlags params_flags;
    int params_res = 224;
    bool params_bench = false;
    add_common(params_cmd, params_flags);
    params_cmd->add_option("--resolution", params_res, "input resolution for flop counting");
    params_cmd->add_flag("--bench", params_bench, "time the cluster+merge share of a forward");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string grad_module = "all";
    uint64_t grad_seed = 0;
    grad_cmd->add_option("--module", grad_module, "module name or 'all'");
    grad_cmd->add_option("--seed", grad_seed, "random seed");

    try {
        app.parse(argc, argv);
        if (cluster_cmd->parsed()) return cmd_cluster(points_path, cluster_m, cluster_k,
                                                      cluster_out);
        if (train_cmd->parsed()) {
            RunConfig cfg = resolve_config(train_flags);
            if (opt_steps > 0) cfg.steps = opt_steps;
            if (opt_batch > 0) cfg.batch_size = opt_batch;
            if (opt_lr > 0) cfg.learning_rate = opt_lr;
            if (opt_wd >= 0) cfg.weight_decay = opt_wd;
            if (opt_count > 0) cfg.train_count = opt_count;
            if (opt_res > 0) cfg.resolution = opt_res;
            return cmd_train(cfg);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, resolve_config(eval_flags));
        if (vis_cmd->parsed()) return cmd_visualize(vis_ckpt, vis_image, vis_seed, vis_out);
        if (params_cmd->parsed()) {
            return cmd_params(resolve_config(params_flags), params_res, params_bench);
        }
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_module, grad_seed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitInput;
    } catch (const MissingArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitMissing;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const InvalidInputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
