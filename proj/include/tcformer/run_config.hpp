#pragma once

#include <cstdint>
#include <string>

#include "tcformer/model.hpp"

namespace tcformer {

// Experiment configuration shared by the train/eval commands. Sections of the
// JSON document: model, ctm, head, data, train, output. Unknown keys are
// rejected. Command-line flags override file values which override defaults.
struct RunConfig {
    // model
    std::string preset = "mini";
    HeadKind head = HeadKind::mta;
    // ctm
    CtmMode ctm_mode = CtmMode::dpc_knn;
    double ctm_fraction = 0.25;
    int ctm_k = 5;
    // data
    uint64_t seed = 0;
    int train_count = 500;
    int eval_count = 100;
    int resolution = 64;
    // train
    int steps = 2000;
    int batch_size = 4;
    double learning_rate = 2e-3;
    double weight_decay = 1e-2;
    // output
    std::string out_dir = "out";

    static RunConfig from_json_file(const std::string& path);
    static RunConfig from_json(const std::string& text);
    std::string to_json() const;

    // Model built from the preset with the run's head/ctm settings applied.
    ModelConfig model_config() const;
};

HeadKind parse_head(const std::string& s);
CtmMode parse_ctm_mode(const std::string& s);

}  // namespace tcformer
