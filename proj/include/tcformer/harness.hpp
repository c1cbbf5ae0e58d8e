#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tcformer/dataset.hpp"
#include "tcformer/model.hpp"

namespace tcformer {

// --- keypoint decoding / PCK -----------------------------------------------------

struct DecodedKeypoint {
    double x = 0.0, y = 0.0;  // pixel units
};

// Argmax cell plus a quarter-cell offset toward the larger neighbor.
// heatmaps: (base_h*base_w) x K. Ties resolve to the lowest cell index.
std::vector<DecodedKeypoint> decode_keypoints(const Tensor& heatmaps, int base_h, int base_w,
                                              int cell_size);

// Fraction of annotated keypoints whose decoded prediction lies within
// threshold_fraction * image size of the ground truth.
double pck_score(const std::vector<SyntheticSample>& samples,
                 const std::vector<Tensor>& predicted_heatmaps, double threshold_fraction);

double evaluate_pck(const TCFormer& model, const std::vector<SyntheticSample>& samples,
                    double threshold_fraction);

// --- training ---------------------------------------------------------------------

struct TrainConfig {
    int steps = 2000;
    int batch_size = 4;
    double lr = 2e-3;
    double weight_decay = 1e-2;
    double lr_min_fraction = 0.05;  // cosine decay floor
    uint64_t seed = 0;
    int probe_count = 8;       // fixed probe batch measured every step; 0 disables
    double probe_ema = 0.99;   // Polyak average of the weights used for probing
    int log_every = 0;         // 0 = silent
};

struct TrainResult {
    std::vector<double> losses;        // per-step minibatch loss
    std::vector<double> probe_losses;  // per-step probe-batch loss of the
                                       // Polyak-averaged weights: constant data
                                       // and averaged parameters, so convergence
                                       // shows without minibatch noise
};

// Heatmap regression with decoupled-weight-decay Adam. Deterministic given
// the seed; throws NumericError when the loss stops being finite.
TrainResult train(TCFormer& model, const std::vector<SyntheticSample>& data,
                  const TrainConfig& cfg,
                  const std::function<void(int, double)>& on_step = nullptr);

// Means of consecutive `window`-step blocks of the loss curve.
std::vector<double> smoothed_curve(const std::vector<double>& losses, int window);
bool is_nonincreasing(const std::vector<double>& values);

// --- token density diagnostics ------------------------------------------------------

struct DensityReport {
    double detail = 0.0;      // tokens per base cell over detail-part cells
    double body = 0.0;
    double background = 0.0;
    double detail_to_background = 0.0;
};

// Tokens-per-unit-area of the final-stage token regions, split by the
// dataset's cell classes. A cell contributes 1/|region| tokens.
DensityReport token_density_report(const TCFormer& model,
                                   const std::vector<SyntheticSample>& samples);

// --- gradient checking ----------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    long checked_coords = 0;
    bool passed(double tol = 1e-5) const { return max_rel_error < tol; }
};

// Central finite differences against the analytic gradients of a scalar loss.
// loss_fn must rebuild the forward pass from the current parameter values on
// every call (any hard decisions inside must be frozen by the caller).
// Checks up to max_coords evenly spaced coordinates per tensor.
GradCheckReport grad_check(const std::function<ad::Var(ad::Graph&)>& loss_fn,
                           const std::vector<nn::Parameter*>& params, double eps = 3e-4,
                           long max_coords = 48);

// Named module checks used by both the test suite and the CLI. Names:
// linear, stem, block, block_stack, ctm, mta, deconv, classifier, corrupted.
// "corrupted" is the negative control and must *fail*.
GradCheckReport grad_check_module(const std::string& name, uint64_t seed);
std::vector<std::string> grad_check_module_names();

}  // namespace tcformer
