#include <algorithm>
#include <cmath>

#include "tcformer/harness.hpp"

namespace tcformer {

std::vector<DecodedKeypoint> decode_keypoints(const Tensor& heatmaps, int base_h, int base_w,
                                              int cell_size) {
    check_input(heatmaps.rows() == static_cast<Index>(base_h) * base_w,
                "heatmap grid does not match resolution");
    std::vector<DecodedKeypoint> out;
    for (Index k = 0; k < heatmaps.cols(); ++k) {
        Index best = 0;
        double best_v = heatmaps.at(0, k);
        for (Index p = 1; p < heatmaps.rows(); ++p) {
            if (heatmaps.at(p, k) > best_v) {
                best_v = heatmaps.at(p, k);
                best = p;
            }
        }
        const int cy = static_cast<int>(best) / base_w;
        const int cx = static_cast<int>(best) % base_w;
        auto value = [&](int y, int x) {
            return heatmaps.at(static_cast<Index>(y) * base_w + x, k);
        };
        double off_x = 0.0, off_y = 0.0;
        if (cx > 0 && cx + 1 < base_w) {
            off_x = value(cy, cx + 1) > value(cy, cx - 1) ? 0.25 : -0.25;
        }
        if (cy > 0 && cy + 1 < base_h) {
            off_y = value(cy + 1, cx) > value(cy - 1, cx) ? 0.25 : -0.25;
        }
        out.push_back({(cx + 0.5 + off_x) * cell_size, (cy + 0.5 + off_y) * cell_size});
    }
    return out;
}

double pck_score(const std::vector<SyntheticSample>& samples,
                 const std::vector<Tensor>& predicted_heatmaps, double threshold_fraction) {
    check_input(samples.size() == predicted_heatmaps.size(),
                "sample/prediction count mismatch");
    long total = 0, correct = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const SyntheticSample& s = samples[i];
        const double threshold = threshold_fraction * std::max(s.h, s.w);
        const auto decoded =
            decode_keypoints(predicted_heatmaps[i], s.base_h, s.base_w, s.w / s.base_w);
        for (const auto& kp : s.keypoints) {
            const auto& pred = decoded[static_cast<size_t>(kp.slot)];
            total++;
            if (std::hypot(pred.x - kp.x, pred.y - kp.y) <= threshold) correct++;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate_pck(const TCFormer& model, const std::vector<SyntheticSample>& samples,
                    double threshold_fraction) {
    std::vector<Tensor> predictions;
    predictions.reserve(samples.size());
    for (const auto& s : samples) {
        ad::Graph g;
        auto fwd = model.forward(g, s.image, s.h, s.w);
        predictions.push_back(fwd.head_out.val());
    }
    return pck_score(samples, predictions, threshold_fraction);
}

DensityReport token_density_report(const TCFormer& model,
                                   const std::vector<SyntheticSample>& samples) {
    double sums[3] = {0.0, 0.0, 0.0};
    long counts[3] = {0, 0, 0};
    for (const auto& s : samples) {
        ad::Graph g;
        auto fwd = model.forward(g, s.image, s.h, s.w);
        const TokenLayout& layout = fwd.stage_tokens.back().layout;
        const auto sizes = layout.region_sizes();
        for (size_t cell = 0; cell < s.cell_class.size(); ++cell) {
            const int cls = static_cast<int>(s.cell_class[cell]);
            sums[cls] += 1.0 / sizes[static_cast<size_t>(layout.region_map[cell])];
            counts[cls]++;
        }
    }
    DensityReport report;
    report.background = counts[0] ? sums[0] / counts[0] : 0.0;
    report.body = counts[1] ? sums[1] / counts[1] : 0.0;
    report.detail = counts[2] ? sums[2] / counts[2] : 0.0;
    report.detail_to_background =
        report.background > 0.0 ? report.detail / report.background : 0.0;
    return report;
}

std::vector<double> smoothed_curve(const std::vector<double>& losses, int window) {
    std::vector<double> out;
    for (size_t start = 0; start + static_cast<size_t>(window) <= losses.size();
         start += static_cast<size_t>(window)) {
        double acc = 0.0;
        for (int i = 0; i < window; ++i) acc += losses[start + static_cast<size_t>(i)];
        out.push_back(acc / window);
    }
    return out;
}

bool is_nonincreasing(const std::vector<double>& values) {
    for (size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[i - 1]) return false;
    }
    return true;
}

}  // namespace tcformer
