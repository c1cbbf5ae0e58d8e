#pragma once

#include <vector>

#include "tcformer/tensor.hpp"

namespace tcformer::dpc {

// Output of k-nearest-neighbor density peaks clustering over token features.
struct ClusterResult {
    std::vector<double> density;    // rho, in (0, 1]
    std::vector<double> indicator;  // delta, distance to nearest denser token
    std::vector<double> score;      // rho * delta
    std::vector<int> centers;       // M token indices, descending score
    std::vector<int> assignment;    // per token, center rank in [0, M)
    std::vector<int> parent;        // argmin of the indicator; -1 for the top-density token
};

// Full N x N squared Euclidean distance matrix, plain left-to-right
// accumulation over feature dimensions so results are reproducible bit for bit.
Tensor pairwise_sq_distances(const Tensor& features);

// For each token, the k smallest squared distances to *other* tokens, sorted
// ascending with ties broken by lower token index. k is clamped to N-1.
void knn_sq_distances(const Tensor& features, int k, Tensor* distances,
                      std::vector<int>* neighbors);

// rho_i = exp(-mean of the k nearest squared distances).
std::vector<double> local_density(const Tensor& features, int k);

// delta_i = min distance to any token with higher density (index tie-break:
// equal density counts as higher when the other index is lower); the unique
// top token gets the max distance instead. parent[i] = argmin, -1 for the top.
void distance_indicator(const Tensor& features, const std::vector<double>& density,
                        std::vector<double>* indicator, std::vector<int>* parent);

// The M tokens with the largest rho*delta, descending, ties to lower index.
std::vector<int> select_centers(const std::vector<double>& density,
                                const std::vector<double>& indicator, int m);

// Nearest center by squared feature distance; ties to lower center rank;
// centers always map to their own rank.
std::vector<int> assign_clusters(const Tensor& features, const std::vector<int>& centers);

ClusterResult cluster(const Tensor& features, int m, int k);

}  // namespace tcformer::dpc
