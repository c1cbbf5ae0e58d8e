#include "tcformer/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tcformer/errors.hpp"

namespace tcformer::dpc {

namespace {

void validate_features(const Tensor& features) {
    check_input(features.rank() == 2, "features must be an N x D matrix");
    check_input(features.rows() >= 2, "clustering needs at least 2 tokens");
    check_input(features.all_finite(), "features contain non-finite values");
}

std::vector<double> density_from_matrix(const Tensor& d2, int k) {
    const Index n = d2.rows();
    const int kk = std::min<Index>(k, n - 1);
    std::vector<int> order;
    std::vector<double> density(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        order.clear();
        for (Index j = 0; j < n; ++j) {
            if (j != i) order.push_back(static_cast<int>(j));
        }
        std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
            const double da = d2.at(i, a), db = d2.at(i, b);
            return da < db || (da == db && a < b);
        });
        double acc = 0.0;
        for (int t = 0; t < kk; ++t) acc += d2.at(i, order[static_cast<size_t>(t)]);
        density[static_cast<size_t>(i)] = std::exp(-acc / static_cast<double>(kk));
    }
    return density;
}

void indicator_from_matrix(const Tensor& d2, const std::vector<double>& density,
                           std::vector<double>* indicator, std::vector<int>* parent) {
    const Index n = d2.rows();
    indicator->assign(static_cast<size_t>(n), 0.0);
    parent->assign(static_cast<size_t>(n), -1);
    for (Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_j = -1;
        double worst = 0.0;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dist = std::sqrt(d2.at(i, j));
            worst = std::max(worst, dist);
            const bool higher =
                density[static_cast<size_t>(j)] > density[static_cast<size_t>(i)] ||
                (density[static_cast<size_t>(j)] == density[static_cast<size_t>(i)] && j < i);
            if (higher && dist < best) {
                best = dist;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j >= 0) {
            (*indicator)[static_cast<size_t>(i)] = best;
            (*parent)[static_cast<size_t>(i)] = best_j;
        } else {
            (*indicator)[static_cast<size_t>(i)] = worst;  // unique density peak
        }
    }
}

std::vector<int> assign_from_matrix(const Tensor& d2, const std::vector<int>& centers) {
    const Index n = d2.rows();
    std::vector<int> assignment(static_cast<size_t>(n), -1);
    for (size_t rank = 0; rank < centers.size(); ++rank) {
        assignment[static_cast<size_t>(centers[rank])] = static_cast<int>(rank);
    }
    for (Index i = 0; i < n; ++i) {
        if (assignment[static_cast<size_t>(i)] >= 0) continue;  // centers keep their own rank
        double best = std::numeric_limits<double>::infinity();
        int best_rank = 0;
        for (size_t rank = 0; rank < centers.size(); ++rank) {
            const double dist = d2.at(i, centers[rank]);
            if (dist < best) {
                best = dist;
                best_rank = static_cast<int>(rank);
            }
        }
        assignment[static_cast<size_t>(i)] = best_rank;
    }
    return assignment;
}

}  // namespace

Tensor pairwise_sq_distances(const Tensor& features) {
    const Index n = features.rows(), d = features.cols();
    Tensor out({n, n});
    const double* x = features.data();
    for (Index i = 0; i < n; ++i) {
        const double* xi = x + i * d;
        for (Index j = i + 1; j < n; ++j) {
            const double* xj = x + j * d;
            double acc = 0.0;
            for (Index t = 0; t < d; ++t) {
                const double diff = xi[t] - xj[t];
                acc += diff * diff;
            }
            out.at(i, j) = acc;
            out.at(j, i) = acc;
        }
    }
    return out;
}

void knn_sq_distances(const Tensor& features, int k, Tensor* distances,
                      std::vector<int>* neighbors) {
    validate_features(features);
    check_input(k >= 1, "k must be positive");
    const Index n = features.rows();
    const int kk = std::min<Index>(k, n - 1);
    const Tensor d2 = pairwise_sq_distances(features);

    *distances = Tensor({n, kk});
    neighbors->assign(static_cast<size_t>(n) * kk, -1);
    std::vector<int> order(static_cast<size_t>(n) - 1);
    for (Index i = 0; i < n; ++i) {
        order.clear();
        for (Index j = 0; j < n; ++j) {
            if (j != i) order.push_back(static_cast<int>(j));
        }
        std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                          [&](int a, int b) {
                              const double da = d2.at(i, a), db = d2.at(i, b);
                              return da < db || (da == db && a < b);
                          });
        for (int t = 0; t < kk; ++t) {
            distances->at(i, t) = d2.at(i, order[static_cast<size_t>(t)]);
            (*neighbors)[static_cast<size_t>(i * kk + t)] = order[static_cast<size_t>(t)];
        }
    }
}

std::vector<double> local_density(const Tensor& features, int k) {
    validate_features(features);
    check_input(k >= 1, "k must be positive");
    return density_from_matrix(pairwise_sq_distances(features), k);
}

void distance_indicator(const Tensor& features, const std::vector<double>& density,
                        std::vector<double>* indicator, std::vector<int>* parent) {
    validate_features(features);
    check_input(static_cast<Index>(density.size()) == features.rows(),
                "density length mismatch");
    indicator_from_matrix(pairwise_sq_distances(features), density, indicator, parent);
}

std::vector<int> select_centers(const std::vector<double>& density,
                                const std::vector<double>& indicator, int m) {
    const Index n = static_cast<Index>(density.size());
    check_input(density.size() == indicator.size(), "density/indicator length mismatch");
    check_input(m >= 1 && m <= n, "center count out of range");
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = density[static_cast<size_t>(a)] * indicator[static_cast<size_t>(a)];
        const double sb = density[static_cast<size_t>(b)] * indicator[static_cast<size_t>(b)];
        return sa > sb || (sa == sb && a < b);
    });
    order.resize(static_cast<size_t>(m));
    return order;
}

std::vector<int> assign_clusters(const Tensor& features, const std::vector<int>& centers) {
    validate_features(features);
    check_input(!centers.empty(), "centers must be nonempty");
    for (int c : centers) check_input(c >= 0 && c < features.rows(), "center index out of range");
    return assign_from_matrix(pairwise_sq_distances(features), centers);
}

ClusterResult cluster(const Tensor& features, int m, int k) {
    validate_features(features);
    check_input(k >= 1, "k must be positive");
    check_input(m >= 1 && m <= features.rows(), "cluster count out of range");
    const Tensor d2 = pairwise_sq_distances(features);

    ClusterResult result;
    result.density = density_from_matrix(d2, k);
    indicator_from_matrix(d2, result.density, &result.indicator, &result.parent);
    result.score.resize(result.density.size());
    for (size_t i = 0; i < result.density.size(); ++i) {
        result.score[i] = result.density[i] * result.indicator[i];
    }
    result.centers = select_centers(result.density, result.indicator, m);
    result.assignment = assign_from_matrix(d2, result.centers);
    return result;
}

}  // namespace tcformer::dpc
