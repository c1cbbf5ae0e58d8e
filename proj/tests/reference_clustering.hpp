#pragma once

// Quadratic-time reference implementation of KNN density peaks clustering,
// written independently of the library code path. Shares only the documented
// conventions: squared distances accumulated left to right over dimensions,
// equal-density ties resolved toward the lower index, center selection by
// descending rho*delta with index tie-break, assignment to the nearest center
// by squared distance with rank tie-break.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace reference {

struct Clustering {
    std::vector<double> density, indicator, score;
    std::vector<int> centers, assignment, parent;
};

inline double sq_dist(const double* a, const double* b, long d) {
    double acc = 0.0;
    for (long t = 0; t < d; ++t) {
        const double diff = a[t] - b[t];
        acc += diff * diff;
    }
    return acc;
}

inline Clustering cluster(const std::vector<double>& features, long n, long d, int m, int k) {
    Clustering out;
    const auto at = [&](long i) { return features.data() + i * d; };
    const int kk = static_cast<int>(std::min<long>(k, n - 1));

    out.density.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        std::vector<std::pair<double, long>> dists;
        for (long j = 0; j < n; ++j) {
            if (j != i) dists.emplace_back(sq_dist(at(i), at(j), d), j);
        }
        std::sort(dists.begin(), dists.end());
        double acc = 0.0;
        for (int t = 0; t < kk; ++t) acc += dists[static_cast<size_t>(t)].first;
        out.density[static_cast<size_t>(i)] = std::exp(-acc / kk);
    }

    out.indicator.resize(static_cast<size_t>(n));
    out.parent.assign(static_cast<size_t>(n), -1);
    for (long i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        double worst = 0.0;
        long best_j = -1;
        for (long j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dist = std::sqrt(sq_dist(at(i), at(j), d));
            worst = std::max(worst, dist);
            const bool denser = out.density[static_cast<size_t>(j)] >
                                    out.density[static_cast<size_t>(i)] ||
                                (out.density[static_cast<size_t>(j)] ==
                                     out.density[static_cast<size_t>(i)] &&
                                 j < i);
            if (denser && dist < best) {
                best = dist;
                best_j = j;
            }
        }
        out.indicator[static_cast<size_t>(i)] = best_j >= 0 ? best : worst;
        out.parent[static_cast<size_t>(i)] = static_cast<int>(best_j);
    }

    out.score.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        out.score[static_cast<size_t>(i)] =
            out.density[static_cast<size_t>(i)] * out.indicator[static_cast<size_t>(i)];
    }

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return out.score[static_cast<size_t>(a)] > out.score[static_cast<size_t>(b)];
    });
    out.centers.assign(order.begin(), order.begin() + m);

    out.assignment.assign(static_cast<size_t>(n), -1);
    for (int rank = 0; rank < m; ++rank) {
        out.assignment[static_cast<size_t>(out.centers[static_cast<size_t>(rank)])] = rank;
    }
    for (long i = 0; i < n; ++i) {
        if (out.assignment[static_cast<size_t>(i)] >= 0) continue;
        double best = std::numeric_limits<double>::infinity();
        int best_rank = 0;
        for (int rank = 0; rank < m; ++rank) {
            const double dist = sq_dist(at(i), at(out.centers[static_cast<size_t>(rank)]), d);
            if (dist < best) {
                best = dist;
                best_rank = rank;
            }
        }
        out.assignment[static_cast<size_t>(i)] = best_rank;
    }
    return out;
}

}  // namespace reference
