#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "glt/matrix.hpp"
#include "glt/rng.hpp"

namespace glt {

inline constexpr int kNoiseLabel = -1;

struct GroupSpec {
    enum class Mode { kmeans, dbscan };
    Mode mode = Mode::kmeans;
    std::vector<std::size_t> kmeans_k_list;
    std::vector<double> dbscan_eps_list;
    std::size_t dbscan_min_pts = 4;
};

struct HardLabeling {
    std::vector<int> labels;   // per sample, in [0, num_clusters) or kNoiseLabel
    std::size_t num_clusters = 0;
    Matrix centroids;          // num_clusters x D, unit rows
};

// distance used throughout: 1 - cosine similarity; rows are unit-norm, so
// this is 1 - dot
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    return 1.0 - dot(a, b);
}

namespace detail {

inline Matrix normalized_class_means(const Matrix& features, const std::vector<int>& labels,
                                     std::size_t k, const Matrix* fallback) {
    Matrix centroids(k, features.cols, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        if (labels[i] < 0) continue;
        const auto lab = static_cast<std::size_t>(labels[i]);
        for (std::size_t c = 0; c < features.cols; ++c)
            centroids.at(lab, c) += features.at(i, c);
        ++counts[lab];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) {
            if (fallback != nullptr)
                for (std::size_t c = 0; c < features.cols; ++c)
                    centroids.at(j, c) = fallback->at(j, c);
            continue;
        }
        const double n = norm2(centroids.row(j));
        if (n < kZeroNormThreshold) {
            // mean collapsed to zero; keep previous direction if available
            if (fallback != nullptr)
                for (std::size_t c = 0; c < features.cols; ++c)
                    centroids.at(j, c) = fallback->at(j, c);
            continue;
        }
        for (std::size_t c = 0; c < features.cols; ++c) centroids.at(j, c) /= n;
    }
    return centroids;
}

}  // namespace detail

// Spherical k-means: Lloyd iterations on cosine distance with k-means++
// seeding. Empty clusters are repaired by stealing the point currently
// farthest from its assigned centroid, which keeps the objective
// non-increasing.
inline HardLabeling kmeans(const Matrix& features, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100) {
    const std::size_t n = features.rows;
    if (n < k) throw TooFewSamplesError("kmeans: fewer samples than clusters");
    if (k == 0) throw TooFewSamplesError("kmeans: k must be >= 1");
    Rng rng(seed);

    // k-means++ seeding, weights proportional to squared cosine distance
    Matrix centroids(k, features.cols);
    std::vector<double> min_dist(n, 2.0);
    {
        const std::size_t first = rng.uniform_index(n);
        centroids.set_row(0, features.row(first));
        for (std::size_t j = 1; j < k; ++j) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = cosine_distance(features.row(i), centroids.row(j - 1));
                min_dist[i] = std::min(min_dist[i], std::max(d, 0.0));
                total += min_dist[i] * min_dist[i];
            }
            std::size_t chosen = 0;
            if (total <= 0.0) {
                chosen = rng.uniform_index(n);
            } else {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                chosen = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += min_dist[i] * min_dist[i];
                    if (acc >= target) {
                        chosen = i;
                        break;
                    }
                }
            }
            centroids.set_row(j, features.row(chosen));
        }
    }

    std::vector<int> labels(n, 0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // assignment, ties to the lowest cluster index
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            double best = -std::numeric_limits<double>::infinity();
            int best_k = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const double sim = dot(features.row(i), centroids.row(j));
                if (sim > best) {
                    best = sim;
                    best_k = static_cast<int>(j);
                }
            }
            if (labels[i] != best_k) {
                labels[i] = best_k;
                changed = true;
            }
        }

        // repair empty clusters before the mean update
        std::vector<std::size_t> counts(k, 0);
        for (int lab : labels) ++counts[static_cast<std::size_t>(lab)];
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] > 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto li = static_cast<std::size_t>(labels[i]);
                if (counts[li] <= 1) continue;  // do not empty another cluster
                const double d = cosine_distance(features.row(i), centroids.row(li));
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            --counts[static_cast<std::size_t>(labels[worst])];
            labels[worst] = static_cast<int>(j);
            ++counts[j];
            centroids.set_row(j, features.row(worst));
            changed = true;
        }

        centroids = detail::normalized_class_means(features, labels, k, &centroids);
        if (!changed) break;
    }

    HardLabeling out;
    out.labels = std::move(labels);
    out.num_clusters = k;
    out.centroids = std::move(centroids);
    return out;
}

// sum over samples of cosine distance to the assigned centroid
inline double kmeans_objective(const Matrix& features, const HardLabeling& labeling) {
    double obj = 0.0;
    for (std::size_t i = 0; i < features.rows; ++i) {
        if (labeling.labels[i] < 0) continue;
        obj += cosine_distance(features.row(i),
                               labeling.centroids.row(static_cast<std::size_t>(labeling.labels[i])));
    }
    return obj;
}

// Classic DBSCAN on cosine distance. Clusters are connected components of
// core points; border points attach to the nearest core point. Unreachable
// points get kNoiseLabel.
inline HardLabeling dbscan(const Matrix& features, double eps, std::size_t min_pts) {
    if (!(eps > 0.0)) throw std::invalid_argument("dbscan: eps must be > 0");
    const std::size_t n = features.rows;
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (cosine_distance(features.row(i), features.row(j)) <= eps)
                neighbors[i].push_back(j);  // includes i itself

    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbors[i].size() >= min_pts;

    // union core points that are eps-neighbors
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        for (std::size_t j : neighbors[i])
            if (core[j]) parent[find(i)] = find(j);
    }

    // canonical cluster ids in order of the smallest member index
    std::vector<int> labels(n, kNoiseLabel);
    std::vector<int> root_label(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        const std::size_t r = find(i);
        if (root_label[r] < 0) root_label[r] = next++;
        labels[i] = root_label[r];
    }

    // border points: nearest core point within eps; exact distance ties break
    // on the core point's feature vector so the result is order-independent
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        double best_d = std::numeric_limits<double>::infinity();
        std::size_t best_core = n;
        for (std::size_t j : neighbors[i]) {
            if (!core[j]) continue;
            const double d = cosine_distance(features.row(i), features.row(j));
            if (d < best_d ||
                (d == best_d && best_core < n &&
                 std::lexicographical_compare(features.row(j).begin(), features.row(j).end(),
                                              features.row(best_core).begin(),
                                              features.row(best_core).end()))) {
                best_d = d;
                best_core = j;
            }
        }
        if (best_core < n) labels[i] = labels[best_core];
    }

    HardLabeling out;
    out.num_clusters = static_cast<std::size_t>(next);
    out.centroids = detail::normalized_class_means(features, labels, out.num_clusters, nullptr);
    out.labels = std::move(labels);
    return out;
}

// One independent clustering per granularity, deterministic under the seed.
inline std::vector<HardLabeling> make_groups(const Matrix& features, const GroupSpec& spec,
                                             std::uint64_t seed) {
    std::vector<HardLabeling> groups;
    if (spec.mode == GroupSpec::Mode::kmeans) {
        if (spec.kmeans_k_list.empty())
            throw std::invalid_argument("make_groups: empty k list");
        for (std::size_t m = 0; m < spec.kmeans_k_list.size(); ++m)
            groups.push_back(kmeans(features, spec.kmeans_k_list[m], mix_seed(seed, m)));
    } else {
        if (spec.dbscan_eps_list.empty())
            throw std::invalid_argument("make_groups: empty eps list");
        for (double eps : spec.dbscan_eps_list)
            groups.push_back(dbscan(features, eps, spec.dbscan_min_pts));
    }
    return groups;
}

// Desk-scale default granularities: {N/16, N/8, N/4, N/2}, deduplicated,
// each clamped to [1, N].
inline std::vector<std::size_t> default_k_list(std::size_t n) {
    std::vector<std::size_t> ks;
    for (std::size_t div : {16, 8, 4, 2}) {
        std::size_t k = std::max<std::size_t>(1, n / div);
        k = std::min(k, n);
        if (ks.empty() || ks.back() != k) ks.push_back(k);
    }
    return ks;
}

// CSV export: sample_index,group_index,label (noise = -1)
inline void write_labelings_csv(const std::vector<HardLabeling>& groups, std::ostream& os) {
    for (std::size_t m = 0; m < groups.size(); ++m)
        for (std::size_t i = 0; i < groups[m].labels.size(); ++i)
            os << i << ',' << m << ',' << groups[m].labels[i] << '\n';
}

}  // namespace glt
