#pragma once

// Independent reference implementations used only by the test suites.
// Everything here is deliberately brute-force / high-precision and never
// calls into the code paths it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "glt/matrix.hpp"

namespace oracle {

// central finite differences of a scalar function of a flat parameter vector
inline glt::Vector finite_difference_grad(const std::function<double(const glt::Vector&)>& f,
                                          glt::Vector point, double eps = 1e-5) {
    glt::Vector grad(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + eps;
        const double fp = f(point);
        point[i] = orig - eps;
        const double fm = f(point);
        point[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

inline double max_relative_error(const glt::Vector& got, const glt::Vector& want,
                                 double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max(std::abs(want[i]), floor);
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

// Entropy-regularized transport reference: plain alternating scaling on
// long doubles, run to a fixed (large) iteration count. Only usable where
// P^lambda stays representable, which the small test instances guarantee.
inline glt::Matrix reference_entropic_ot(const glt::Matrix& p, const glt::Vector& row_marginal,
                                         const glt::Vector& col_marginal, double lambda,
                                         std::size_t iterations = 400) {
    const std::size_t k = p.rows;
    const std::size_t n = p.cols;
    std::vector<long double> pl(k * n);
    for (std::size_t i = 0; i < pl.size(); ++i)
        pl[i] = std::pow(static_cast<long double>(std::max(p.data[i], 1e-300)),
                         static_cast<long double>(lambda));
    std::vector<long double> alpha(k, 1.0L), beta(n, 1.0L);
    for (std::size_t it = 0; it < iterations; ++it) {
        for (std::size_t j = 0; j < k; ++j) {
            long double s = 0.0L;
            for (std::size_t i = 0; i < n; ++i) s += pl[j * n + i] * beta[i];
            alpha[j] = static_cast<long double>(row_marginal[j]) / s;
        }
        for (std::size_t i = 0; i < n; ++i) {
            long double s = 0.0L;
            for (std::size_t j = 0; j < k; ++j) s += pl[j * n + i] * alpha[j];
            beta[i] = static_cast<long double>(col_marginal[i]) / s;
        }
    }
    glt::Matrix q(k, n);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < n; ++i)
            q.at(j, i) = static_cast<double>(alpha[j] * pl[j * n + i] * beta[i]);
    return q;
}

// <Q,-log P> - (1/lambda) H(Q), evaluated in long double
inline long double entropic_objective(const glt::Matrix& q, const glt::Matrix& p, double lambda) {
    long double obj = 0.0L;
    for (std::size_t i = 0; i < q.data.size(); ++i) {
        const long double qi = q.data[i];
        if (qi <= 0.0L) continue;
        obj += qi * -std::log(static_cast<long double>(std::max(p.data[i], 1e-300)));
        obj += qi * std::log(qi) / static_cast<long double>(lambda);
    }
    return obj;
}

// For K=N=2 with marginals (w, c) the polytope has one degree of freedom:
//   Q(t) = [[t, w0-t], [c0-t, 1-w0-c0+t]],  t in [max(0, w0+c0-1), min(w0,c0)]
// Minimize the entropic objective by dense grid search plus ternary
// refinement (the objective is strictly convex in t).
inline glt::Matrix minimize_2x2_by_grid(const glt::Matrix& p, const glt::Vector& row_marginal,
                                        const glt::Vector& col_marginal, double lambda) {
    const double w0 = row_marginal[0];
    const double c0 = col_marginal[0];
    const double lo = std::max(0.0, w0 + c0 - 1.0);
    const double hi = std::min(w0, c0);
    auto q_of = [&](double t) {
        glt::Matrix q(2, 2);
        q.at(0, 0) = t;
        q.at(0, 1) = w0 - t;
        q.at(1, 0) = c0 - t;
        q.at(1, 1) = 1.0 - w0 - c0 + t;
        return q;
    };
    auto value = [&](double t) { return entropic_objective(q_of(t), p, lambda); };

    double best_t = lo;
    long double best_v = value(lo);
    const int grid = 4000;
    for (int g = 1; g <= grid; ++g) {
        const double t = lo + (hi - lo) * g / grid;
        const long double v = value(t);
        if (v < best_v) {
            best_v = v;
            best_t = t;
        }
    }
    double a = std::max(lo, best_t - (hi - lo) / grid);
    double b = std::min(hi, best_t + (hi - lo) / grid);
    for (int it = 0; it < 200; ++it) {
        const double m1 = a + (b - a) / 3.0;
        const double m2 = b - (b - a) / 3.0;
        if (value(m1) < value(m2))
            b = m2;
        else
            a = m1;
    }
    return q_of(0.5 * (a + b));
}

// exhaustive best one-to-one assignment: permutation maximizing sum of log P
inline std::vector<int> best_assignment_exhaustive(const glt::Matrix& p) {
    const std::size_t k = p.rows;
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_v = -std::numeric_limits<double>::infinity();
    do {
        double v = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            v += std::log(std::max(p.at(static_cast<std::size_t>(perm[i]), i), 1e-300));
        if (v > best_v) {
            best_v = v;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;  // best[i] = row assigned to column i
}

// brute-force average precision for one query: walk the ranking produced by
// an independent full sort and apply the textbook definition
inline double brute_force_ap(const std::vector<double>& sims, const std::vector<bool>& relevant) {
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        if (!relevant[order[pos]]) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    return hits == 0 ? -1.0 : ap / static_cast<double>(hits);
}

// transitive closure of density reachability: repeated relaxation over the
// eps-neighborhood graph restricted to core points
inline std::vector<int> brute_force_dbscan(const std::vector<std::vector<double>>& dist,
                                           double eps, std::size_t min_pts) {
    const std::size_t n = dist.size();
    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t cnt = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (dist[i][j] <= eps) ++cnt;
        core[i] = cnt >= min_pts;
    }
    std::vector<int> labels(n, -1);
    int next = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (!core[s] || labels[s] >= 0) continue;
        labels[s] = next;
        bool grew = true;
        while (grew) {
            grew = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (!core[i] || labels[i] != next) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    if (core[j] && labels[j] < 0 && dist[i][j] <= eps) {
                        labels[j] = next;
                        grew = true;
                    }
                }
            }
        }
        ++next;
    }
    // border points reach the nearest core within eps
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        double best = std::numeric_limits<double>::infinity();
        int lab = -1;
        for (std::size_t j = 0; j < n; ++j)
            if (core[j] && dist[i][j] <= eps && dist[i][j] < best) {
                best = dist[i][j];
                lab = labels[j];
            }
        labels[i] = lab;
    }
    return labels;
}

// do two labelings define the same partition (up to renaming)?
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::vector<std::pair<int, int>> fwd, bwd;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] < 0) != (b[i] < 0)) return false;
        if (a[i] < 0) continue;
        fwd.emplace_back(a[i], b[i]);
        bwd.emplace_back(b[i], a[i]);
    }
    std::sort(fwd.begin(), fwd.end());
    fwd.erase(std::unique(fwd.begin(), fwd.end()), fwd.end());
    std::sort(bwd.begin(), bwd.end());
    bwd.erase(std::unique(bwd.begin(), bwd.end()), bwd.end());
    auto injective = [](const std::vector<std::pair<int, int>>& m) {
        for (std::size_t i = 1; i < m.size(); ++i)
            if (m[i].first == m[i - 1].first) return false;
        return true;
    };
    return injective(fwd) && injective(bwd);
}

}  // namespace oracle
