#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "glt/matrix.hpp"

namespace glt {

// Row/column mass targets for the assignment matrix. Both sides sum to 1;
// the row marginal defaults to the equipartition 1/K which is what prevents
// the collapse where every sample takes the same label.
struct TransportPolytope {
    Vector row_marginal;  // K entries, per-class mass
    Vector col_marginal;  // N entries, per-sample mass
};

inline TransportPolytope uniform_polytope(std::size_t k, std::size_t n) {
    if (k == 0 || n == 0) throw std::invalid_argument("uniform_polytope: empty dimension");
    TransportPolytope poly;
    poly.row_marginal.assign(k, 1.0 / static_cast<double>(k));
    poly.col_marginal.assign(n, 1.0 / static_cast<double>(n));
    return poly;
}

inline void validate_polytope(const TransportPolytope& poly) {
    double sw = 0.0, sc = 0.0;
    for (double v : poly.row_marginal) {
        if (!(v > 0.0)) throw std::invalid_argument("polytope: row marginal entries must be > 0");
        sw += v;
    }
    for (double v : poly.col_marginal) {
        if (!(v > 0.0)) throw std::invalid_argument("polytope: col marginal entries must be > 0");
        sc += v;
    }
    if (std::abs(sw - 1.0) > 1e-10 || std::abs(sc - 1.0) > 1e-10)
        throw std::invalid_argument("polytope: marginals must each sum to 1");
}

struct SinkhornConfig {
    double lambda = 25.0;    // sharpness of the transport; low values smooth toward uniform
    double tol = 0.1;        // L1 change in the row scaling vector
    std::size_t max_iter = 1000;
};

struct SinkhornResult {
    Matrix q;                // K x N, row sums ~ w, col sums ~ c
    std::size_t iters = 0;
    double marginal_err = 0.0;  // max L-inf deviation of row/col sums
    bool converged = false;
};

namespace detail {

// log(sum_i exp(x_i)), max-shifted
inline double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

}  // namespace detail

// Alternating scaling iteration for the entropy-regularized transport
//   min_{Q in H(w,c)}  <Q, -log P> - (1/lambda) H(Q),   H(Q) = -sum q log q
// whose minimizer has the form Q = diag(alpha) P^lambda diag(beta).
// Runs entirely in the log domain; P^lambda underflows in doubles well
// before lambda reaches useful values. The stopping test uses alpha with
// its largest entry scaled to 1 (the scaling pair is only defined up to a
// common factor, and raw alpha entries overflow for large lambda).
inline SinkhornResult sinkhorn(const Matrix& p, const TransportPolytope& poly,
                               const SinkhornConfig& cfg) {
    const std::size_t k = p.rows;
    const std::size_t n = p.cols;
    if (poly.row_marginal.size() != k || poly.col_marginal.size() != n)
        throw ShapeMismatchError("sinkhorn: polytope does not match P");
    validate_polytope(poly);
    if (!(cfg.lambda > 0.0) || !(cfg.tol > 0.0))
        throw std::invalid_argument("sinkhorn: lambda and tol must be > 0");

    // lambda * log P, clamped away from zero
    Matrix logp(k, n);
    for (std::size_t i = 0; i < p.data.size(); ++i)
        logp.data[i] = cfg.lambda * std::log(std::max(p.data[i], 1e-300));

    Vector log_w(k), log_c(n);
    for (std::size_t j = 0; j < k; ++j) log_w[j] = std::log(poly.row_marginal[j]);
    for (std::size_t i = 0; i < n; ++i) log_c[i] = std::log(poly.col_marginal[i]);

    // alpha_0 = (1/N) 1, beta_0 = (1/K) 1; the first full update overwrites
    // both, so only the scale matters
    Vector log_alpha(k, -std::log(static_cast<double>(n)));
    Vector log_beta(n, -std::log(static_cast<double>(k)));
    Vector prev_alpha(k, 1.0);  // gauge-fixed alpha_0: all entries equal

    SinkhornResult res;
    Vector scratch(std::max(k, n));
    std::size_t iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        // alpha_k = w_k / [P^lambda beta]_k
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < n; ++i) scratch[i] = logp.at(j, i) + log_beta[i];
            log_alpha[j] = log_w[j] - detail::log_sum_exp({scratch.data(), n});
        }
        const double shift = *std::max_element(log_alpha.begin(), log_alpha.end());
        double change = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double a = std::exp(log_alpha[j] - shift);
            change += std::abs(a - prev_alpha[j]);
            prev_alpha[j] = a;
        }
        // beta_i = c_i / [alpha^T P^lambda]_i
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) scratch[j] = logp.at(j, i) + log_alpha[j];
            log_beta[i] = log_c[i] - detail::log_sum_exp({scratch.data(), k});
        }
        if (change < cfg.tol) {
            res.converged = true;
            ++iter;
            break;
        }
    }
    res.iters = iter;

    res.q = Matrix(k, n);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < n; ++i)
            res.q.at(j, i) = std::exp(log_alpha[j] + logp.at(j, i) + log_beta[i]);

    double err = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += res.q.at(j, i);
        err = std::max(err, std::abs(s - poly.row_marginal[j]));
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += res.q.at(j, i);
        err = std::max(err, std::abs(s - poly.col_marginal[i]));
    }
    res.marginal_err = err;
    return res;
}

// K x N joint probability matrix: column i is softmax(C f_i / tau) / N.
inline Matrix joint_probs(const Matrix& features, const Matrix& prototypes, double tau) {
    if (features.cols != prototypes.cols)
        throw ShapeMismatchError("joint_probs: embedding dims differ");
    const std::size_t n = features.rows;
    const std::size_t k = prototypes.rows;
    Matrix p(k, n);
    Vector logits(k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) logits[j] = dot(prototypes.row(j), features.row(i));
        Vector col = softmax_temp(logits, tau);
        for (std::size_t j = 0; j < k; ++j) p.at(j, i) = col[j] / static_cast<double>(n);
    }
    return p;
}

namespace detail {
inline void require_unit_rows(const Matrix& m, const char* who) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double n = norm2(m.row(r));
        if (std::abs(n - 1.0) > 1e-6)
            throw std::invalid_argument(std::string(who) + ": rows must be unit-norm");
    }
}
}  // namespace detail

// Refined soft pseudo labels for one prototype group.
inline SinkhornResult refine(const Matrix& features, const Matrix& prototypes, double tau,
                             const TransportPolytope& poly, const SinkhornConfig& cfg) {
    detail::require_unit_rows(features, "refine(features)");
    detail::require_unit_rows(prototypes, "refine(prototypes)");
    return sinkhorn(joint_probs(features, prototypes, tau), poly, cfg);
}

// argmax label per column, ties to the lowest row index
inline std::vector<int> harden(const Matrix& q) {
    std::vector<int> labels(q.cols, 0);
    for (std::size_t i = 0; i < q.cols; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (std::size_t j = 0; j < q.rows; ++j) {
            if (q.at(j, i) > best) {
                best = q.at(j, i);
                best_k = static_cast<int>(j);
            }
        }
        labels[i] = best_k;
    }
    return labels;
}

// <Q, -log P> - (1/lambda) H(Q) with 0 log 0 = 0; the value sinkhorn minimizes
inline double transport_objective(const Matrix& q, const Matrix& p, double lambda) {
    if (!q.same_shape(p)) throw ShapeMismatchError("transport_objective: shape mismatch");
    double cost = 0.0, neg_entropy = 0.0;
    for (std::size_t i = 0; i < q.data.size(); ++i) {
        const double qi = q.data[i];
        if (qi <= 0.0) continue;
        cost += qi * -std::log(std::max(p.data[i], 1e-300));
        neg_entropy += qi * std::log(qi);
    }
    return cost + neg_entropy / lambda;
}

// Shannon entropy of the assignment matrix, for diagnostics
inline double assignment_entropy(const Matrix& q) {
    double h = 0.0;
    for (double v : q.data)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace glt
