#pragma once

#include <cstddef>
#include <vector>

#include "glt/label_transfer.hpp"
#include "glt/matrix.hpp"

namespace glt {

enum class PrototypeMode { nonparametric, parametric };

// One granularity's class prototypes. Rows stay unit-norm so the logits in
// the temperature softmax are cosine similarities.
struct PrototypeGroup {
    Matrix c;  // K x D, unit rows
    double tau = 0.05;
    PrototypeMode mode = PrototypeMode::parametric;
    std::size_t group_id = 0;
};

// K x N matrix whose column i is softmax(C f_i / tau); columns sum to 1
inline Matrix prototype_probs(const PrototypeGroup& group, const Matrix& features) {
    if (features.cols != group.c.cols)
        throw ShapeMismatchError("prototype_probs: embedding dims differ");
    const std::size_t n = features.rows;
    const std::size_t k = group.c.rows;
    Matrix p(k, n);
    Vector logits(k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) logits[j] = dot(group.c.row(j), features.row(i));
        Vector col = softmax_temp(logits, group.tau);
        for (std::size_t j = 0; j < k; ++j) p.at(j, i) = col[j];
    }
    return p;
}

// c_k <- normalized mean of the features labeled k; empty classes keep the
// previous prototype; noise labels (< 0) are ignored
inline PrototypeGroup update_nonparametric(const PrototypeGroup& group, const Matrix& features,
                                           const std::vector<int>& hard_labels) {
    if (hard_labels.size() != features.rows)
        throw ShapeMismatchError("update_nonparametric: label count mismatch");
    const std::size_t k = group.c.rows;
    PrototypeGroup out = group;
    Matrix sums(k, features.cols, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const int lab = hard_labels[i];
        if (lab < 0) continue;
        if (static_cast<std::size_t>(lab) >= k)
            throw std::invalid_argument("update_nonparametric: label out of range");
        for (std::size_t c = 0; c < features.cols; ++c)
            sums.at(static_cast<std::size_t>(lab), c) += features.at(i, c);
        ++counts[static_cast<std::size_t>(lab)];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) continue;
        const double n = norm2(sums.row(j));
        if (n < kZeroNormThreshold) continue;
        for (std::size_t c = 0; c < features.cols; ++c) out.c.at(j, c) = sums.at(j, c) / n;
    }
    return out;
}

struct PrototypeGrad {
    double loss = 0.0;       // -(1/N) sum_i sum_k q_ki log p_ki
    Matrix grad_c;           // K x D
    Matrix grad_features;    // N x D
};

namespace detail {
inline void validate_distribution_columns(const Matrix& q, const char* who) {
    for (std::size_t i = 0; i < q.cols; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < q.rows; ++j) {
            const double v = q.at(j, i);
            if (v < 0.0) throw InvalidDistributionError(std::string(who) + ": negative entry");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6)
            throw InvalidDistributionError(std::string(who) + ": column does not sum to 1");
    }
}
}  // namespace detail

// Exact gradient of the soft cross-entropy between the prototype softmax and
// target distributions q (one distribution per column). Per sample i:
//   d/df_i   = (1/(N tau)) C^T (p_i - q_i)
//   d/dc_k  += (1/(N tau)) (p_ki - q_ki) f_i
inline PrototypeGrad grad_parametric(const PrototypeGroup& group, const Matrix& features,
                                     const Matrix& q_cols) {
    const std::size_t n = features.rows;
    const std::size_t k = group.c.rows;
    if (q_cols.rows != k || q_cols.cols != n)
        throw ShapeMismatchError("grad_parametric: q shape mismatch");
    detail::validate_distribution_columns(q_cols, "grad_parametric");

    PrototypeGrad out;
    out.grad_c = Matrix(k, group.c.cols, 0.0);
    out.grad_features = Matrix(n, features.cols, 0.0);
    const Matrix p = prototype_probs(group, features);
    const double inv_ntau = 1.0 / (static_cast<double>(n) * group.tau);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double q = q_cols.at(j, i);
            const double pji = p.at(j, i);
            if (q > 0.0) out.loss -= q * std::log(std::max(pji, 1e-300));
            const double diff = (pji - q) * inv_ntau;
            for (std::size_t c = 0; c < features.cols; ++c) {
                out.grad_c.at(j, c) += diff * features.at(i, c);
                out.grad_features.at(i, c) += diff * group.c.at(j, c);
            }
        }
    }
    out.loss /= static_cast<double>(n);
    return out;
}

}  // namespace glt
