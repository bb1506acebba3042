#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "glt/matrix.hpp"
#include "glt/prototypes.hpp"

namespace glt {

struct LossWeights {
    double lambda_tri = 1.0;
    double lambda_g = 1.0;
    double lambda_wcl = 0.05;
    double triplet_margin = 0.3;
    double wcl_margin = 0.3;
    double wcl_scale = 32.0;
};

// Similarities of one anchor against a set of samples, split by pseudo label.
struct PairSplit {
    Vector positive_sims;
    Vector negative_sims;
};

struct GroupCeResult {
    double loss = 0.0;
    Matrix grad_features;                  // N x D, summed over groups
    std::vector<Matrix> grad_prototypes;   // per group, K_m x D
};

// Multi-granularity soft cross-entropy: sum over groups of the per-group
// mean CE against the (column-normalized) soft pseudo labels. All-zero q
// columns mark samples excluded from that group (clustering noise) and
// contribute neither loss nor gradient.
inline GroupCeResult group_ce(const std::vector<PrototypeGroup>& groups, const Matrix& features,
                              const std::vector<Matrix>& q_cols_per_group) {
    if (groups.size() != q_cols_per_group.size())
        throw ShapeMismatchError("group_ce: group count mismatch");
    GroupCeResult out;
    out.grad_features = Matrix(features.rows, features.cols, 0.0);
    for (std::size_t m = 0; m < groups.size(); ++m) {
        const Matrix& q = q_cols_per_group[m];
        if (q.rows != groups[m].c.rows || q.cols != features.rows)
            throw ShapeMismatchError("group_ce: q shape mismatch");

        std::vector<std::size_t> included;
        for (std::size_t i = 0; i < q.cols; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < q.rows; ++j) s += q.at(j, i);
            if (s > 0.0) included.push_back(i);
        }
        Matrix grad_c(groups[m].c.rows, groups[m].c.cols, 0.0);
        if (!included.empty()) {
            Matrix sub_f(included.size(), features.cols);
            Matrix sub_q(q.rows, included.size());
            for (std::size_t t = 0; t < included.size(); ++t) {
                sub_f.set_row(t, features.row(included[t]));
                for (std::size_t j = 0; j < q.rows; ++j) sub_q.at(j, t) = q.at(j, included[t]);
            }
            PrototypeGrad g = grad_parametric(groups[m], sub_f, sub_q);
            out.loss += g.loss;
            grad_c = std::move(g.grad_c);
            for (std::size_t t = 0; t < included.size(); ++t)
                for (std::size_t c = 0; c < features.cols; ++c)
                    out.grad_features.at(included[t], c) += g.grad_features.at(t, c);
        }
        out.grad_prototypes.push_back(std::move(grad_c));
    }
    return out;
}

struct TripletResult {
    double loss = 0.0;
    Matrix grad_features;
    std::size_t active_anchors = 0;  // anchors with at least one positive and negative
};

// Batch-hard triplet in cosine-similarity space:
//   (1/B') sum_i max(0, s^n_i - s^p_i + margin)
// s^p_i is the smallest similarity among same-label samples (hardest
// positive), s^n_i the largest among different-label samples. Gradients flow
// only through each anchor's selected pair; the hinge subgradient at the
// kink is taken as 0. Anchors lacking a positive or a negative, and anchors
// labeled noise (< 0), are skipped.
inline TripletResult triplet_batch_hard(const Matrix& features, const std::vector<int>& labels,
                                        double margin) {
    if (labels.size() != features.rows)
        throw ShapeMismatchError("triplet_batch_hard: label count mismatch");
    const std::size_t b = features.rows;
    TripletResult out;
    out.grad_features = Matrix(b, features.cols, 0.0);

    struct Selected {
        std::size_t pos, neg;
        bool active;
    };
    std::vector<Selected> picks;
    picks.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        Selected sel{0, 0, false};
        if (labels[i] >= 0) {
            double worst_pos = std::numeric_limits<double>::infinity();
            double best_neg = -std::numeric_limits<double>::infinity();
            bool has_pos = false, has_neg = false;
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) continue;
                const double sim = dot(features.row(i), features.row(j));
                if (labels[j] == labels[i]) {
                    if (sim < worst_pos) {
                        worst_pos = sim;
                        sel.pos = j;
                    }
                    has_pos = true;
                } else {
                    if (sim > best_neg) {
                        best_neg = sim;
                        sel.neg = j;
                    }
                    has_neg = true;
                }
            }
            sel.active = has_pos && has_neg;
        }
        picks.push_back(sel);
        if (sel.active) ++out.active_anchors;
    }
    if (out.active_anchors == 0) return out;

    const double inv_b = 1.0 / static_cast<double>(out.active_anchors);
    for (std::size_t i = 0; i < b; ++i) {
        if (!picks[i].active) continue;
        const std::size_t jp = picks[i].pos;
        const std::size_t jn = picks[i].neg;
        const double sp = dot(features.row(i), features.row(jp));
        const double sn = dot(features.row(i), features.row(jn));
        const double hinge = sn - sp + margin;
        if (hinge <= 0.0) continue;
        out.loss += inv_b * hinge;
        for (std::size_t c = 0; c < features.cols; ++c) {
            out.grad_features.at(i, c) += inv_b * (features.at(jn, c) - features.at(jp, c));
            out.grad_features.at(jn, c) += inv_b * features.at(i, c);
            out.grad_features.at(jp, c) -= inv_b * features.at(i, c);
        }
    }
    return out;
}

struct WclResult {
    double loss = 0.0;
    Vector grad_pos;
    Vector grad_neg;
};

// Pair-weighted contrastive loss over a positive/negative similarity split:
//   log[1 + (sum_j exp(gamma a^n_j (s^n_j - m))) (sum_k exp(-gamma a^p_k (s^p_k - 1 + m)))]
// with self-paced weights a^n = [m + s^n]_+, a^p = [1 + m - s^p]_+ treated
// as constants during differentiation. Empty positives or negatives give a
// zero loss.
inline WclResult weighted_contrastive(const PairSplit& split, double margin, double scale) {
    WclResult out;
    out.grad_pos.assign(split.positive_sims.size(), 0.0);
    out.grad_neg.assign(split.negative_sims.size(), 0.0);
    if (split.positive_sims.empty() || split.negative_sims.empty()) return out;

    double sum_neg = 0.0, sum_pos = 0.0;
    Vector exp_neg(split.negative_sims.size()), exp_pos(split.positive_sims.size());
    Vector w_neg(split.negative_sims.size()), w_pos(split.positive_sims.size());
    for (std::size_t j = 0; j < split.negative_sims.size(); ++j) {
        const double s = split.negative_sims[j];
        w_neg[j] = std::max(margin + s, 0.0);
        exp_neg[j] = std::exp(scale * w_neg[j] * (s - margin));
        sum_neg += exp_neg[j];
    }
    for (std::size_t kk = 0; kk < split.positive_sims.size(); ++kk) {
        const double s = split.positive_sims[kk];
        w_pos[kk] = std::max(1.0 + margin - s, 0.0);
        exp_pos[kk] = std::exp(-scale * w_pos[kk] * (s - 1.0 + margin));
        sum_pos += exp_pos[kk];
    }
    const double z = 1.0 + sum_neg * sum_pos;
    out.loss = std::log(z);
    for (std::size_t j = 0; j < split.negative_sims.size(); ++j)
        out.grad_neg[j] = scale * w_neg[j] * exp_neg[j] * sum_pos / z;
    for (std::size_t kk = 0; kk < split.positive_sims.size(); ++kk)
        out.grad_pos[kk] = -scale * w_pos[kk] * exp_pos[kk] * sum_neg / z;
    return out;
}

inline double total_loss(double l_tri, double l_g, double l_wcl, const LossWeights& w) {
    return w.lambda_tri * l_tri + w.lambda_g * l_g + w.lambda_wcl * l_wcl;
}

struct SourceLossResult {
    double loss = 0.0;
    double ce = 0.0;
    double tri = 0.0;
    Matrix grad_logits;    // B x K, cross-entropy part
    Matrix grad_features;  // B x D, triplet part
};

// Supervised objective for labeled batches: hard-label cross-entropy over a
// classification head plus the batch-hard triplet, equally weighted.
inline SourceLossResult source_supervised_loss(const Matrix& features, const Matrix& logits,
                                               const std::vector<int>& labels,
                                               double triplet_margin) {
    if (labels.size() != logits.rows || features.rows != logits.rows)
        throw ShapeMismatchError("source_supervised_loss: batch size mismatch");
    const std::size_t b = logits.rows;
    const std::size_t k = logits.cols;
    SourceLossResult out;
    out.grad_logits = Matrix(b, k, 0.0);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw ShapeMismatchError("source_supervised_loss: label out of range");
        Vector probs = softmax_temp(logits.row(i), 1.0);
        out.ce -= inv_b * std::log(std::max(probs[static_cast<std::size_t>(labels[i])], 1e-300));
        for (std::size_t j = 0; j < k; ++j) {
            const double target = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
            out.grad_logits.at(i, j) = inv_b * (probs[j] - target);
        }
    }
    TripletResult tri = triplet_batch_hard(features, labels, triplet_margin);
    out.tri = tri.loss;
    out.grad_features = std::move(tri.grad_features);
    out.loss = out.ce + out.tri;
    return out;
}

}  // namespace glt
