#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "glt/clustering.hpp"
#include "glt/data_eval.hpp"
#include "glt/encoder.hpp"
#include "glt/label_transfer.hpp"
#include "glt/losses.hpp"
#include "glt/memory_bank.hpp"
#include "glt/prototypes.hpp"

namespace glt {

struct TrainConfig {
    // encoder
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;

    // optimization
    enum class Optimizer { adam, sgd };
    Optimizer optimizer = Optimizer::adam;
    AdamConfig adam;
    double lr = 0.00035;
    std::size_t lr_decay_every = 10;   // pretraining epochs between /10 steps
    double lr_decay_factor = 0.1;

    // source pretraining
    std::size_t epochs_pretrain = 30;
    std::size_t pretrain_iters_per_epoch = 0;  // 0: one pass worth of batches

    // adaptation loop
    std::size_t adapt_epochs = 10;
    std::size_t iters_per_epoch = 0;  // 0: one pass worth of batches
    std::size_t batch_p = 4;          // identities per batch
    std::size_t batch_k = 4;          // instances per identity
    bool interleave_source = true;

    LossWeights weights;
    SinkhornConfig sinkhorn;
    GroupSpec groups;  // empty k list in kmeans mode: desk-scale defaults
    double tau = 0.05;
    PrototypeMode prototype_mode = PrototypeMode::parametric;

    bool refine_enabled = true;
    std::size_t refresh_every = 0;    // refine every this many target iters; 0: each epoch end
    std::size_t recluster_every = 5;  // epochs between re-clusterings; 0: never
    bool refresh_prototypes = true;   // reset prototypes to cluster means before each refinement

    bool use_bank = true;
    std::size_t bank_capacity = 0;  // 0: 8x batch size
    std::size_t bank_group = 0;     // granularity driving the pair split
    std::size_t pk_group = 0;       // granularity driving PK sampling and triplet labels

    std::uint64_t seed = 1;

    std::size_t batch_size() const { return batch_p * batch_k; }
};

struct IterMetrics {
    std::size_t epoch = 0;
    std::size_t iter = 0;
    double l_tri = 0.0;
    double l_g = 0.0;
    double l_wcl = 0.0;
    double total = 0.0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double l_tri = 0.0;
    double l_g = 0.0;
    double l_wcl = 0.0;
    double total = 0.0;
    double source_loss = 0.0;
    bool has_truth = false;
    ClusterMetrics cluster;        // pk_group hardened labels vs. ground-truth ids
    std::size_t refine_iters = 0;  // max over groups at the last refinement
    double refine_marginal_err = 0.0;
    bool refine_ran = false;
    bool refine_converged = true;
};

// P distinct identities, K instances each; identities with fewer than K
// samples are padded by sampling with replacement.
inline std::vector<std::size_t> pk_sample(const std::vector<int>& labels, std::size_t p,
                                          std::size_t k, Rng& rng) {
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= 0) by_id[labels[i]].push_back(i);
    if (by_id.size() < p) throw TooFewIdentitiesError("pk_sample: not enough identities");

    std::vector<int> ids;
    ids.reserve(by_id.size());
    for (const auto& [id, _] : by_id) ids.push_back(id);
    // partial Fisher-Yates for P distinct identities
    for (std::size_t t = 0; t < p; ++t) {
        const std::size_t j = t + rng.uniform_index(ids.size() - t);
        std::swap(ids[t], ids[j]);
    }

    std::vector<std::size_t> batch;
    batch.reserve(p * k);
    for (std::size_t t = 0; t < p; ++t) {
        std::vector<std::size_t>& pool = by_id[ids[t]];
        if (pool.size() >= k) {
            for (std::size_t s = 0; s < k; ++s) {
                const std::size_t j = s + rng.uniform_index(pool.size() - s);
                std::swap(pool[s], pool[j]);
            }
            batch.insert(batch.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
        } else {
            batch.insert(batch.end(), pool.begin(), pool.end());
            for (std::size_t s = pool.size(); s < k; ++s)
                batch.push_back(pool[rng.uniform_index(pool.size())]);
        }
    }
    return batch;
}

namespace detail {

// Adam over one flat parameter vector; used for classifier heads and prototypes.
struct AdamBuf {
    Vector m, v;
    std::int64_t t = 0;

    void step(Vector& params, const Vector& grads, double lr, const AdamConfig& cfg) {
        if (t == 0) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        }
    }
};

inline std::vector<int> remap_identities(const std::vector<int>& raw) {
    std::map<int, int> ids;
    for (int v : raw)
        if (!ids.count(v)) ids.emplace(v, 0);
    int next = 0;
    for (auto& [_, compact] : ids) compact = next++;
    std::vector<int> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = ids[raw[i]];
    return out;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t t = 0; t < idx.size(); ++t) out.set_row(t, m.row(idx[t]));
    return out;
}

}  // namespace detail

struct PretrainResult {
    EncoderParams encoder;
    Matrix head_w;  // embed_dim x n_classes
    Vector head_b;
    std::vector<IterMetrics> losses;  // l_tri/total reused for the supervised loss parts
};

// Supervised pretraining on the labeled source domain: cross-entropy over a
// linear head plus batch-hard triplet on PK-sampled batches. The learning
// rate drops by lr_decay_factor every lr_decay_every epochs.
inline PretrainResult pretrain_source(const IdentityDataset& source, const TrainConfig& cfg) {
    if (source.size() == 0) throw InsufficientDataError("pretrain_source: empty source set");
    const std::vector<int> labels = detail::remap_identities(source.identities);
    const std::size_t n_classes =
        static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    if (n_classes < 2) throw InsufficientDataError("pretrain_source: need >= 2 identities");

    Rng rng(mix_seed(cfg.seed, 101));
    PretrainResult out;
    out.encoder = xavier_init(source.inputs.cols, cfg.hidden_dim, cfg.embed_dim, rng);
    out.head_w = Matrix(cfg.embed_dim, n_classes);
    const double limit = std::sqrt(6.0 / static_cast<double>(cfg.embed_dim + n_classes));
    for (double& v : out.head_w.data) v = (2.0 * rng.uniform() - 1.0) * limit;
    out.head_b.assign(n_classes, 0.0);

    AdamState enc_state;
    detail::AdamBuf head_state;
    const std::size_t iters = cfg.pretrain_iters_per_epoch > 0
                                  ? cfg.pretrain_iters_per_epoch
                                  : std::max<std::size_t>(1, source.size() / cfg.batch_size());

    for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        const double lr =
            cfg.lr * std::pow(cfg.lr_decay_factor,
                              static_cast<double>(cfg.lr_decay_every > 0 ? epoch / cfg.lr_decay_every
                                                                         : 0));
        for (std::size_t it = 0; it < iters; ++it) {
            const auto batch = pk_sample(labels, std::min(cfg.batch_p, n_classes), cfg.batch_k, rng);
            Matrix inputs = detail::gather_rows(source.inputs, batch);
            std::vector<int> batch_labels(batch.size());
            for (std::size_t t = 0; t < batch.size(); ++t) batch_labels[t] = labels[batch[t]];

            auto [features, tape] = encoder_forward(out.encoder, inputs);
            Matrix logits = matmul(features, out.head_w);
            for (std::size_t r = 0; r < logits.rows; ++r)
                for (std::size_t c = 0; c < logits.cols; ++c) logits.at(r, c) += out.head_b[c];

            SourceLossResult loss =
                source_supervised_loss(features, logits, batch_labels, cfg.weights.triplet_margin);

            // feature grad: triplet part plus cross-entropy through the head
            Matrix grad_features = loss.grad_features;
            for (std::size_t r = 0; r < grad_features.rows; ++r)
                for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < n_classes; ++c)
                        s += loss.grad_logits.at(r, c) * out.head_w.at(d, c);
                    grad_features.at(r, d) += s;
                }
            EncoderParams grads = encoder_backward(out.encoder, tape, grad_features);
            if (cfg.optimizer == TrainConfig::Optimizer::adam)
                out.encoder = adam_step(out.encoder, grads, enc_state, lr, cfg.adam);
            else
                out.encoder = sgd_step(out.encoder, grads, lr);

            // head step on the flattened (w, b) vector
            Matrix grad_w = matmul(transpose(tape.features), loss.grad_logits);
            Vector head_flat = out.head_w.data;
            head_flat.insert(head_flat.end(), out.head_b.begin(), out.head_b.end());
            Vector grad_flat = grad_w.data;
            for (std::size_t c = 0; c < n_classes; ++c) {
                double s = 0.0;
                for (std::size_t r = 0; r < loss.grad_logits.rows; ++r)
                    s += loss.grad_logits.at(r, c);
                grad_flat.push_back(s);
            }
            if (cfg.optimizer == TrainConfig::Optimizer::adam) {
                head_state.step(head_flat, grad_flat, lr, cfg.adam);
            } else {
                for (std::size_t i = 0; i < head_flat.size(); ++i)
                    head_flat[i] -= lr * grad_flat[i];
            }
            std::copy(head_flat.begin(), head_flat.begin() + static_cast<std::ptrdiff_t>(out.head_w.data.size()),
                      out.head_w.data.begin());
            std::copy(head_flat.begin() + static_cast<std::ptrdiff_t>(out.head_w.data.size()),
                      head_flat.end(), out.head_b.begin());

            out.losses.push_back({epoch + 1, it + 1, loss.tri, loss.ce, 0.0, loss.loss});
        }
    }
    return out;
}

struct AdaptState {
    EncoderParams encoder;
    Matrix source_head_w;
    Vector source_head_b;
    std::vector<PrototypeGroup> groups;
    std::vector<Matrix> q;                 // per group, K_m x N assignment matrix
    std::vector<std::vector<int>> hard;    // per group, hardened labels (noise -1)
    MemoryBank bank{0};
    std::size_t epochs_done = 0;
};

struct AdaptResult {
    AdaptState state;
    std::vector<EpochMetrics> history;
    std::vector<IterMetrics> iter_losses;
    ClusterMetrics initial_cluster;  // pk_group clustering quality before any training
    bool has_truth = false;
};

namespace detail {

struct GroupRuntime {
    std::vector<char> valid;  // per sample, false for clustering noise
};

inline void init_groups_from_clustering(const Matrix& features,
                                        const std::vector<HardLabeling>& labelings, double tau,
                                        PrototypeMode mode, std::vector<PrototypeGroup>& groups,
                                        std::vector<Matrix>& q, std::vector<std::vector<int>>& hard,
                                        std::vector<GroupRuntime>& runtime) {
    const std::size_t n = features.rows;
    groups.clear();
    q.clear();
    hard.clear();
    runtime.clear();
    for (std::size_t m = 0; m < labelings.size(); ++m) {
        const HardLabeling& lab = labelings[m];
        if (lab.num_clusters == 0) continue;  // e.g. all-noise DBSCAN granularity
        PrototypeGroup g;
        g.c = lab.centroids;
        g.tau = tau;
        g.mode = mode;
        g.group_id = groups.size();
        groups.push_back(std::move(g));

        std::size_t n_valid = 0;
        for (int v : lab.labels)
            if (v >= 0) ++n_valid;
        Matrix qm(lab.num_clusters, n, 0.0);
        GroupRuntime rt;
        rt.valid.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (lab.labels[i] < 0) continue;
            rt.valid[i] = 1;
            qm.at(static_cast<std::size_t>(lab.labels[i]), i) =
                1.0 / static_cast<double>(n_valid);
        }
        q.push_back(std::move(qm));
        hard.push_back(lab.labels);
        runtime.push_back(std::move(rt));
    }
    if (groups.empty())
        throw InsufficientDataError("adapt: clustering produced no usable groups");
}

}  // namespace detail

// Full adaptation loop: cluster at several granularities, then alternate
// joint fine-tuning on PK batches against the current soft labels with
// transport-based refinement of every group's label matrix. Re-clustering
// re-anchors prototypes every recluster_every epochs.
inline AdaptResult adapt(const IdentityDataset& source, const IdentityDataset& target_train,
                         const TrainConfig& cfg, const EncoderParams* pretrained = nullptr) {
    const std::size_t n = target_train.size();
    if (n == 0) throw InsufficientDataError("adapt: empty target set");

    AdaptResult out;
    AdaptState& st = out.state;

    // encoder and source head
    std::vector<int> source_labels;
    std::size_t n_source_classes = 0;
    if (source.size() > 0) {
        source_labels = detail::remap_identities(source.identities);
        n_source_classes =
            static_cast<std::size_t>(*std::max_element(source_labels.begin(), source_labels.end())) +
            1;
    }
    Rng rng(mix_seed(cfg.seed, 202));
    if (pretrained != nullptr) {
        st.encoder = *pretrained;
    } else {
        if (cfg.epochs_pretrain == 0 || source.size() == 0)
            throw InsufficientDataError("adapt: no pretrained encoder and pretraining disabled");
        PretrainResult pre = pretrain_source(source, cfg);
        st.encoder = std::move(pre.encoder);
    }
    const bool interleave = cfg.interleave_source && source.size() > 0 && n_source_classes >= 2;
    if (interleave) {
        st.source_head_w = Matrix(cfg.embed_dim, n_source_classes);
        const double limit =
            std::sqrt(6.0 / static_cast<double>(cfg.embed_dim + n_source_classes));
        for (double& v : st.source_head_w.data) v = (2.0 * rng.uniform() - 1.0) * limit;
        st.source_head_b.assign(n_source_classes, 0.0);
    }

    // initial clustering
    GroupSpec spec = cfg.groups;
    if (spec.mode == GroupSpec::Mode::kmeans && spec.kmeans_k_list.empty())
        spec.kmeans_k_list = default_k_list(n);
    auto [features0, tape0] = encoder_forward(st.encoder, target_train.inputs);
    std::vector<detail::GroupRuntime> runtime;
    detail::init_groups_from_clustering(features0, make_groups(features0, spec, mix_seed(cfg.seed, 303)),
                                        cfg.tau, cfg.prototype_mode, st.groups, st.q, st.hard,
                                        runtime);

    const std::size_t pk_group = std::min(cfg.pk_group, st.groups.size() - 1);
    const std::size_t bank_group = std::min(cfg.bank_group, st.groups.size() - 1);

    out.has_truth = !target_train.identities.empty();
    if (out.has_truth)
        out.initial_cluster = cluster_metrics(st.hard[pk_group], target_train.identities);

    st.bank = MemoryBank(cfg.bank_capacity > 0 ? cfg.bank_capacity : 8 * cfg.batch_size());

    AdamState enc_state;
    detail::AdamBuf head_state;
    std::vector<detail::AdamBuf> proto_states(st.groups.size());
    const std::size_t iters = cfg.iters_per_epoch > 0
                                  ? cfg.iters_per_epoch
                                  : std::max<std::size_t>(1, n / cfg.batch_size());

    EpochMetrics last_refine;  // carries refine stats into epoch records

    auto run_refinement = [&](EpochMetrics& em) {
        auto [features, tape] = encoder_forward(st.encoder, target_train.inputs);
        em.refine_ran = true;
        em.refine_converged = true;
        for (std::size_t m = 0; m < st.groups.size(); ++m) {
            std::vector<std::size_t> valid_idx;
            for (std::size_t i = 0; i < n; ++i)
                if (runtime[m].valid[i]) valid_idx.push_back(i);
            if (valid_idx.empty()) continue;
            if (cfg.refresh_prototypes)
                st.groups[m] = update_nonparametric(st.groups[m], features, st.hard[m]);
            const Matrix sub = detail::gather_rows(features, valid_idx);
            const TransportPolytope poly = uniform_polytope(st.groups[m].c.rows, valid_idx.size());
            SinkhornResult res = refine(sub, st.groups[m].c, st.groups[m].tau, poly, cfg.sinkhorn);
            em.refine_iters = std::max(em.refine_iters, res.iters);
            em.refine_marginal_err = std::max(em.refine_marginal_err, res.marginal_err);
            if (!res.converged && res.marginal_err > 1e-3) em.refine_converged = false;

            Matrix& qm = st.q[m];
            for (double& v : qm.data) v = 0.0;
            const std::vector<int> sub_hard = harden(res.q);
            for (std::size_t t = 0; t < valid_idx.size(); ++t) {
                for (std::size_t j = 0; j < qm.rows; ++j)
                    qm.at(j, valid_idx[t]) = res.q.at(j, t);
                st.hard[m][valid_idx[t]] = sub_hard[t];
            }
        }
        st.bank.refresh_labels(st.hard);
    };

    std::size_t target_iter_count = 0;
    for (std::size_t epoch = 1; epoch <= cfg.adapt_epochs; ++epoch) {
        // re-clustering re-anchors prototypes and resets the label matrices
        if (cfg.recluster_every > 0 && epoch > 1 && (epoch - 1) % cfg.recluster_every == 0) {
            auto [features, tape] = encoder_forward(st.encoder, target_train.inputs);
            detail::init_groups_from_clustering(
                features, make_groups(features, spec, mix_seed(cfg.seed, 303 + epoch)), cfg.tau,
                cfg.prototype_mode, st.groups, st.q, st.hard, runtime);
            proto_states.assign(st.groups.size(), detail::AdamBuf{});
            st.bank.refresh_labels(st.hard);
        }

        EpochMetrics em;
        em.epoch = epoch;
        double sum_tri = 0.0, sum_g = 0.0, sum_wcl = 0.0, sum_total = 0.0, sum_source = 0.0;

        for (std::size_t it = 0; it < iters; ++it) {
            // interleaved supervised step on the source domain
            if (interleave) {
                const auto batch =
                    pk_sample(source_labels, std::min(cfg.batch_p, n_source_classes), cfg.batch_k,
                              rng);
                Matrix inputs = detail::gather_rows(source.inputs, batch);
                std::vector<int> batch_labels(batch.size());
                for (std::size_t t = 0; t < batch.size(); ++t)
                    batch_labels[t] = source_labels[batch[t]];
                auto [features, tape] = encoder_forward(st.encoder, inputs);
                Matrix logits = matmul(features, st.source_head_w);
                for (std::size_t r = 0; r < logits.rows; ++r)
                    for (std::size_t c = 0; c < logits.cols; ++c)
                        logits.at(r, c) += st.source_head_b[c];
                SourceLossResult loss = source_supervised_loss(features, logits, batch_labels,
                                                               cfg.weights.triplet_margin);
                Matrix grad_features = loss.grad_features;
                for (std::size_t r = 0; r < grad_features.rows; ++r)
                    for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < n_source_classes; ++c)
                            s += loss.grad_logits.at(r, c) * st.source_head_w.at(d, c);
                        grad_features.at(r, d) += s;
                    }
                EncoderParams grads = encoder_backward(st.encoder, tape, grad_features);
                if (cfg.optimizer == TrainConfig::Optimizer::adam)
                    st.encoder = adam_step(st.encoder, grads, enc_state, cfg.lr, cfg.adam);
                else
                    st.encoder = sgd_step(st.encoder, grads, cfg.lr);
                Matrix grad_w = matmul(transpose(tape.features), loss.grad_logits);
                Vector head_flat = st.source_head_w.data;
                head_flat.insert(head_flat.end(), st.source_head_b.begin(), st.source_head_b.end());
                Vector grad_flat = grad_w.data;
                for (std::size_t c = 0; c < n_source_classes; ++c) {
                    double s = 0.0;
                    for (std::size_t r = 0; r < loss.grad_logits.rows; ++r)
                        s += loss.grad_logits.at(r, c);
                    grad_flat.push_back(s);
                }
                if (cfg.optimizer == TrainConfig::Optimizer::adam) {
                    head_state.step(head_flat, grad_flat, cfg.lr, cfg.adam);
                } else {
                    for (std::size_t i = 0; i < head_flat.size(); ++i)
                        head_flat[i] -= cfg.lr * grad_flat[i];
                }
                std::copy(head_flat.begin(),
                          head_flat.begin() + static_cast<std::ptrdiff_t>(st.source_head_w.data.size()),
                          st.source_head_w.data.begin());
                std::copy(head_flat.begin() + static_cast<std::ptrdiff_t>(st.source_head_w.data.size()),
                          head_flat.end(), st.source_head_b.begin());
                sum_source += loss.loss;
            }

            // target step against the current soft labels
            std::size_t distinct = 0;
            {
                std::map<int, int> seen;
                for (int v : st.hard[pk_group])
                    if (v >= 0) seen.emplace(v, 0);
                distinct = seen.size();
            }
            if (distinct == 0) throw InsufficientDataError("adapt: every target sample is noise");
            const auto batch =
                pk_sample(st.hard[pk_group], std::min(cfg.batch_p, distinct), cfg.batch_k, rng);
            Matrix inputs = detail::gather_rows(target_train.inputs, batch);
            auto [features, tape] = encoder_forward(st.encoder, inputs);

            // soft targets for the group CE: per-sample columns of Q,
            // renormalized to distributions; noise columns stay zero
            std::vector<Matrix> q_cols;
            for (std::size_t m = 0; m < st.groups.size(); ++m) {
                Matrix qb(st.q[m].rows, batch.size(), 0.0);
                for (std::size_t t = 0; t < batch.size(); ++t) {
                    const std::size_t i = batch[t];
                    if (!runtime[m].valid[i]) continue;
                    double s = 0.0;
                    for (std::size_t j = 0; j < st.q[m].rows; ++j) s += st.q[m].at(j, i);
                    if (s <= 0.0) continue;
                    for (std::size_t j = 0; j < st.q[m].rows; ++j)
                        qb.at(j, t) = st.q[m].at(j, i) / s;
                }
                q_cols.push_back(std::move(qb));
            }
            GroupCeResult gce = group_ce(st.groups, features, q_cols);

            std::vector<int> batch_labels(batch.size());
            for (std::size_t t = 0; t < batch.size(); ++t)
                batch_labels[t] = st.hard[pk_group][batch[t]];
            TripletResult tri =
                triplet_batch_hard(features, batch_labels, cfg.weights.triplet_margin);

            double l_wcl = 0.0;
            Matrix wcl_grad(features.rows, features.cols, 0.0);
            const bool bank_active = cfg.use_bank && cfg.weights.lambda_wcl != 0.0;
            if (bank_active && st.bank.size() > 0) {
                const auto& entries = st.bank.entries();
                const double inv_b = 1.0 / static_cast<double>(batch.size());
                for (std::size_t t = 0; t < batch.size(); ++t) {
                    const int anchor_label = st.hard[bank_group][batch[t]];
                    std::vector<std::size_t> pos_ref, neg_ref;
                    PairSplit split;
                    for (std::size_t u = 0; u < entries.size(); ++u) {
                        const BankEntry& e = entries[u];
                        if (e.instance_id == batch[t]) continue;
                        const double sim = dot(features.row(t), e.feature);
                        if (anchor_label >= 0 && e.labels[bank_group] == anchor_label) {
                            split.positive_sims.push_back(sim);
                            pos_ref.push_back(u);
                        } else {
                            split.negative_sims.push_back(sim);
                            neg_ref.push_back(u);
                        }
                    }
                    WclResult w = weighted_contrastive(split, cfg.weights.wcl_margin,
                                                       cfg.weights.wcl_scale);
                    l_wcl += inv_b * w.loss;
                    for (std::size_t u = 0; u < pos_ref.size(); ++u)
                        for (std::size_t d = 0; d < features.cols; ++d)
                            wcl_grad.at(t, d) += inv_b * w.grad_pos[u] * entries[pos_ref[u]].feature[d];
                    for (std::size_t u = 0; u < neg_ref.size(); ++u)
                        for (std::size_t d = 0; d < features.cols; ++d)
                            wcl_grad.at(t, d) += inv_b * w.grad_neg[u] * entries[neg_ref[u]].feature[d];
                }
            }

            const double total =
                total_loss(tri.loss, gce.loss, l_wcl, cfg.weights);
            Matrix grad_features(features.rows, features.cols, 0.0);
            for (std::size_t i = 0; i < grad_features.data.size(); ++i)
                grad_features.data[i] = cfg.weights.lambda_tri * tri.grad_features.data[i] +
                                        cfg.weights.lambda_g * gce.grad_features.data[i] +
                                        cfg.weights.lambda_wcl * wcl_grad.data[i];
            EncoderParams grads = encoder_backward(st.encoder, tape, grad_features);
            if (cfg.optimizer == TrainConfig::Optimizer::adam)
                st.encoder = adam_step(st.encoder, grads, enc_state, cfg.lr, cfg.adam);
            else
                st.encoder = sgd_step(st.encoder, grads, cfg.lr);

            if (cfg.prototype_mode == PrototypeMode::parametric) {
                for (std::size_t m = 0; m < st.groups.size(); ++m) {
                    Vector flat = st.groups[m].c.data;
                    Vector gflat(gce.grad_prototypes[m].data.size());
                    for (std::size_t i = 0; i < gflat.size(); ++i)
                        gflat[i] = cfg.weights.lambda_g * gce.grad_prototypes[m].data[i];
                    if (cfg.optimizer == TrainConfig::Optimizer::adam) {
                        proto_states[m].step(flat, gflat, cfg.lr, cfg.adam);
                    } else {
                        for (std::size_t i = 0; i < flat.size(); ++i) flat[i] -= cfg.lr * gflat[i];
                    }
                    st.groups[m].c.data = std::move(flat);
                    st.groups[m].c = l2_normalize_rows(st.groups[m].c);
                }
            }

            if (cfg.use_bank) {
                std::vector<BankEntry> entries;
                for (std::size_t t = 0; t < batch.size(); ++t) {
                    BankEntry e;
                    e.feature = features.row_copy(t);
                    e.instance_id = batch[t];
                    e.labels.resize(st.groups.size());
                    for (std::size_t m = 0; m < st.groups.size(); ++m)
                        e.labels[m] = st.hard[m][batch[t]];
                    entries.push_back(std::move(e));
                }
                st.bank.enqueue_batch(std::move(entries));
            }

            sum_tri += tri.loss;
            sum_g += gce.loss;
            sum_wcl += l_wcl;
            sum_total += total;
            out.iter_losses.push_back({epoch, it + 1, tri.loss, gce.loss, l_wcl, total});

            ++target_iter_count;
            if (cfg.refine_enabled && cfg.refresh_every > 0 &&
                target_iter_count % cfg.refresh_every == 0)
                run_refinement(em);
        }

        if (cfg.refine_enabled && cfg.refresh_every == 0) run_refinement(em);

        const double inv_iters = 1.0 / static_cast<double>(iters);
        em.l_tri = sum_tri * inv_iters;
        em.l_g = sum_g * inv_iters;
        em.l_wcl = sum_wcl * inv_iters;
        em.total = sum_total * inv_iters;
        em.source_loss = sum_source * inv_iters;
        if (out.has_truth) {
            em.has_truth = true;
            em.cluster = cluster_metrics(st.hard[pk_group], target_train.identities);
        }
        out.history.push_back(em);
        st.epochs_done = epoch;
    }
    return out;
}

// Embeddings of a dataset under fixed parameters.
inline Matrix extract_features(const EncoderParams& params, const Matrix& inputs) {
    return encoder_forward(params, inputs).first;
}

}  // namespace glt
