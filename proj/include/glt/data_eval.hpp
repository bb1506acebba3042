#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glt/matrix.hpp"
#include "glt/rng.hpp"

namespace glt {

enum class Split { source, target_train, target_query, target_gallery };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::source: return "source";
        case Split::target_train: return "target_train";
        case Split::target_query: return "target_query";
        case Split::target_gallery: return "target_gallery";
    }
    return "?";
}

inline Split split_from_name(const std::string& s, std::size_t line_number) {
    if (s == "source") return Split::source;
    if (s == "target_train") return Split::target_train;
    if (s == "target_query") return Split::target_query;
    if (s == "target_gallery") return Split::target_gallery;
    throw ParseError(line_number, "unknown split '" + s + "'");
}

struct IdentityDataset {
    Matrix inputs;               // N x input_dim (raw vectors, not embeddings)
    std::vector<int> identities;
    std::vector<int> cameras;
    std::vector<Split> splits;

    std::size_t size() const { return inputs.rows; }

    IdentityDataset subset(Split which) const {
        IdentityDataset out;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < size(); ++i)
            if (splits[i] == which) idx.push_back(i);
        out.inputs = Matrix(idx.size(), inputs.cols);
        for (std::size_t t = 0; t < idx.size(); ++t) {
            out.inputs.set_row(t, inputs.row(idx[t]));
            out.identities.push_back(identities[idx[t]]);
            out.cameras.push_back(cameras[idx[t]]);
            out.splits.push_back(splits[idx[t]]);
        }
        return out;
    }
};

struct SynthSpec {
    std::size_t n_identities = 20;
    std::size_t samples_per_identity = 30;
    std::size_t input_dim = 48;
    double cluster_std = 0.12;
    std::size_t n_cameras = 3;
    double camera_shift_strength = 0.3;   // per-camera random affine magnitude
    double domain_shift_strength = 0.8;   // source -> target global affine magnitude
    std::uint64_t seed = 7;
};

namespace detail {

// random affine x -> (I + s R) x + s t with R, t gaussian
struct Affine {
    Matrix linear;
    Vector offset;

    static Affine random(std::size_t dim, double strength, Rng& rng) {
        Affine a;
        a.linear = Matrix(dim, dim);
        a.offset.assign(dim, 0.0);
        const double scale = strength / std::sqrt(static_cast<double>(dim));
        for (std::size_t r = 0; r < dim; ++r)
            for (std::size_t c = 0; c < dim; ++c)
                a.linear.at(r, c) = (r == c ? 1.0 : 0.0) + scale * rng.normal();
        for (std::size_t c = 0; c < dim; ++c) a.offset[c] = strength * rng.normal() * 0.5;
        return a;
    }

    Vector apply(std::span<const double> x) const {
        Vector y(offset);
        for (std::size_t r = 0; r < linear.rows; ++r)
            y[r] += dot(linear.row(r), x);
        return y;
    }
};

inline Vector random_unit_vector(std::size_t dim, Rng& rng) {
    Vector v(dim);
    double n = 0.0;
    do {
        for (double& x : v) x = rng.normal();
        n = norm2(v);
    } while (n < 1e-12);
    for (double& x : v) x /= n;
    return v;
}

}  // namespace detail

// Identities are gaussian blobs around unit-sphere means; every sample is
// pushed through its camera's affine, and target samples additionally
// through a global domain-shift affine. Target identities are disjoint from sources.
// Per identity the sample index decides the split: i % 5 == 3 -> query,
// i % 5 == 4 -> gallery, the rest train; cameras rotate round-robin.
inline std::pair<IdentityDataset, IdentityDataset> synth_generate(const SynthSpec& spec) {
    if (spec.n_identities == 0 || spec.samples_per_identity == 0 || spec.input_dim == 0 ||
        spec.n_cameras == 0)
        throw std::invalid_argument("synth_generate: counts must be positive");
    Rng rng(mix_seed(spec.seed, 0x5eed));

    std::vector<detail::Affine> cameras;
    for (std::size_t c = 0; c < spec.n_cameras; ++c)
        cameras.push_back(detail::Affine::random(spec.input_dim, spec.camera_shift_strength, rng));
    const detail::Affine domain_shift =
        detail::Affine::random(spec.input_dim, spec.domain_shift_strength, rng);

    auto make_domain = [&](bool is_target, int id_offset) {
        IdentityDataset ds;
        const std::size_t n = spec.n_identities * spec.samples_per_identity;
        ds.inputs = Matrix(n, spec.input_dim);
        std::size_t row = 0;
        for (std::size_t id = 0; id < spec.n_identities; ++id) {
            const Vector mean = detail::random_unit_vector(spec.input_dim, rng);
            for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
                Vector x(spec.input_dim);
                for (std::size_t c = 0; c < spec.input_dim; ++c)
                    x[c] = mean[c] + spec.cluster_std * rng.normal();
                const std::size_t cam = s % spec.n_cameras;
                x = cameras[cam].apply(x);
                if (is_target) x = domain_shift.apply(x);
                ds.inputs.set_row(row, x);
                ds.identities.push_back(static_cast<int>(id) + id_offset);
                ds.cameras.push_back(static_cast<int>(cam));
                if (!is_target) {
                    ds.splits.push_back(Split::source);
                } else if (s % 5 == 3) {
                    ds.splits.push_back(Split::target_query);
                } else if (s % 5 == 4) {
                    ds.splits.push_back(Split::target_gallery);
                } else {
                    ds.splits.push_back(Split::target_train);
                }
                ++row;
            }
        }
        return ds;
    };

    IdentityDataset source = make_domain(false, 0);
    IdentityDataset target = make_domain(true, static_cast<int>(spec.n_identities));
    return {source, target};
}

namespace detail {

struct RankedGallery {
    std::vector<std::size_t> order;  // gallery indices by descending similarity
    std::vector<char> relevant;      // per position, same id and valid
};

// Rank one query against the gallery, dropping same-identity same-camera
// entries (standard cross-camera retrieval protocol). Ties break on gallery index.
inline RankedGallery rank_gallery(std::span<const double> query_feat, int query_id, int query_cam,
                                  const Matrix& gallery_feats, const std::vector<int>& gallery_ids,
                                  const std::vector<int>& gallery_cams) {
    std::vector<std::size_t> keep;
    for (std::size_t g = 0; g < gallery_feats.rows; ++g)
        if (!(gallery_ids[g] == query_id && gallery_cams[g] == query_cam)) keep.push_back(g);
    std::vector<double> sims(keep.size());
    for (std::size_t t = 0; t < keep.size(); ++t)
        sims[t] = dot(query_feat, gallery_feats.row(keep[t]));
    std::vector<std::size_t> order(keep.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return keep[a] < keep[b];
    });
    RankedGallery out;
    for (std::size_t t : order) {
        out.order.push_back(keep[t]);
        out.relevant.push_back(gallery_ids[keep[t]] == query_id ? 1 : 0);
    }
    return out;
}

}  // namespace detail

// Mean average precision under the cross-camera exclusion rule. AP per query
// is the mean of precision@rank over the relevant positions. Queries without
// any valid match are skipped; all-skipped raises NoValidQueries.
inline double mean_ap(const Matrix& query_feats, const std::vector<int>& query_ids,
                      const std::vector<int>& query_cams, const Matrix& gallery_feats,
                      const std::vector<int>& gallery_ids, const std::vector<int>& gallery_cams) {
    double sum_ap = 0.0;
    std::size_t valid_queries = 0;
    for (std::size_t q = 0; q < query_feats.rows; ++q) {
        const auto ranked = detail::rank_gallery(query_feats.row(q), query_ids[q], query_cams[q],
                                                 gallery_feats, gallery_ids, gallery_cams);
        std::size_t hits = 0;
        double ap = 0.0;
        for (std::size_t pos = 0; pos < ranked.order.size(); ++pos) {
            if (!ranked.relevant[pos]) continue;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
        }
        if (hits == 0) continue;
        sum_ap += ap / static_cast<double>(hits);
        ++valid_queries;
    }
    if (valid_queries == 0) throw NoValidQueriesError();
    return sum_ap / static_cast<double>(valid_queries);
}

// Cumulative match characteristic at the requested ranks, same protocol as mean_ap.
inline std::vector<double> cmc(const Matrix& query_feats, const std::vector<int>& query_ids,
                               const std::vector<int>& query_cams, const Matrix& gallery_feats,
                               const std::vector<int>& gallery_ids,
                               const std::vector<int>& gallery_cams,
                               const std::vector<std::size_t>& ranks = {1, 5, 10}) {
    std::vector<double> hits_at(ranks.size(), 0.0);
    std::size_t valid_queries = 0;
    for (std::size_t q = 0; q < query_feats.rows; ++q) {
        const auto ranked = detail::rank_gallery(query_feats.row(q), query_ids[q], query_cams[q],
                                                 gallery_feats, gallery_ids, gallery_cams);
        std::size_t first_hit = ranked.order.size();
        for (std::size_t pos = 0; pos < ranked.order.size(); ++pos)
            if (ranked.relevant[pos]) {
                first_hit = pos;
                break;
            }
        if (first_hit == ranked.order.size()) continue;
        ++valid_queries;
        for (std::size_t t = 0; t < ranks.size(); ++t)
            if (first_hit < ranks[t]) hits_at[t] += 1.0;
    }
    if (valid_queries == 0) throw NoValidQueriesError();
    for (double& h : hits_at) h /= static_cast<double>(valid_queries);
    return hits_at;
}

struct ClusterMetrics {
    double nmi = 0.0;
    double ari = 0.0;
    double purity = 0.0;
    double noise_rate = 0.0;
};

// NMI (arithmetic-mean normalization), adjusted Rand index, purity, and the
// fraction of samples disagreeing with their predicted cluster's majority
// identity. Noise labels (-1) are treated as one extra cluster.
inline ClusterMetrics cluster_metrics(const std::vector<int>& pred,
                                      const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw LengthMismatchError("cluster_metrics: size mismatch");
    const std::size_t n = pred.size();
    if (n == 0) throw LengthMismatchError("cluster_metrics: empty input");

    std::map<int, std::size_t> pred_ids, true_ids;
    for (int v : pred)
        if (!pred_ids.count(v)) pred_ids.emplace(v, pred_ids.size());
    for (int v : truth)
        if (!true_ids.count(v)) true_ids.emplace(v, true_ids.size());
    const std::size_t pk = pred_ids.size();
    const std::size_t tk = true_ids.size();

    std::vector<std::vector<std::size_t>> table(pk, std::vector<std::size_t>(tk, 0));
    std::vector<std::size_t> pred_count(pk, 0), true_count(tk, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = pred_ids[pred[i]];
        const std::size_t b = true_ids[truth[i]];
        ++table[a][b];
        ++pred_count[a];
        ++true_count[b];
    }

    ClusterMetrics out;
    const double dn = static_cast<double>(n);

    // mutual information and entropies
    double mi = 0.0, hp = 0.0, ht = 0.0;
    for (std::size_t a = 0; a < pk; ++a) {
        const double pa = pred_count[a] / dn;
        if (pa > 0.0) hp -= pa * std::log(pa);
    }
    for (std::size_t b = 0; b < tk; ++b) {
        const double pb = true_count[b] / dn;
        if (pb > 0.0) ht -= pb * std::log(pb);
    }
    for (std::size_t a = 0; a < pk; ++a)
        for (std::size_t b = 0; b < tk; ++b) {
            if (table[a][b] == 0) continue;
            const double pab = table[a][b] / dn;
            mi += pab * std::log(pab / ((pred_count[a] / dn) * (true_count[b] / dn)));
        }
    if (pk == 1 && tk == 1) {
        out.nmi = 1.0;
    } else {
        const double denom = 0.5 * (hp + ht);
        out.nmi = denom > 0.0 ? std::max(0.0, mi / denom) : 0.0;
    }

    // adjusted Rand index
    auto comb2 = [](std::size_t x) {
        return 0.5 * static_cast<double>(x) * static_cast<double>(x > 0 ? x - 1 : 0);
    };
    double sum_cells = 0.0, sum_pred = 0.0, sum_true = 0.0;
    for (std::size_t a = 0; a < pk; ++a)
        for (std::size_t b = 0; b < tk; ++b) sum_cells += comb2(table[a][b]);
    for (std::size_t a = 0; a < pk; ++a) sum_pred += comb2(pred_count[a]);
    for (std::size_t b = 0; b < tk; ++b) sum_true += comb2(true_count[b]);
    const double total_pairs = comb2(n);
    const double expected = total_pairs > 0.0 ? sum_pred * sum_true / total_pairs : 0.0;
    const double max_index = 0.5 * (sum_pred + sum_true);
    if (std::abs(max_index - expected) < 1e-15)
        out.ari = 1.0;  // both partitions trivial
    else
        out.ari = (sum_cells - expected) / (max_index - expected);

    // purity / noise rate via per-cluster majority identity
    std::size_t agree = 0;
    for (std::size_t a = 0; a < pk; ++a) {
        std::size_t best = 0;
        for (std::size_t b = 0; b < tk; ++b) best = std::max(best, table[a][b]);
        agree += best;
    }
    out.purity = static_cast<double>(agree) / dn;
    out.noise_rate = 1.0 - out.purity;
    return out;
}

// ---- embedding file format: header "id,camera,split,f0..f{D-1}" ----

inline void export_embeddings(const IdentityDataset& ds, std::ostream& os) {
    os << "id,camera,split";
    for (std::size_t c = 0; c < ds.inputs.cols; ++c) os << ",f" << c;
    os << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.identities[i] << ',' << ds.cameras[i] << ',' << split_name(ds.splits[i]);
        for (std::size_t c = 0; c < ds.inputs.cols; ++c)
            os << ',' << format_double(ds.inputs.at(i, c));
        os << '\n';
    }
}

inline void export_embeddings(const IdentityDataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    export_embeddings(ds, os);
}

// Features are L2-normalized on load.
inline IdentityDataset ingest_embeddings(std::istream& is) {
    IdentityDataset ds;
    std::string line;
    std::size_t line_number = 0;
    std::size_t dim = 0;
    std::vector<std::string> fields;
    auto split_line = [&](const std::string& l) {
        fields.clear();
        std::size_t start = 0;
        while (start <= l.size()) {
            std::size_t comma = l.find(',', start);
            if (comma == std::string::npos) comma = l.size();
            std::string f = l.substr(start, comma - start);
            if (!f.empty() && f.back() == '\r') f.pop_back();
            fields.push_back(std::move(f));
            start = comma + 1;
        }
    };

    if (!std::getline(is, line)) throw ParseError(1, "empty file");
    ++line_number;
    split_line(line);
    if (fields.size() < 4 || fields[0] != "id" || fields[1] != "camera" || fields[2] != "split")
        throw ParseError(1, "expected header id,camera,split,f0..");
    dim = fields.size() - 3;

    std::vector<double> rows;
    while (std::getline(is, line)) {
        ++line_number;
        if (line.empty() || line == "\r") continue;
        split_line(line);
        if (fields.size() != dim + 3)
            throw ParseError(line_number, "expected " + std::to_string(dim + 3) + " columns, got " +
                                              std::to_string(fields.size()));
        ds.identities.push_back(
            static_cast<int>(parse_double_token(fields[0], line_number)));
        ds.cameras.push_back(static_cast<int>(parse_double_token(fields[1], line_number)));
        ds.splits.push_back(split_from_name(fields[2], line_number));
        Vector row(dim);
        for (std::size_t c = 0; c < dim; ++c)
            row[c] = parse_double_token(fields[3 + c], line_number);
        const double n = norm2(row);
        if (n < kZeroNormThreshold)
            throw ParseError(line_number, "zero feature vector");
        for (double& v : row) v /= n;
        rows.insert(rows.end(), row.begin(), row.end());
    }
    ds.inputs.rows = ds.identities.size();
    ds.inputs.cols = dim;
    ds.inputs.data = std::move(rows);
    return ds;
}

inline IdentityDataset ingest_embeddings(const std::string& path, std::size_t expected_dim = 0) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    IdentityDataset ds = ingest_embeddings(is);
    if (expected_dim != 0 && ds.inputs.cols != expected_dim)
        throw DimMismatchError("ingest_embeddings: file has dim " +
                               std::to_string(ds.inputs.cols) + ", expected " +
                               std::to_string(expected_dim));
    return ds;
}

}  // namespace glt
