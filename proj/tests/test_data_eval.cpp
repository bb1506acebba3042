#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "glt/clustering.hpp"
#include "glt/data_eval.hpp"
#include "oracles.hpp"

using Catch::Approx;
using namespace glt;

TEST_CASE("synth with zero spread makes identical samples per identity") {
    SynthSpec spec;
    spec.n_identities = 3;
    spec.samples_per_identity = 5;
    spec.input_dim = 6;
    spec.cluster_std = 0.0;
    spec.n_cameras = 2;
    spec.camera_shift_strength = 0.0;
    spec.domain_shift_strength = 0.0;
    auto [source, target] = synth_generate(spec);
    REQUIRE(source.size() == 15);
    for (std::size_t id = 0; id < 3; ++id) {
        const std::size_t base = id * 5;
        for (std::size_t s = 1; s < 5; ++s)
            for (std::size_t c = 0; c < 6; ++c)
                REQUIRE(source.inputs.at(base + s, c) == source.inputs.at(base, c));
    }
}

TEST_CASE("synth identities are recoverable by clustering when separated") {
    SynthSpec spec;
    spec.n_identities = 2;
    spec.samples_per_identity = 8;
    spec.input_dim = 16;
    spec.cluster_std = 0.02;
    spec.camera_shift_strength = 0.0;
    spec.domain_shift_strength = 0.0;
    spec.seed = 5;
    auto [source, target] = synth_generate(spec);
    Matrix f = l2_normalize_rows(source.inputs);
    HardLabeling lab = kmeans(f, 2, 3);
    REQUIRE(oracle::same_partition(lab.labels, source.identities));
    ClusterMetrics m = cluster_metrics(lab.labels, source.identities);
    REQUIRE(m.ari == Approx(1.0).margin(1e-12));
}

TEST_CASE("synth is bit-identical under the same seed") {
    SynthSpec spec;
    spec.seed = 99;
    auto [s1, t1] = synth_generate(spec);
    auto [s2, t2] = synth_generate(spec);
    REQUIRE(s1.inputs.data == s2.inputs.data);
    REQUIRE(t1.inputs.data == t2.inputs.data);
    REQUIRE(t1.identities == t2.identities);
    REQUIRE(t1.cameras == t2.cameras);
}

TEST_CASE("synth target ids are disjoint from source and splits partition the data") {
    SynthSpec spec;
    auto [source, target] = synth_generate(spec);
    for (int sid : source.identities)
        for (int tid : target.identities) REQUIRE(sid != tid);
    std::size_t train = 0, query = 0, gallery = 0;
    for (Split s : target.splits) {
        if (s == Split::target_train) ++train;
        if (s == Split::target_query) ++query;
        if (s == Split::target_gallery) ++gallery;
    }
    REQUIRE(train + query + gallery == target.size());
    REQUIRE(query > 0);
    REQUIRE(gallery > 0);
}

namespace {
// tiny retrieval fixture with hand-checkable geometry
struct Fixture {
    Matrix qf, gf;
    std::vector<int> qid, qcam, gid, gcam;
};

Fixture fixture_rank1() {
    Fixture fx;
    fx.qf = Matrix(1, 2, 0.0);
    fx.qf.at(0, 0) = 1.0;
    fx.qid = {0};
    fx.qcam = {0};
    fx.gf = Matrix(3, 2, 0.0);
    fx.gf.at(0, 0) = 1.0;                    // the match, sim 1
    fx.gf.at(1, 1) = 1.0;                    // wrong id
    fx.gf.at(2, 0) = -1.0;                   // wrong id
    fx.gid = {0, 1, 2};
    fx.gcam = {1, 0, 0};
    return fx;
}
}  // namespace

TEST_CASE("mean_ap: single query with its match ranked first") {
    Fixture fx = fixture_rank1();
    REQUIRE(mean_ap(fx.qf, fx.qid, fx.qcam, fx.gf, fx.gid, fx.gcam) == Approx(1.0).margin(1e-12));
}

TEST_CASE("mean_ap: matches at ranks 1 and 3") {
    Matrix qf(1, 2, 0.0);
    qf.at(0, 0) = 1.0;
    Matrix gf(4, 2);
    gf.at(0, 0) = 0.99; gf.at(0, 1) = std::sqrt(1 - 0.99 * 0.99);   // match, rank 1
    gf.at(1, 0) = 0.90; gf.at(1, 1) = std::sqrt(1 - 0.81);          // other, rank 2
    gf.at(2, 0) = 0.80; gf.at(2, 1) = std::sqrt(1 - 0.64);          // match, rank 3
    gf.at(3, 0) = 0.10; gf.at(3, 1) = std::sqrt(1 - 0.01);          // other, rank 4
    const std::vector<int> gid = {0, 1, 0, 2};
    const std::vector<int> gcam = {1, 1, 1, 1};
    const double ap = mean_ap(qf, {0}, {0}, gf, gid, gcam);
    REQUIRE(ap == Approx((1.0 / 1.0 + 2.0 / 3.0) / 2.0).margin(1e-12));
}

TEST_CASE("mean_ap excludes same-camera same-id gallery entries") {
    Fixture fx = fixture_rank1();
    fx.gcam = {0, 0, 0};  // the only match now shares the query camera
    REQUIRE_THROWS_AS(mean_ap(fx.qf, fx.qid, fx.qcam, fx.gf, fx.gid, fx.gcam),
                      NoValidQueriesError);
}

TEST_CASE("mean_ap equals brute force on random small instances") {
    Rng rng(21);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n_gallery = 2 + rng.uniform_index(7);  // <= 8
        Matrix qf(1, 3);
        for (double& v : qf.data) v = rng.normal();
        qf = l2_normalize_rows(qf);
        Matrix gf(n_gallery, 3);
        for (double& v : gf.data) v = rng.normal();
        gf = l2_normalize_rows(gf);
        std::vector<int> gid(n_gallery), gcam(n_gallery, 1);
        for (auto& v : gid) v = static_cast<int>(rng.uniform_index(3));
        gid[0] = 0;  // guarantee one valid match
        std::vector<double> sims(n_gallery);
        std::vector<bool> relevant(n_gallery);
        for (std::size_t g = 0; g < n_gallery; ++g) {
            sims[g] = dot(qf.row(0), gf.row(g));
            relevant[g] = gid[g] == 0;
        }
        const double brute = oracle::brute_force_ap(sims, relevant);
        const double ours = mean_ap(qf, {0}, {0}, gf, gid, gcam);
        REQUIRE(ours == Approx(brute).margin(1e-12));
    }
}

TEST_CASE("mean_ap and cmc are invariant to gallery permutation") {
    Rng rng(22);
    Matrix qf = l2_normalize_rows([&] {
        Matrix m(3, 4);
        for (double& v : m.data) v = rng.normal();
        return m;
    }());
    Matrix gf = l2_normalize_rows([&] {
        Matrix m(10, 4);
        for (double& v : m.data) v = rng.normal();
        return m;
    }());
    std::vector<int> qid = {0, 1, 2}, qcam = {0, 0, 0};
    std::vector<int> gid(10), gcam(10, 1);
    for (std::size_t g = 0; g < 10; ++g) gid[g] = static_cast<int>(g % 3);

    const double base_map = mean_ap(qf, qid, qcam, gf, gid, gcam);
    const auto base_cmc = cmc(qf, qid, qcam, gf, gid, gcam, {1, 5});

    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t t = 0; t + 1 < perm.size(); ++t)
        std::swap(perm[t], perm[t + rng.uniform_index(perm.size() - t)]);
    Matrix gf2(10, 4);
    std::vector<int> gid2(10), gcam2(10);
    for (std::size_t g = 0; g < 10; ++g) {
        gf2.set_row(g, gf.row(perm[g]));
        gid2[g] = gid[perm[g]];
        gcam2[g] = gcam[perm[g]];
    }
    REQUIRE(mean_ap(qf, qid, qcam, gf2, gid2, gcam2) == Approx(base_map).margin(1e-12));
    const auto perm_cmc = cmc(qf, qid, qcam, gf2, gid2, gcam2, {1, 5});
    REQUIRE(perm_cmc[0] == Approx(base_cmc[0]).margin(1e-12));
    REQUIRE(perm_cmc[1] == Approx(base_cmc[1]).margin(1e-12));
}

TEST_CASE("cmc rank semantics") {
    Fixture fx = fixture_rank1();
    auto hit1 = cmc(fx.qf, fx.qid, fx.qcam, fx.gf, fx.gid, fx.gcam, {1, 5});
    REQUIRE(hit1[0] == 1.0);
    REQUIRE(hit1[1] == 1.0);

    // push the match to rank 2
    fx.gf.at(1, 0) = 0.999;
    fx.gf.at(1, 1) = std::sqrt(1.0 - 0.999 * 0.999);
    fx.gf.at(0, 0) = 0.9;
    fx.gf.at(0, 1) = std::sqrt(1.0 - 0.81);
    auto hit2 = cmc(fx.qf, fx.qid, fx.qcam, fx.gf, fx.gid, fx.gcam, {1, 5});
    REQUIRE(hit2[0] == 0.0);
    REQUIRE(hit2[1] == 1.0);
}

TEST_CASE("cluster metrics: perfect, constant, and hand-computed cases") {
    const std::vector<int> truth = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 1, 0};

    ClusterMetrics perfect = cluster_metrics(truth, truth);
    REQUIRE(perfect.nmi == Approx(1.0).margin(1e-12));
    REQUIRE(perfect.ari == Approx(1.0).margin(1e-12));
    REQUIRE(perfect.purity == Approx(1.0).margin(1e-12));
    REQUIRE(perfect.noise_rate == Approx(0.0).margin(1e-12));

    const std::vector<int> constant(truth.size(), 7);
    ClusterMetrics flat = cluster_metrics(constant, truth);
    REQUIRE(flat.ari == Approx(0.0).margin(1e-12));
    REQUIRE(flat.nmi == Approx(0.0).margin(1e-12));
    REQUIRE(flat.purity == Approx(4.0 / 12.0).margin(1e-12));

    // 12-sample case checked against a by-hand contingency table:
    // pred 0 holds truth {0,0,0,1}, pred 1 holds {1,1,2,2}, pred 2 holds {2,2,1,0}
    const std::vector<int> pred = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    const std::vector<int> tru = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 1, 0};
    ClusterMetrics m = cluster_metrics(pred, tru);
    // contingency: rows pred, cols truth
    //   [3,1,0; 0,2,2; 1,1,2], all margins 4
    const double n = 12.0;
    auto plogp = [](double p) { return p > 0 ? p * std::log(p) : 0.0; };
    double mi = 0.0;
    const double table[3][3] = {{3, 1, 0}, {0, 2, 2}, {1, 1, 2}};
    const double rowm[3] = {4, 4, 4};
    const double colm[3] = {4, 4, 4};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            if (table[a][b] > 0)
                mi += (table[a][b] / n) *
                      std::log((table[a][b] / n) / ((rowm[a] / n) * (colm[b] / n)));
    double hp = 0.0, ht = 0.0;
    for (int a = 0; a < 3; ++a) hp -= plogp(rowm[a] / n);
    for (int b = 0; b < 3; ++b) ht -= plogp(colm[b] / n);
    REQUIRE(m.nmi == Approx(mi / (0.5 * (hp + ht))).margin(1e-12));

    auto c2 = [](double x) { return x * (x - 1) / 2.0; };
    const double sum_cells = c2(3) + c2(1) + c2(2) + c2(2) + c2(1) + c2(1) + c2(2);
    const double sum_rows = 3 * c2(4);
    const double sum_cols = 3 * c2(4);
    const double expected = sum_rows * sum_cols / c2(12);
    const double ari = (sum_cells - expected) / (0.5 * (sum_rows + sum_cols) - expected);
    REQUIRE(m.ari == Approx(ari).margin(1e-12));
    REQUIRE(m.purity == Approx((3 + 2 + 2) / 12.0).margin(1e-12));
    REQUIRE(m.noise_rate == Approx(1.0 - (3 + 2 + 2) / 12.0).margin(1e-12));
}

TEST_CASE("cluster metrics are invariant to label renaming") {
    Rng rng(23);
    std::vector<int> pred(30), truth(30);
    for (auto& v : pred) v = static_cast<int>(rng.uniform_index(4));
    for (auto& v : truth) v = static_cast<int>(rng.uniform_index(3));
    ClusterMetrics base = cluster_metrics(pred, truth);
    std::vector<int> renamed(pred.size());
    const int map[4] = {17, 3, 99, -5};
    for (std::size_t i = 0; i < pred.size(); ++i) renamed[i] = map[pred[i]];
    ClusterMetrics rn = cluster_metrics(renamed, truth);
    REQUIRE(rn.nmi == Approx(base.nmi).margin(1e-12));
    REQUIRE(rn.ari == Approx(base.ari).margin(1e-12));
    REQUIRE(rn.purity == Approx(base.purity).margin(1e-12));

    REQUIRE_THROWS_AS(cluster_metrics(pred, std::vector<int>(29)), LengthMismatchError);
}

TEST_CASE("embedding files round-trip and report parse errors by line") {
    std::stringstream file;
    file << "id,camera,split,f0,f1\n";
    file << "3,0,source,3,4\n";
    file << "5,1,target_train,0,2\n";
    IdentityDataset ds = ingest_embeddings(file);
    REQUIRE(ds.size() == 2);
    REQUIRE(ds.identities == std::vector<int>{3, 5});
    REQUIRE(ds.cameras == std::vector<int>{0, 1});
    // normalized on load
    REQUIRE(ds.inputs.at(0, 0) == Approx(0.6).margin(1e-12));
    REQUIRE(ds.inputs.at(0, 1) == Approx(0.8).margin(1e-12));
    REQUIRE(ds.inputs.at(1, 1) == Approx(1.0).margin(1e-12));

    std::stringstream bad;
    bad << "id,camera,split,f0,f1\n";
    bad << "3,0,source,1,0\n";
    bad << "4,0,source,1\n";
    try {
        ingest_embeddings(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.line == 3);
    }

    // export -> ingest is the identity on already-normalized data
    std::stringstream out;
    export_embeddings(ds, out);
    IdentityDataset back = ingest_embeddings(out);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.inputs.data.size(); ++i)
        REQUIRE(back.inputs.data[i] == Approx(ds.inputs.data[i]).margin(1e-15));
    REQUIRE(back.identities == ds.identities);
    REQUIRE(back.splits.size() == ds.splits.size());
}
