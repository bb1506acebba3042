#include <catch2/catch_amalgamated.hpp>

#include "glt/memory_bank.hpp"
#include "glt/rng.hpp"

using Catch::Approx;
using namespace glt;

namespace {
BankEntry entry(std::size_t id, double x, double y, std::vector<int> labels = {0}) {
    BankEntry e;
    const double n = std::sqrt(x * x + y * y);
    e.feature = {x / n, y / n};
    e.labels = std::move(labels);
    e.instance_id = id;
    return e;
}

std::vector<std::size_t> ids_of(const MemoryBank& bank) {
    std::vector<std::size_t> ids;
    for (const auto& e : bank.entries()) ids.push_back(e.instance_id);
    return ids;
}
}  // namespace

TEST_CASE("fifo eviction keeps the newest entries in order") {
    MemoryBank bank(4);
    bank.enqueue_batch({entry(0, 1, 0), entry(1, 1, 0), entry(2, 1, 0), entry(3, 1, 0)});
    bank.enqueue_batch({entry(4, 1, 0), entry(5, 1, 0)});
    REQUIRE(ids_of(bank) == std::vector<std::size_t>{2, 3, 4, 5});
}

TEST_CASE("enqueue into an empty bank holds exactly the batch") {
    MemoryBank bank(8);
    bank.enqueue_batch({entry(7, 0, 1), entry(9, 1, 1)});
    REQUIRE(ids_of(bank) == std::vector<std::size_t>{7, 9});
}

TEST_CASE("repeated small batches always leave the last capacity entries") {
    MemoryBank bank(6);
    std::vector<std::size_t> stream;
    for (std::size_t round = 0; round < 10; ++round) {
        std::vector<BankEntry> batch;
        for (std::size_t t = 0; t < 2; ++t) {
            const std::size_t id = round * 2 + t;
            batch.push_back(entry(id, 1, static_cast<double>(id)));
            stream.push_back(id);
        }
        bank.enqueue_batch(std::move(batch));
        const std::size_t keep = std::min<std::size_t>(6, stream.size());
        std::vector<std::size_t> expect(stream.end() - static_cast<std::ptrdiff_t>(keep),
                                        stream.end());
        REQUIRE(ids_of(bank) == expect);
    }
}

TEST_CASE("a batch larger than the capacity is rejected") {
    MemoryBank bank(2);
    REQUIRE_THROWS_AS(bank.enqueue_batch({entry(0, 1, 0), entry(1, 1, 0), entry(2, 1, 0)}),
                      EntryTooLargeError);
}

TEST_CASE("randomized enqueue streams satisfy the suffix invariant") {
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t capacity = 1 + rng.uniform_index(12);
        MemoryBank bank(capacity);
        std::vector<std::size_t> stream;
        const std::size_t batches = 1 + rng.uniform_index(8);
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t sz = 1 + rng.uniform_index(capacity);
            std::vector<BankEntry> batch;
            for (std::size_t t = 0; t < sz; ++t) {
                const std::size_t id = stream.size();
                batch.push_back(entry(id, rng.normal() + 2.0, rng.normal()));
                stream.push_back(id);
            }
            bank.enqueue_batch(std::move(batch));
        }
        const std::size_t keep = std::min(capacity, stream.size());
        std::vector<std::size_t> expect(stream.end() - static_cast<std::ptrdiff_t>(keep),
                                        stream.end());
        REQUIRE(ids_of(bank) == expect);
    }
}

TEST_CASE("split_pairs excludes the anchor's own instance") {
    MemoryBank bank(4);
    bank.enqueue_batch({entry(42, 1, 0)});
    Vector anchor{1, 0};
    PairSplit split = bank.split_pairs(anchor, 42, {0}, 0);
    REQUIRE(split.positive_sims.empty());
    REQUIRE(split.negative_sims.empty());
}

TEST_CASE("split_pairs finds an identical positive") {
    MemoryBank bank(4);
    bank.enqueue_batch({entry(1, 1, 0, {5})});
    Vector anchor{1, 0};
    PairSplit split = bank.split_pairs(anchor, 0, {5}, 0);
    REQUIRE(split.positive_sims.size() == 1);
    REQUIRE(split.positive_sims[0] == Approx(1.0).margin(1e-12));
    REQUIRE(split.negative_sims.empty());
}

TEST_CASE("split_pairs against a mixed bank matches pairwise cosines") {
    MemoryBank bank(8);
    std::vector<BankEntry> entries = {entry(1, 1, 0, {3}), entry(2, 0.8, 0.6, {3}),
                                      entry(3, 0, 1, {7}), entry(4, -1, 0, {9})};
    bank.enqueue_batch(entries);
    Vector anchor{0.6, 0.8};
    PairSplit split = bank.split_pairs(anchor, 99, {3}, 0);
    REQUIRE(split.positive_sims.size() == 2);
    REQUIRE(split.negative_sims.size() == 2);
    REQUIRE(split.positive_sims[0] == Approx(dot(anchor, entries[0].feature)).margin(1e-12));
    REQUIRE(split.positive_sims[1] == Approx(dot(anchor, entries[1].feature)).margin(1e-12));
    REQUIRE(split.negative_sims[0] == Approx(dot(anchor, entries[2].feature)).margin(1e-12));
    REQUIRE(split.negative_sims[1] == Approx(dot(anchor, entries[3].feature)).margin(1e-12));
}

TEST_CASE("pair counts add up to bank size minus anchor occurrences") {
    Rng rng(17);
    MemoryBank bank(16);
    std::vector<BankEntry> batch;
    for (std::size_t i = 0; i < 12; ++i)
        batch.push_back(entry(i % 7, rng.normal() + 2.0, rng.normal(),
                              {static_cast<int>(rng.uniform_index(3))}));
    bank.enqueue_batch(batch);
    for (std::size_t anchor_id = 0; anchor_id < 7; ++anchor_id) {
        Vector anchor{1, 0};
        PairSplit split = bank.split_pairs(anchor, anchor_id, {1}, 0);
        std::size_t own = 0;
        for (const auto& e : bank.entries())
            if (e.instance_id == anchor_id) ++own;
        REQUIRE(split.positive_sims.size() + split.negative_sims.size() == bank.size() - own);
    }
}

TEST_CASE("noise-labeled anchors have no positives") {
    MemoryBank bank(4);
    bank.enqueue_batch({entry(1, 1, 0, {-1}), entry(2, 1, 0, {-1})});
    Vector anchor{1, 0};
    PairSplit split = bank.split_pairs(anchor, 0, {-1}, 0);
    REQUIRE(split.positive_sims.empty());
    REQUIRE(split.negative_sims.size() == 2);
}

TEST_CASE("refresh_labels rewrites labels by instance id") {
    MemoryBank bank(4);
    bank.enqueue_batch({entry(0, 1, 0, {0, 0}), entry(1, 0, 1, {1, 1})});
    std::vector<std::vector<int>> new_labels = {{5, 6}, {7, 8}};
    bank.refresh_labels(new_labels);
    REQUIRE(bank.entries()[0].labels == std::vector<int>{5, 7});
    REQUIRE(bank.entries()[1].labels == std::vector<int>{6, 8});
}
