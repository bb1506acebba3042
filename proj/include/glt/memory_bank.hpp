#pragma once

#include <deque>
#include <vector>

#include "glt/losses.hpp"
#include "glt/matrix.hpp"

namespace glt {

struct BankEntry {
    Vector feature;           // unit-norm snapshot
    std::vector<int> labels;  // hard pseudo label per group
    std::size_t instance_id = 0;
};

// FIFO queue of past batch features, decoupling the contrastive loss from
// the batch size. Stored features are snapshots; they are never re-encoded.
class MemoryBank {
public:
    explicit MemoryBank(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    const std::deque<BankEntry>& entries() const { return entries_; }

    void enqueue_batch(std::vector<BankEntry> batch) {
        if (batch.size() > capacity_)
            throw EntryTooLargeError("enqueue_batch: batch exceeds bank capacity");
        for (auto& e : batch) entries_.push_back(std::move(e));
        while (entries_.size() > capacity_) entries_.pop_front();
    }

    // Cosine similarities of the anchor against every stored entry except
    // its own instance, split by the anchor's pseudo label in one group.
    // Entries labeled noise never count as positives.
    PairSplit split_pairs(std::span<const double> anchor_feature, std::size_t anchor_id,
                          const std::vector<int>& anchor_labels, std::size_t group_index) const {
        PairSplit split;
        const int anchor_label =
            group_index < anchor_labels.size() ? anchor_labels[group_index] : kNoiseLabelValue;
        for (const BankEntry& e : entries_) {
            if (e.instance_id == anchor_id) continue;
            const double sim = dot(anchor_feature, e.feature);
            const int lab = group_index < e.labels.size() ? e.labels[group_index] : kNoiseLabelValue;
            if (anchor_label >= 0 && lab == anchor_label)
                split.positive_sims.push_back(sim);
            else
                split.negative_sims.push_back(sim);
        }
        return split;
    }

    // Replace stored pseudo labels after a refinement pass; labels_per_group
    // is indexed [group][instance_id].
    void refresh_labels(const std::vector<std::vector<int>>& labels_per_group) {
        for (BankEntry& e : entries_) {
            for (std::size_t m = 0; m < labels_per_group.size() && m < e.labels.size(); ++m)
                if (e.instance_id < labels_per_group[m].size())
                    e.labels[m] = labels_per_group[m][e.instance_id];
        }
    }

private:
    static constexpr int kNoiseLabelValue = -1;
    std::size_t capacity_;
    std::deque<BankEntry> entries_;
};

}  // namespace glt
