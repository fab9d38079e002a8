#pragma once

// Class-imbalance-aware batch composition: one sample-id list per organelle,
// equal picks per non-empty list each batch, shuffled-cycling draws.

#include <array>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "silico/core.hpp"
#include "silico/dataset.hpp"

namespace silico {

struct OrganelleLists {
    std::array<std::vector<std::string>, kNumOrganelles> ids;

    const std::vector<std::string>& list(Organelle o) const { return ids[channel_index(o)]; }
    int non_empty() const {
        int n = 0;
        for (const auto& l : ids) n += l.empty() ? 0 : 1;
        return n;
    }
};

// Lists exactly reflect availability, optionally restricted to one modality
// (the separate-network strategy).
inline OrganelleLists build_organelle_lists(const Manifest& m,
                                            std::optional<Modality> modality_filter = {}) {
    OrganelleLists lists;
    for (const auto& e : m.entries) {
        if (modality_filter && e.modality != *modality_filter) continue;
        for (const auto& [o, path] : e.target_paths) {
            lists.ids[channel_index(o)].push_back(e.id);
        }
    }
    if (lists.non_empty() == 0) {
        throw ConfigError("no labeled samples" +
                          (modality_filter ? " for modality " + to_string(*modality_filter)
                                           : std::string()));
    }
    return lists;
}

struct BatchPlan {
    // (sample id, focus organelle); focus only drives selection, the loss
    // still trains every available channel of the sample.
    std::vector<std::pair<std::string, Organelle>> picks;
};

// Stateful balanced sampler. Each non-empty list is shuffled, consumed in
// order and reshuffled when exhausted, so within one cycle no id repeats
// before all appear. Single-owner: not safe for concurrent mutation.
class BalancedSampler {
public:
    BalancedSampler(OrganelleLists lists, uint64_t seed)
        : lists_(std::move(lists)), rng_(seed) {
        for (int k = 0; k < kNumOrganelles; ++k) {
            order_[k].resize(lists_.ids[k].size());
            for (size_t i = 0; i < order_[k].size(); ++i) order_[k][i] = i;
            cursor_[k] = order_[k].size();  // force shuffle on first draw
        }
    }

    const OrganelleLists& lists() const { return lists_; }

    BatchPlan next_batch(int batch_size) {
        const int k = lists_.non_empty();
        if (batch_size <= 0 || batch_size % k != 0) {
            throw ConfigError("batch_size " + std::to_string(batch_size) +
                              " not divisible by " + std::to_string(k) +
                              " non-empty organelle lists");
        }
        const int quota = batch_size / k;
        BatchPlan plan;
        plan.picks.reserve(batch_size);
        for (Organelle o : kOrganelles) {
            const int c = channel_index(o);
            if (lists_.ids[c].empty()) continue;
            for (int i = 0; i < quota; ++i) {
                plan.picks.emplace_back(draw(c), o);
            }
        }
        return plan;
    }

    // State round-trips through a printable string (for checkpoints).
    std::string save_state() const {
        std::ostringstream os;
        os << rng_state_string(rng_);
        for (int k = 0; k < kNumOrganelles; ++k) {
            os << "\n" << cursor_[k];
            for (size_t v : order_[k]) os << " " << v;
        }
        return os.str();
    }

    void load_state(const std::string& state) {
        std::istringstream is(state);
        std::string rng_line;
        std::getline(is, rng_line);
        rng_set_state(rng_, rng_line);
        for (int k = 0; k < kNumOrganelles; ++k) {
            std::string line;
            std::getline(is, line);
            std::istringstream ls(line);
            ls >> cursor_[k];
            for (size_t i = 0; i < order_[k].size(); ++i) ls >> order_[k][i];
            if (ls.fail()) throw FormatError("bad sampler state string");
        }
    }

private:
    std::string draw(int k) {
        auto& order = order_[k];
        if (cursor_[k] >= order.size()) {
            // Fisher-Yates with the project's pinned uniform draw.
            for (size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[uniform_below(rng_, i)]);
            }
            cursor_[k] = 0;
        }
        return lists_.ids[k][order[cursor_[k]++]];
    }

    OrganelleLists lists_;
    std::array<std::vector<size_t>, kNumOrganelles> order_;
    std::array<size_t, kNumOrganelles> cursor_{};
    Rng rng_;
};

}  // namespace silico
