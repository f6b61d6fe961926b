#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "specmoe/model.hpp"

namespace specmoe {

// Pairwise L2 distances between flattened expert weights (up || down
// concatenated), one E x E symmetric matrix per MoE block.
struct AffinityTable {
    int experts = 0;
    std::vector<std::vector<double>> dist;  // per MoE block, E*E row-major

    double at(int layer, int i, int j) const { return dist[layer][static_cast<size_t>(i) * experts + j]; }
};

AffinityTable build_affinity_table(const ModelWeights& weights);

// CSV serialization: "# specmoe-affinity v1 layers=<M> experts=<E>", then
// "layer,i,j,distance" rows for the upper triangle (i < j).
void save_affinity_csv(const AffinityTable& table, std::ostream& out);
void save_affinity_csv(const AffinityTable& table, const std::string& path);
AffinityTable load_affinity_csv(std::istream& in);
AffinityTable load_affinity_csv(const std::string& path);

// Member of draft_set \ excluded nearest to raw_pick; raw_pick wins via its
// zero self-distance when eligible; ties to lower index.
int nearest_draft_expert(const AffinityTable& table, int layer, int raw_pick,
                         std::span<const int> draft_set, std::span<const int> excluded);

// Affinity-free remap used for the ablation: a hash-seeded uniform pick from
// draft_set \ excluded. Deterministic in (layer, raw_pick, prefix_len).
int surrogate_draft_expert(int layer, int raw_pick, size_t prefix_len,
                           std::span<const int> draft_set, std::span<const int> excluded);

enum class DraftPolicy { random, hot_global, hot_temporal };

const char* to_string(DraftPolicy policy);
DraftPolicy draft_policy_from_string(const std::string& name);

// Pinned draft-expert sets, one per MoE block, each of exactly N distinct
// indices with N >= K.
struct DraftState {
    DraftPolicy policy = DraftPolicy::hot_temporal;
    int n_draft = 4;  // N
    std::vector<std::vector<int>> sets;
};

// Per-block activation counts over a window (one verification phase for
// hot_temporal, the warmup run for hot_global).
struct HotnessCounter {
    std::vector<std::vector<uint64_t>> counts;  // per MoE block, size E
    uint64_t routed_tokens = 0;

    HotnessCounter() = default;
    HotnessCounter(int moe_layers, int experts)
        : counts(moe_layers, std::vector<uint64_t>(experts, 0)) {}
    void reset();
};

// Increments each raw (pre-remap) gate pick by one; rows from rejected draft
// positions count too since verification computes all of them.
void record_activations(HotnessCounter& counter, const ActivationRecord& record);

// Next per-block draft sets. random: N distinct seeded picks. hot_global /
// hot_temporal: top-N by count (ties to lower index); blocks with fewer than
// N activated experts keep members of the current set for the remainder, so
// the result stays inside (activated union current).
std::vector<std::vector<int>> select_draft_experts(DraftPolicy policy, const HotnessCounter& counter,
                                                   const DraftState& current, int experts_per_block,
                                                   Rng& rng);

// Mean over MoE blocks of (tokens routed to the top ceil(top_fraction*E)
// hottest experts) / (all routed tokens). 0.25 when uniform, 1.0 when
// one expert takes everything.
double skewness(const HotnessCounter& counter, double top_fraction = 0.25);

}  // namespace specmoe
