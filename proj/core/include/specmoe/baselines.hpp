#pragma once

#include <string>
#include <vector>

#include "specmoe/specdec.hpp"

namespace specmoe {

enum class BaselineKind { ondemand, overlap, caching };

const char* to_string(BaselineKind kind);

struct BaselineConfig {
    BaselineKind kind = BaselineKind::ondemand;
    double cache_fraction = 0.10;  // caching only
    int warmup_steps = 64;         // caching hotness profiling

    void validate() const;
};

// One target forward per generated token; that step's activated experts are
// fetched coalesced across the batch and flushed afterwards.
RunResult run_ondemand(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                       const SpecConfig& decode, const TierConfig& tier, uint64_t run_seed,
                       bool collect_trace = false);

// Oracular overlap: identical token stream and ledger to run_ondemand, but
// per-step latency is max(compute, migration).
RunResult run_overlap(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                      const SpecConfig& decode, const TierConfig& tier, uint64_t run_seed,
                      bool collect_trace = false);

// Pins the top ceil(cache_fraction * E) experts per block by warmup hotness
// (greedy on-demand profiling pass over the same prompts, ledger excluded),
// then runs on-demand with cached hits costing zero bytes.
RunResult run_caching(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                      const SpecConfig& decode, const TierConfig& tier,
                      const BaselineConfig& config, uint64_t run_seed, bool collect_trace = false);

}  // namespace specmoe
