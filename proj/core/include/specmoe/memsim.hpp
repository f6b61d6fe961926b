#pragma once

#include <compare>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "specmoe/model.hpp"

namespace specmoe {

// Identity of one expert: MoE block ordinal + expert index within the block.
struct ExpertKey {
    int layer = 0;
    int expert = 0;
    auto operator<=>(const ExpertKey&) const = default;
};

enum class Phase { speculation, verification, baseline_step };

const char* to_string(Phase phase);

// Memory-tier shape and the two cost-model coefficient groups. Offloaded
// experts live on the host, or on ssd when ssd_bandwidth > 0 (the ssd regime
// is modeled purely as a bandwidth change, migrating ssd->device directly).
struct TierConfig {
    uint64_t device_capacity_bytes = 0;  // 0 = auto-size in the harness
    double host_bandwidth = 64e9;        // bytes/s, host->device
    double ssd_bandwidth = 0.0;          // bytes/s; 0 disables the ssd tier
    uint64_t bytes_per_expert = 0;       // 2 * hidden_dim * ffn_dim * 4

    double compute_rate_tokens_per_s = 1e6;
    double compute_cost_per_active_expert_s = 2e-6;

    double offload_bandwidth() const { return ssd_bandwidth > 0.0 ? ssd_bandwidth : host_bandwidth; }
    void validate(int n_draft, int moe_layers) const;
};

uint64_t bytes_per_expert(const ModelSpec& spec);  // 4-byte dtype, up+down only

struct LedgerEntry {
    Phase phase;
    int step;
    ExpertKey key;
    uint64_t bytes;
};

// Append-only, byte-exact record of every expert migration.
class MigrationLedger {
public:
    struct Totals {
        uint64_t total = 0;
        uint64_t speculation = 0;
        uint64_t verification = 0;
        uint64_t baseline = 0;
        size_t migrations = 0;
    };

    void add(Phase phase, int step, ExpertKey key, uint64_t bytes);
    const std::vector<LedgerEntry>& entries() const { return entries_; }
    uint64_t total() const { return totals_.total; }
    uint64_t total(Phase phase) const;
    size_t migration_count() const { return entries_.size(); }
    Totals snapshot() const { return totals_; }
    void reset();

    // "phase,step,layer,expert,bytes", one row per migration.
    void write_csv(std::ostream& out) const;

private:
    std::vector<LedgerEntry> entries_;
    Totals totals_;
};

// Which tier holds each expert plus the pinned subset of device residents.
// Single-owner mutable state; one instance per simulation.
class ResidencyState {
public:
    ResidencyState(const ModelSpec& spec, const TierConfig& tier);

    bool device_resident(ExpertKey key) const;
    bool pinned(ExpertKey key) const;
    uint64_t device_bytes_used() const { return device_bytes_; }
    const std::set<ExpertKey>& pinned_set() const { return pinned_; }
    size_t transient_count() const { return residents_.size() - pinned_.size(); }

    const TierConfig& tier() const { return tier_; }
    int moe_layers() const { return moe_layers_; }
    int experts_per_block() const { return experts_; }

private:
    friend uint64_t ensure_resident(const std::set<ExpertKey>&, Phase, int, MigrationLedger&,
                                    ResidencyState&);
    friend uint64_t pin_draft_experts(const std::vector<std::vector<int>>&, ResidencyState&,
                                      MigrationLedger&, Phase, int);
    friend void flush_transients(ResidencyState& residency);

    void check_key(ExpertKey key) const;
    // Fetches one offloaded expert, evicting stale transients if the device
    // is full. `keep` holds keys the caller still needs this step.
    void admit(ExpertKey key, const std::set<ExpertKey>& keep);

    TierConfig tier_;
    int moe_layers_;
    int experts_;
    std::map<ExpertKey, uint64_t> residents_;  // key -> arrival sequence
    std::set<ExpertKey> pinned_;
    uint64_t device_bytes_ = 0;
    uint64_t arrival_seq_ = 0;
};

// Migrates every key not already device-resident exactly once (one tagged
// ledger entry each); returns the new bytes. Migrated keys are evictable
// transients.
uint64_t ensure_resident(const std::set<ExpertKey>& keys, Phase phase, int step,
                         MigrationLedger& ledger, ResidencyState& residency);

// Pins one set per MoE block, unpinning previous draft experts that dropped
// out (they stay resident as transients until the next flush). Keys already
// on device cost zero bytes.
uint64_t pin_draft_experts(const std::vector<std::vector<int>>& per_layer_sets,
                           ResidencyState& residency, MigrationLedger& ledger, Phase phase,
                           int step);

// Per-step transient flush: every unpinned resident is evicted.
void flush_transients(ResidencyState& residency);

struct StepTiming {
    double compute_s = 0.0;
    double migration_s = 0.0;
    double total_s = 0.0;
    bool overlap = false;
};

// compute = tokens/rate + experts * per-expert cost; migration = bytes over
// the offload tier's bandwidth; total = sum, or max under overlap.
StepTiming step_latency(uint64_t active_tokens, uint64_t distinct_active_experts,
                        uint64_t bytes_migrated, const TierConfig& tier, bool overlap_mode);

}  // namespace specmoe
