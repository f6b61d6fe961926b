#include "specmoe/memsim.hpp"

#include <algorithm>
#include <ostream>

namespace specmoe {

const char* to_string(Phase phase) {
    switch (phase) {
        case Phase::speculation: return "speculation";
        case Phase::verification: return "verification";
        case Phase::baseline_step: return "baseline-step";
    }
    return "?";
}

uint64_t bytes_per_expert(const ModelSpec& spec) {
    // Two FFN projection matrices in the 4-byte model dtype.
    return 2ull * spec.hidden_dim * spec.ffn_dim * 4ull;
}

void TierConfig::validate(int n_draft, int moe_layers) const {
    if (host_bandwidth <= 0.0) throw ConfigError("tier: host_bandwidth > 0 violated");
    if (ssd_bandwidth < 0.0) throw ConfigError("tier: ssd_bandwidth >= 0 violated");
    if (bytes_per_expert == 0) throw ConfigError("tier: bytes_per_expert > 0 violated");
    if (compute_rate_tokens_per_s <= 0.0) throw ConfigError("tier: compute_rate > 0 violated");
    if (compute_cost_per_active_expert_s < 0.0)
        throw ConfigError("tier: expert compute cost >= 0 violated");
    uint64_t need = static_cast<uint64_t>(n_draft) * moe_layers * bytes_per_expert;
    if (device_capacity_bytes < need)
        throw ConfigError("tier: device capacity below N * moe_layers * bytes_per_expert");
}

void MigrationLedger::add(Phase phase, int step, ExpertKey key, uint64_t bytes) {
    entries_.push_back(LedgerEntry{phase, step, key, bytes});
    totals_.total += bytes;
    switch (phase) {
        case Phase::speculation: totals_.speculation += bytes; break;
        case Phase::verification: totals_.verification += bytes; break;
        case Phase::baseline_step: totals_.baseline += bytes; break;
    }
    totals_.migrations = entries_.size();
}

uint64_t MigrationLedger::total(Phase phase) const {
    switch (phase) {
        case Phase::speculation: return totals_.speculation;
        case Phase::verification: return totals_.verification;
        case Phase::baseline_step: return totals_.baseline;
    }
    return 0;
}

void MigrationLedger::reset() {
    entries_.clear();
    totals_ = Totals{};
}

void MigrationLedger::write_csv(std::ostream& out) const {
    out << "phase,step,layer,expert,bytes\n";
    for (const LedgerEntry& e : entries_) {
        out << to_string(e.phase) << ',' << e.step << ',' << e.key.layer << ',' << e.key.expert
            << ',' << e.bytes << "\n";
    }
}

ResidencyState::ResidencyState(const ModelSpec& spec, const TierConfig& tier)
    : tier_(tier), moe_layers_(spec.moe_layer_count()), experts_(spec.experts_per_block) {
    tier_.validate(0, moe_layers_);
}

void ResidencyState::check_key(ExpertKey key) const {
    if (key.layer < 0 || key.layer >= moe_layers_ || key.expert < 0 || key.expert >= experts_)
        throw InvariantError("residency: expert key out of range");
}

bool ResidencyState::device_resident(ExpertKey key) const { return residents_.count(key) != 0; }

bool ResidencyState::pinned(ExpertKey key) const { return pinned_.count(key) != 0; }

void ResidencyState::admit(ExpertKey key, const std::set<ExpertKey>& keep) {
    while (device_bytes_ + tier_.bytes_per_expert > tier_.device_capacity_bytes) {
        // Evict the oldest transient that is neither pinned nor still needed.
        auto victim = residents_.end();
        uint64_t oldest = 0;
        for (auto it = residents_.begin(); it != residents_.end(); ++it) {
            if (pinned_.count(it->first) || keep.count(it->first)) continue;
            if (victim == residents_.end() || it->second < oldest) {
                victim = it;
                oldest = it->second;
            }
        }
        if (victim == residents_.end())
            throw InvariantError("residency: device capacity exhausted with no evictable expert");
        residents_.erase(victim);
        device_bytes_ -= tier_.bytes_per_expert;
    }
    residents_.emplace(key, arrival_seq_++);
    device_bytes_ += tier_.bytes_per_expert;
}

uint64_t ensure_resident(const std::set<ExpertKey>& keys, Phase phase, int step,
                         MigrationLedger& ledger, ResidencyState& residency) {
    uint64_t bytes = 0;
    for (ExpertKey key : keys) {
        residency.check_key(key);
        if (residency.device_resident(key)) continue;
        residency.admit(key, keys);
        ledger.add(phase, step, key, residency.tier_.bytes_per_expert);
        bytes += residency.tier_.bytes_per_expert;
    }
    return bytes;
}

uint64_t pin_draft_experts(const std::vector<std::vector<int>>& per_layer_sets,
                           ResidencyState& residency, MigrationLedger& ledger, Phase phase,
                           int step) {
    if (static_cast<int>(per_layer_sets.size()) != residency.moe_layers_)
        throw InvariantError("pin_draft_experts: set count != MoE layer count");

    std::set<ExpertKey> target;
    for (int l = 0; l < residency.moe_layers_; ++l) {
        for (int e : per_layer_sets[l]) {
            ExpertKey key{l, e};
            residency.check_key(key);
            if (!target.insert(key).second)
                throw InvariantError("pin_draft_experts: duplicate expert in draft set");
        }
    }

    // Unpin dropped experts first; they stay resident as transients until the
    // next flush, so a later re-pin within this step is still free.
    for (auto it = residency.pinned_.begin(); it != residency.pinned_.end();) {
        if (!target.count(*it))
            it = residency.pinned_.erase(it);
        else
            ++it;
    }

    uint64_t bytes = 0;
    for (ExpertKey key : target) {
        if (!residency.device_resident(key)) {
            residency.admit(key, target);
            ledger.add(phase, step, key, residency.tier_.bytes_per_expert);
            bytes += residency.tier_.bytes_per_expert;
        }
        residency.pinned_.insert(key);
    }
    return bytes;
}

void flush_transients(ResidencyState& residency) {
    for (auto it = residency.residents_.begin(); it != residency.residents_.end();) {
        if (!residency.pinned_.count(it->first)) {
            residency.device_bytes_ -= residency.tier_.bytes_per_expert;
            it = residency.residents_.erase(it);
        } else {
            ++it;
        }
    }
}

StepTiming step_latency(uint64_t active_tokens, uint64_t distinct_active_experts,
                        uint64_t bytes_migrated, const TierConfig& tier, bool overlap_mode) {
    StepTiming t;
    t.overlap = overlap_mode;
    t.compute_s = static_cast<double>(active_tokens) / tier.compute_rate_tokens_per_s +
                  static_cast<double>(distinct_active_experts) * tier.compute_cost_per_active_expert_s;
    t.migration_s = static_cast<double>(bytes_migrated) / tier.offload_bandwidth();
    t.total_s = overlap_mode ? std::max(t.compute_s, t.migration_s) : t.compute_s + t.migration_s;
    return t;
}

}  // namespace specmoe
