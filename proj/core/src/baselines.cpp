#include "specmoe/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace specmoe {

const char* to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::ondemand: return "ondemand";
        case BaselineKind::overlap: return "overlap";
        case BaselineKind::caching: return "caching";
    }
    return "?";
}

void BaselineConfig::validate() const {
    if (kind == BaselineKind::caching && (cache_fraction <= 0.0 || cache_fraction >= 1.0))
        throw ConfigError("baseline: 0 < cache_fraction < 1 violated");
    if (warmup_steps < 1) throw ConfigError("baseline: warmup_steps >= 1 violated");
}

namespace {

// Shared token-at-a-time decoding loop. Cached (pinned) experts cost zero
// bytes; each step's remaining activated experts are fetched coalesced across
// the batch and flushed afterwards.
RunResult run_stepwise(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                       const SpecConfig& decode, const TierConfig& tier, uint64_t run_seed,
                       bool overlap_mode, const std::vector<std::vector<int>>* pinned_sets,
                       bool collect_trace) {
    decode.validate();
    const ModelSpec& spec = weights.spec;
    const int moe_layers = spec.moe_layer_count();
    const int B = static_cast<int>(prompts.size());
    if (prompts.empty()) throw ConfigError("baseline run: no prompts");
    tier.validate(0, moe_layers);

    Rng sample_rng(substream(run_seed, 0x73616d70ull));

    RunResult result;
    result.hotness = HotnessCounter(moe_layers, spec.experts_per_block);
    ResidencyState residency(spec, tier);
    if (pinned_sets) {
        pin_draft_experts(*pinned_sets, residency, result.ledger, Phase::baseline_step, -1);
        result.metrics.setup_bytes = result.ledger.snapshot().total;
        result.ledger.reset();
    }

    std::vector<std::vector<int>> seq = prompts;
    result.tokens.assign(B, {});

    double modeled_seconds = 0.0;
    for (int step = 0; step < decode.max_new_tokens; ++step) {
        std::set<ExpertKey> needed;
        ActivationRecord rec;
        for (int b = 0; b < B; ++b) {
            ForwardResult fr = forward(weights, seq[b]);
            for (size_t l = 0; l < fr.activations.size(); ++l)
                for (int e : fr.activations[l].raw) needed.insert({static_cast<int>(l), e});
            int token = decode.mode == DecodeMode::greedy
                            ? greedy_next(fr.logits)
                            : sample_next(fr.logits, decode.temperature, sample_rng);
            seq[b].push_back(token);
            result.tokens[b].push_back(token);
            if (collect_trace)
                for (size_t l = 0; l < fr.activations.size(); ++l)
                    result.trace.push_back(TraceRow{step, b, static_cast<int>(l),
                                                    fr.activations[l].raw});
            rec.rows.push_back(std::move(fr.activations));
        }
        uint64_t bytes =
            ensure_resident(needed, Phase::baseline_step, step, result.ledger, residency);
        modeled_seconds += step_latency(static_cast<uint64_t>(B), needed.size(), bytes, tier,
                                        overlap_mode)
                               .total_s;
        record_activations(result.hotness, rec);
        flush_transients(residency);
    }

    RunMetrics& m = result.metrics;
    m.phases = decode.max_new_tokens;
    m.tau_mean = 1.0;  // one token per target execution, by definition
    m.tokens_total = static_cast<uint64_t>(B) * decode.max_new_tokens;
    m.modeled_seconds = modeled_seconds;
    m.verification_s = modeled_seconds;
    m.tokens_per_sec =
        modeled_seconds > 0.0 ? static_cast<double>(m.tokens_total) / modeled_seconds : 0.0;
    m.bytes_spec = result.ledger.total(Phase::speculation);
    m.bytes_verify = result.ledger.total(Phase::verification);
    m.bytes_baseline = result.ledger.total(Phase::baseline_step);
    m.bytes_total = result.ledger.total();
    m.lambda = 1.0;
    m.c_measured = 0.0;
    return result;
}

}  // namespace

RunResult run_ondemand(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                       const SpecConfig& decode, const TierConfig& tier, uint64_t run_seed,
                       bool collect_trace) {
    return run_stepwise(weights, prompts, decode, tier, run_seed, false, nullptr, collect_trace);
}

RunResult run_overlap(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                      const SpecConfig& decode, const TierConfig& tier, uint64_t run_seed,
                      bool collect_trace) {
    return run_stepwise(weights, prompts, decode, tier, run_seed, true, nullptr, collect_trace);
}

RunResult run_caching(const ModelWeights& weights, const std::vector<std::vector<int>>& prompts,
                      const SpecConfig& decode, const TierConfig& tier,
                      const BaselineConfig& config, uint64_t run_seed, bool collect_trace) {
    config.validate();
    const ModelSpec& spec = weights.spec;
    const int moe_layers = spec.moe_layer_count();
    const int E = spec.experts_per_block;

    // Warmup: greedy on-demand profiling over the same prompts; its ledger is
    // reported separately from the measured pass.
    HotnessCounter counter(moe_layers, E);
    MigrationLedger warmup_ledger;
    ResidencyState warmup_res(spec, tier);
    std::vector<std::vector<int>> work = prompts;
    for (int step = 0; step < config.warmup_steps; ++step) {
        std::set<ExpertKey> needed;
        ActivationRecord rec;
        for (auto& s : work) {
            ForwardResult fr = forward(weights, s);
            for (size_t l = 0; l < fr.activations.size(); ++l)
                for (int e : fr.activations[l].raw) needed.insert({static_cast<int>(l), e});
            s.push_back(greedy_next(fr.logits));
            rec.rows.push_back(std::move(fr.activations));
        }
        ensure_resident(needed, Phase::baseline_step, step, warmup_ledger, warmup_res);
        flush_transients(warmup_res);
        record_activations(counter, rec);
    }

    const int cache_per_layer = static_cast<int>(std::ceil(config.cache_fraction * E));
    uint64_t cache_bytes =
        static_cast<uint64_t>(cache_per_layer) * moe_layers * tier.bytes_per_expert;
    if (cache_bytes > tier.device_capacity_bytes)
        throw ConfigError("caching: cached experts exceed device capacity");

    DraftState scratch;
    scratch.n_draft = cache_per_layer;
    Rng unused_rng(0);
    auto cached = select_draft_experts(DraftPolicy::hot_global, counter, scratch, E, unused_rng);

    RunResult result = run_stepwise(weights, prompts, decode, tier, run_seed, false, &cached,
                                    collect_trace);
    result.metrics.warmup_bytes = warmup_ledger.total();
    return result;
}

}  // namespace specmoe
