#include "specmoe/specdec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

namespace specmoe {

const char* to_string(DecodeMode mode) {
    return mode == DecodeMode::greedy ? "greedy" : "sampling";
}

void SpecConfig::validate() const {
    if (gamma < 1) throw ConfigError("spec: gamma >= 1 violated");
    if (batch < 1) throw ConfigError("spec: batch >= 1 violated");
    if (max_new_tokens < 1) throw ConfigError("spec: max_new_tokens >= 1 violated");
    if (prompt_len < 1) throw ConfigError("spec: prompt_len >= 1 violated");
    if (mode == DecodeMode::sampling && temperature <= 0.0)
        throw ConfigError("spec: temperature > 0 violated in sampling mode");
    if (warmup_steps < 1) throw ConfigError("spec: warmup_steps >= 1 violated");
}

SpeculationResult speculate(const ModelWeights& weights, const DraftState& draft_state,
                            const AffinityTable* affinity,
                            const std::vector<std::vector<int>>& prefixes, int gamma,
                            DecodeMode mode, double temperature, Rng& rng) {
    const size_t n_seq = prefixes.size();
    RestrictedExperts restricted{draft_state.sets};

    SpeculationResult result;
    result.drafts.assign(n_seq, {});
    result.draw_probs.assign(n_seq, {});
    result.distinct_draft_experts.assign(static_cast<size_t>(gamma), 0);

    std::vector<std::vector<int>> work = prefixes;
    for (int t = 0; t < gamma; ++t) {
        std::set<std::pair<int, int>> executed;
        for (size_t s = 0; s < n_seq; ++s) {
            ForwardResult fr = forward(weights, work[s], &restricted, affinity);
            int token;
            if (mode == DecodeMode::greedy) {
                token = greedy_next(fr.logits);
            } else {
                std::vector<double> scaled(fr.logits.size());
                for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = fr.logits[i] / temperature;
                std::vector<double> q = softmax(scaled);
                token = sample_next(fr.logits, temperature, rng);
                result.draw_probs[s].push_back(std::move(q));
            }
            result.drafts[s].push_back(token);
            work[s].push_back(token);
            for (size_t l = 0; l < fr.activations.size(); ++l)
                for (int e : fr.activations[l].final) executed.insert({static_cast<int>(l), e});
            result.activations.rows.push_back(std::move(fr.activations));
        }
        result.distinct_draft_experts[t] = executed.size();
    }
    return result;
}

VerifyResult verify_greedy(const ModelWeights& weights, const std::vector<int>& prefix,
                           const std::vector<int>& drafts) {
    VerifyResult result;
    std::vector<int> work = prefix;
    const int gamma = static_cast<int>(drafts.size());
    for (int i = 0; i <= gamma; ++i) {
        ForwardResult fr = forward(weights, work);
        result.positions.rows.push_back(std::move(fr.activations));
        result.logits.push_back(std::move(fr.logits));
        if (i < gamma) work.push_back(drafts[i]);
    }

    int accepted = 0;
    while (accepted < gamma && drafts[accepted] == greedy_next(result.logits[accepted])) ++accepted;
    result.accepted = accepted;
    result.correction = greedy_next(result.logits[accepted]);
    return result;
}

VerifyResult verify_sampling(const ModelWeights& weights, const std::vector<int>& prefix,
                             const std::vector<int>& drafts,
                             const std::vector<std::vector<double>>& draw_probs,
                             double temperature, Rng& rng) {
    const int gamma = static_cast<int>(drafts.size());
    if (static_cast<int>(draw_probs.size()) != gamma)
        throw InvariantError("verify_sampling: draw_probs size != drafts size");

    VerifyResult result;
    std::vector<int> work = prefix;
    std::vector<std::vector<double>> target_probs;
    for (int i = 0; i <= gamma; ++i) {
        ForwardResult fr = forward(weights, work);
        result.positions.rows.push_back(std::move(fr.activations));
        std::vector<double> scaled(fr.logits.size());
        for (size_t j = 0; j < scaled.size(); ++j) scaled[j] = fr.logits[j] / temperature;
        target_probs.push_back(softmax(scaled));
        result.logits.push_back(std::move(fr.logits));
        if (i < gamma) work.push_back(drafts[i]);
    }

    int accepted = 0;
    int out_token = -1;
    for (int i = 0; i < gamma; ++i) {
        const std::vector<double>& p = target_probs[i];
        const std::vector<double>& q = draw_probs[i];
        int x = drafts[i];
        if (q[x] <= 0.0)
            throw InvariantError("verify_sampling: zero draw probability for proposed token");
        double u = uniform01(rng);
        if (u < std::min(1.0, p[x] / q[x])) {
            ++accepted;
            continue;
        }
        // Rejected: resample from the normalized residual max(0, p - q).
        std::vector<double> residual(p.size());
        double norm = 0.0;
        for (size_t j = 0; j < p.size(); ++j) {
            residual[j] = std::max(0.0, p[j] - q[j]);
            norm += residual[j];
        }
        if (norm <= 0.0) {
            // p == q everywhere; any draw from p is distribution-correct.
            residual = p;
            norm = 1.0;
        }
        double v = uniform01(rng) * norm;
        double cum = 0.0;
        out_token = static_cast<int>(p.size()) - 1;
        for (size_t j = 0; j < residual.size(); ++j) {
            cum += residual[j];
            if (v < cum) {
                out_token = static_cast<int>(j);
                break;
            }
        }
        break;
    }
    if (accepted == gamma) {
        // All drafts accepted: bonus token from the target distribution.
        const std::vector<double>& p = target_probs[gamma];
        double u = uniform01(rng);
        double cum = 0.0;
        out_token = static_cast<int>(p.size()) - 1;
        for (size_t j = 0; j < p.size(); ++j) {
            cum += p[j];
            if (u < cum) {
                out_token = static_cast<int>(j);
                break;
            }
        }
    }
    result.accepted = accepted;
    result.correction = out_token;
    return result;
}

double speedup_eq1(double tau, int gamma, double c) {
    if (gamma < 1) throw ConfigError("speedup_eq1: gamma >= 1 violated");
    if (c < 0.0) throw ConfigError("speedup_eq1: c >= 0 violated");
    if (tau < 1.0 || tau > gamma + 1.0) throw ConfigError("speedup_eq1: tau outside [1, gamma+1]");
    return tau / (gamma * c + 1.0);
}

double speedup_eq2(double tau, int gamma, double c, double lambda) {
    if (gamma < 1) throw ConfigError("speedup_eq2: gamma >= 1 violated");
    if (c < 0.0) throw ConfigError("speedup_eq2: c >= 0 violated");
    if (lambda <= 0.0) throw ConfigError("speedup_eq2: lambda > 0 violated");
    if (tau < 1.0 || tau > gamma + 1.0) throw ConfigError("speedup_eq2: tau outside [1, gamma+1]");
    return tau / (gamma * c + lambda);
}

double measure_lambda(const std::vector<LambdaInputs>& phases, const TierConfig& tier) {
    if (phases.empty()) throw InvariantError("measure_lambda: empty run");
    double verify_s = 0.0;
    double step_s = 0.0;
    for (const LambdaInputs& ph : phases) {
        verify_s += step_latency(ph.verify_tokens, ph.verify_experts,
                                 ph.verify_experts * tier.bytes_per_expert, tier, false)
                        .total_s;
        step_s += step_latency(ph.step_tokens, ph.step_experts,
                               ph.step_experts * tier.bytes_per_expert, tier, false)
                      .total_s;
    }
    if (step_s <= 0.0) throw InvariantError("measure_lambda: zero single-step latency");
    return verify_s / step_s;
}

RunResult run_specmoe(const ModelWeights& weights, const SpecConfig& config, DraftPolicy policy,
                      const TierConfig& tier, const std::vector<std::vector<int>>& prompts,
                      uint64_t run_seed, const AffinityTable* affinity, bool collect_trace) {
    config.validate();
    const ModelSpec& spec = weights.spec;
    const int moe_layers = spec.moe_layer_count();
    const int E = spec.experts_per_block;
    const int gamma = config.gamma;
    const int n_draft = config.n_draft;
    if (n_draft < spec.top_k) throw ConfigError("spec: n_draft >= top_k violated");
    if (n_draft > E) throw ConfigError("spec: n_draft <= experts_per_block violated");
    if (prompts.empty()) throw ConfigError("run_specmoe: no prompts");
    tier.validate(n_draft, moe_layers);
    if (config.use_affinity && affinity == nullptr)
        throw InvariantError("run_specmoe: affinity table required but missing");
    const AffinityTable* remap = config.use_affinity ? affinity : nullptr;

    const int B = static_cast<int>(prompts.size());
    Rng policy_rng(substream(run_seed, 0x706f6c69ull));  // draft-set selection
    Rng sample_rng(substream(run_seed, 0x73616d70ull));  // sampling draws

    RunResult result;
    result.hotness = HotnessCounter(moe_layers, E);
    ResidencyState residency(spec, tier);

    DraftState ds;
    ds.policy = policy;
    ds.n_draft = n_draft;
    HotnessCounter phase_counter(moe_layers, E);
    // Every policy starts from the same seeded random sets; hot_global
    // replaces them from warmup counts, hot_temporal adapts per phase.
    ds.sets = select_draft_experts(DraftPolicy::random, phase_counter, ds, E, policy_rng);

    if (policy == DraftPolicy::hot_global) {
        // Profiling pass: greedy on-demand steps over the same prompts.
        HotnessCounter warmup_counter(moe_layers, E);
        MigrationLedger warmup_ledger;
        ResidencyState warmup_res(spec, tier);
        std::vector<std::vector<int>> work = prompts;
        for (int step = 0; step < config.warmup_steps; ++step) {
            std::set<ExpertKey> needed;
            ActivationRecord rec;
            for (auto& seq : work) {
                ForwardResult fr = forward(weights, seq);
                for (size_t l = 0; l < fr.activations.size(); ++l)
                    for (int e : fr.activations[l].raw) needed.insert({static_cast<int>(l), e});
                seq.push_back(greedy_next(fr.logits));
                rec.rows.push_back(std::move(fr.activations));
            }
            ensure_resident(needed, Phase::baseline_step, step, warmup_ledger, warmup_res);
            flush_transients(warmup_res);
            record_activations(warmup_counter, rec);
        }
        result.metrics.warmup_bytes = warmup_ledger.total();
        ds.sets = select_draft_experts(DraftPolicy::hot_global, warmup_counter, ds, E, policy_rng);
    }

    // Initial pinning is model setup, not steady state: snapshot and reset.
    pin_draft_experts(ds.sets, residency, result.ledger, Phase::verification, -1);
    result.metrics.setup_bytes = result.ledger.snapshot().total;
    result.ledger.reset();

    std::vector<std::vector<int>> seq = prompts;
    std::vector<int> generated(B, 0);
    result.tokens.assign(B, {});

    uint64_t tau_sum = 0;
    uint64_t tau_count = 0;
    double spec_seconds = 0.0;
    double verify_seconds = 0.0;
    double step_target_seconds = 0.0;  // on-demand single-step cost, for c

    int phase = 0;
    for (;;) {
        std::vector<int> actives;
        for (int b = 0; b < B; ++b)
            if (generated[b] < config.max_new_tokens) actives.push_back(b);
        if (actives.empty()) break;
        const auto n_active = static_cast<uint64_t>(actives.size());

        // Draft experts must already be pinned on device; anything else is a
        // pinning bug upstream.
        for (int l = 0; l < moe_layers; ++l)
            for (int e : ds.sets[l])
                if (!residency.pinned({l, e}) || !residency.device_resident({l, e}))
                    throw InvariantError("run_specmoe: draft expert not pinned on device");

        std::vector<std::vector<int>> prefixes;
        prefixes.reserve(actives.size());
        for (int b : actives) prefixes.push_back(seq[b]);

        uint64_t spec_bytes_before = result.ledger.total(Phase::speculation);
        SpeculationResult sr = speculate(weights, ds, remap, prefixes, gamma, config.mode,
                                         config.temperature, sample_rng);
        if (result.ledger.total(Phase::speculation) != spec_bytes_before)
            throw InvariantError("run_specmoe: speculation phase migrated bytes");
        for (int t = 0; t < gamma; ++t)
            spec_seconds +=
                step_latency(n_active, sr.distinct_draft_experts[t], 0, tier, false).total_s;

        // Parallel verification of all gamma+1 positions per active sequence.
        std::vector<VerifyResult> verdicts;
        verdicts.reserve(actives.size());
        for (size_t i = 0; i < actives.size(); ++i) {
            if (config.mode == DecodeMode::greedy)
                verdicts.push_back(verify_greedy(weights, seq[actives[i]], sr.drafts[i]));
            else
                verdicts.push_back(verify_sampling(weights, seq[actives[i]], sr.drafts[i],
                                                   sr.draw_probs[i], config.temperature,
                                                   sample_rng));
        }

        // Coalesced migration: the union over the batch and all positions.
        std::set<ExpertKey> needed;
        std::set<ExpertKey> first_position;
        for (size_t i = 0; i < actives.size(); ++i) {
            const auto& rows = verdicts[i].positions.rows;
            for (size_t pos = 0; pos < rows.size(); ++pos) {
                for (size_t l = 0; l < rows[pos].size(); ++l) {
                    for (int e : rows[pos][l].raw) {
                        needed.insert({static_cast<int>(l), e});
                        if (pos == 0) first_position.insert({static_cast<int>(l), e});
                    }
                }
            }
        }
        uint64_t verify_bytes =
            ensure_resident(needed, Phase::verification, phase, result.ledger, residency);
        uint64_t verify_tokens = n_active * static_cast<uint64_t>(gamma + 1);
        verify_seconds +=
            step_latency(verify_tokens, needed.size(), verify_bytes, tier, false).total_s;

        result.lambda_inputs.push_back(LambdaInputs{verify_tokens, needed.size(), n_active,
                                                    first_position.size()});
        step_target_seconds += step_latency(n_active, first_position.size(),
                                            first_position.size() * tier.bytes_per_expert, tier,
                                            false)
                                   .total_s;

        // Acceptance bookkeeping and per-sequence advancement.
        for (size_t i = 0; i < actives.size(); ++i) {
            int b = actives[i];
            const VerifyResult& vr = verdicts[i];
            StepOutcome outcome;
            outcome.seq = b;
            outcome.phase = phase;
            outcome.drafts = sr.drafts[i];
            outcome.accepted = vr.accepted;
            outcome.correction = vr.correction;
            outcome.tokens_generated = vr.accepted + 1;
            tau_sum += static_cast<uint64_t>(outcome.tokens_generated);
            ++tau_count;

            std::vector<int> produced(sr.drafts[i].begin(), sr.drafts[i].begin() + vr.accepted);
            produced.push_back(vr.correction);
            int take = std::min<int>(static_cast<int>(produced.size()),
                                     config.max_new_tokens - generated[b]);
            for (int t = 0; t < take; ++t) {
                seq[b].push_back(produced[t]);
                result.tokens[b].push_back(produced[t]);
            }
            generated[b] += take;
            result.outcomes.push_back(std::move(outcome));

            record_activations(phase_counter, vr.positions);
            record_activations(result.hotness, vr.positions);
            if (collect_trace) {
                for (const ActivationRow& row : vr.positions.rows)
                    for (size_t l = 0; l < row.size(); ++l)
                        result.trace.push_back(
                            TraceRow{phase, b, static_cast<int>(l), row[l].raw});
            }
        }

        if (policy == DraftPolicy::hot_temporal) {
            auto next_sets = select_draft_experts(DraftPolicy::hot_temporal, phase_counter, ds, E,
                                                  policy_rng);
            pin_draft_experts(next_sets, residency, result.ledger, Phase::verification, phase);
            ds.sets = std::move(next_sets);
        }
        phase_counter.reset();
        flush_transients(residency);
        ++phase;
    }

    RunMetrics& m = result.metrics;
    m.phases = phase;
    m.tau_mean = tau_count ? static_cast<double>(tau_sum) / static_cast<double>(tau_count) : 1.0;
    m.tokens_total = 0;
    for (const auto& t : result.tokens) m.tokens_total += t.size();
    m.speculation_s = spec_seconds;
    m.verification_s = verify_seconds;
    m.modeled_seconds = spec_seconds + verify_seconds;
    m.tokens_per_sec = m.modeled_seconds > 0.0
                           ? static_cast<double>(m.tokens_total) / m.modeled_seconds
                           : 0.0;
    m.bytes_spec = result.ledger.total(Phase::speculation);
    m.bytes_verify = result.ledger.total(Phase::verification);
    m.bytes_baseline = result.ledger.total(Phase::baseline_step);
    m.bytes_total = result.ledger.total();
    m.lambda = result.lambda_inputs.empty() ? 1.0 : measure_lambda(result.lambda_inputs, tier);
    // c: modeled per-draft-token latency over the on-demand single-step cost.
    m.c_measured = (phase > 0 && step_target_seconds > 0.0)
                       ? (spec_seconds / (static_cast<double>(phase) * gamma)) /
                             (step_target_seconds / static_cast<double>(phase))
                       : 0.0;
    return result;
}

}  // namespace specmoe
