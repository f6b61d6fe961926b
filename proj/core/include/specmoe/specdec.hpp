#pragma once

#include <optional>
#include <string>
#include <vector>

#include "specmoe/drafting.hpp"
#include "specmoe/memsim.hpp"
#include "specmoe/model.hpp"

namespace specmoe {

enum class DecodeMode { greedy, sampling };

const char* to_string(DecodeMode mode);

struct SpecConfig {
    int gamma = 10;   // draft tokens per speculation phase
    int n_draft = 4;  // pinned draft experts per MoE block (N >= K)
    DecodeMode mode = DecodeMode::greedy;
    double temperature = 1.0;
    int batch = 1;
    int max_new_tokens = 32;
    int prompt_len = 8;
    bool use_affinity = true;
    int warmup_steps = 64;  // hot_global profiling window

    void validate() const;
};

// One speculative step of one sequence.
struct StepOutcome {
    int seq = 0;
    int phase = 0;
    std::vector<int> drafts;
    int accepted = 0;    // a in [0, gamma]
    int correction = 0;  // corrected token, or bonus token when accepted == gamma
    int tokens_generated = 0;  // accepted + 1, before truncation
};

struct RunMetrics {
    double tau_mean = 1.0;  // mean tokens generated per speculative step
    uint64_t tokens_total = 0;
    int phases = 0;
    double speculation_s = 0.0;
    double verification_s = 0.0;
    double modeled_seconds = 0.0;
    double tokens_per_sec = 0.0;
    uint64_t bytes_spec = 0;
    uint64_t bytes_verify = 0;
    uint64_t bytes_baseline = 0;
    uint64_t bytes_total = 0;
    uint64_t setup_bytes = 0;   // initial draft pinning / cache fill, pre-ledger
    uint64_t warmup_bytes = 0;  // profiling pass, reported separately
    double lambda = 1.0;
    double c_measured = 0.0;
};

// Cost-model inputs of one speculative phase, in on-demand terms: the
// verification pass over all batch x (gamma+1) positions vs a single batched
// target step (position 0 of each sequence), each fetching its own distinct
// experts fresh.
struct LambdaInputs {
    uint64_t verify_tokens = 0;
    uint64_t verify_experts = 0;
    uint64_t step_tokens = 0;
    uint64_t step_experts = 0;
};

struct RunResult {
    std::vector<std::vector<int>> tokens;  // per sequence, prompt excluded
    RunMetrics metrics;
    MigrationLedger ledger;
    std::vector<StepOutcome> outcomes;
    std::vector<TraceRow> trace;  // target-side raw activations, when collected
    HotnessCounter hotness;       // whole-run target-side counts
    std::vector<LambdaInputs> lambda_inputs;
};

struct SpeculationResult {
    std::vector<std::vector<int>> drafts;  // per sequence, gamma tokens
    // Sampling mode: the draft distribution actually sampled (post-remap),
    // per sequence per position, each of size vocab.
    std::vector<std::vector<std::vector<double>>> draw_probs;
    ActivationRecord activations;        // draft-side rows, per sequence-major order
    std::vector<uint64_t> distinct_draft_experts;  // per draft position, across the batch
};

// Autoregressive draft generation with forward() restricted to the pinned
// draft sets. Pure model math: no residency calls, so no migration bytes.
SpeculationResult speculate(const ModelWeights& weights, const DraftState& draft_state,
                            const AffinityTable* affinity,
                            const std::vector<std::vector<int>>& prefixes, int gamma,
                            DecodeMode mode, double temperature, Rng& rng);

struct VerifyResult {
    int accepted = 0;
    int correction = 0;
    // Raw target activations for all gamma+1 positions (rejected ones too).
    ActivationRecord positions;
    std::vector<std::vector<double>> logits;  // per position
};

// Greedy verification: target logits for all gamma+1 positions, accepted
// prefix = longest match with target argmax, plus corrected/bonus token.
VerifyResult verify_greedy(const ModelWeights& weights, const std::vector<int>& prefix,
                           const std::vector<int>& drafts);

// Leviathan-style sampling verification: accept draft x_i with probability
// min(1, p_i(x)/q_i(x)); on first rejection resample from the normalized
// residual max(0, p_i - q_i); bonus token from p_gamma when all accepted.
VerifyResult verify_sampling(const ModelWeights& weights, const std::vector<int>& prefix,
                             const std::vector<int>& drafts,
                             const std::vector<std::vector<double>>& draw_probs,
                             double temperature, Rng& rng);

// Full self-assisted speculative decoding loop: speculate -> coalesced
// ensure_resident over the union of all batch x (gamma+1) verification
// positions -> verify -> hotness update -> draft-set refresh (hot_temporal)
// -> pin -> transient flush. Sequences advance independently and drop out at
// max_new_tokens.
RunResult run_specmoe(const ModelWeights& weights, const SpecConfig& config, DraftPolicy policy,
                      const TierConfig& tier, const std::vector<std::vector<int>>& prompts,
                      uint64_t run_seed, const AffinityTable* affinity, bool collect_trace = false);

// Expected speedup of speculative decoding: tau / (gamma * c + 1).
double speedup_eq1(double tau, int gamma, double c);

// Batched-inference speedup: tau / (gamma * c + lambda).
double speedup_eq2(double tau, int gamma, double c, double lambda);

// lambda = sum of modeled verification latencies / sum of modeled
// single-step target latencies. Throws InvariantError on an empty run.
double measure_lambda(const std::vector<LambdaInputs>& phases, const TierConfig& tier);

}  // namespace specmoe
