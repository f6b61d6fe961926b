#pragma once

#include <optional>
#include <span>
#include <vector>

#include "specmoe/common.hpp"

namespace specmoe {

struct AffinityTable;  // drafting.hpp

// Description of the toy MoE decoder. "layer" indices below are raw decoder
// layers; most of the library addresses MoE blocks by their ordinal among the
// MoE layers (0..moe_layer_count()-1).
struct ModelSpec {
    int num_layers = 4;
    std::vector<uint8_t> moe_layer_mask;  // empty => every layer is an MoE block
    int experts_per_block = 16;           // E
    int top_k = 2;                        // K
    int hidden_dim = 32;                  // d
    int ffn_dim = 64;                     // f
    int vocab_size = 64;                  // V
    double gate_skew = 0.0;               // scales the decaying gate bias
    uint64_t seed = 0;

    void validate() const;  // throws ConfigError naming the violated invariant
    std::vector<uint8_t> effective_mask() const;
    int moe_layer_count() const;
    // Raw layer index of the m-th MoE block.
    int moe_layer_index(int moe_ordinal) const;
};

struct ExpertWeights {
    std::vector<double> up;    // hidden_dim x ffn_dim, row-major
    std::vector<double> down;  // ffn_dim x hidden_dim, row-major
};

struct LayerWeights {
    bool is_moe = false;
    std::vector<double> mix;  // hidden_dim x hidden_dim attention surrogate
    // MoE block:
    std::vector<double> gate;       // hidden_dim x experts, row-major
    std::vector<double> gate_bias;  // experts; gate_skew * (1 - e/E)
    std::vector<ExpertWeights> experts;
    // Dense block:
    ExpertWeights ffn;
};

struct ModelWeights {
    ModelSpec spec;
    std::vector<double> embedding;  // vocab x hidden_dim
    std::vector<LayerWeights> layers;
    std::vector<double> head;  // hidden_dim x vocab
};

// Deterministic synthetic weights: one mt19937_64 stream seeded with
// spec.seed, Gaussian(0, 1/sqrt(d)) entries via the polar method, tensors
// filled in declaration order (embedding, per-layer mix/gate/experts or ffn,
// head). Gate bias is derived from gate_skew, not drawn.
ModelWeights build_model(const ModelSpec& spec);

// Max-subtracted softmax; throws InvariantError on non-finite input.
std::vector<double> softmax(std::span<const double> logits);

// Indices of the k largest logits, descending by logit, ties to lower index.
std::vector<int> route_topk(std::span<const double> gate_logits, int k);

// Argmax with ties to lower index.
int greedy_next(std::span<const double> logits);

// Draws from softmax(logits / temperature) by inverse CDF on one uniform.
int sample_next(std::span<const double> logits, double temperature, Rng& rng);

// Expert picks of one processed token at one MoE block: the gate's raw top-K
// and the post-remap indices actually executed (identical when unrestricted).
struct LayerActivation {
    std::vector<int> raw;
    std::vector<int> final;
};

// One decoded position: a LayerActivation per MoE block, in block order.
using ActivationRow = std::vector<LayerActivation>;

// Activations of a batch of processed positions.
struct ActivationRecord {
    std::vector<ActivationRow> rows;
};

// One target-side activation row flattened for trace files.
struct TraceRow {
    int step = 0;
    int seq = 0;
    int layer = 0;  // MoE block ordinal
    std::vector<int> experts;
};

struct ForwardResult {
    std::vector<double> logits;  // next-token logits, size vocab
    ActivationRow activations;   // per MoE block
};

// Per-MoE-block allowed expert sets (draft-model semantics). Sets are sorted,
// distinct, and must have size >= K.
struct RestrictedExperts {
    std::vector<std::vector<int>> per_layer;
};

// Stateless forward pass over a prefix: mean-of-embeddings attention
// surrogate, RMS-normalized residual stream, tanh FFN experts. With
// `restricted`, raw gate picks outside the set are remapped (affinity table
// when given, deterministic hash surrogate otherwise); the remapped expert
// keeps the raw pick's softmax gate weight.
ForwardResult forward(const ModelWeights& weights, std::span<const int> prefix,
                      const RestrictedExperts* restricted = nullptr,
                      const AffinityTable* affinity = nullptr);

}  // namespace specmoe
