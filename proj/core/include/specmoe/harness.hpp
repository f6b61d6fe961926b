#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "specmoe/baselines.hpp"
#include "specmoe/specdec.hpp"

namespace specmoe {

// A full experiment description parsed from a flat "key = value" file.
// Scalar knobs double as one-element sweep axes.
struct ExperimentConfig {
    ModelSpec model;
    TierConfig tier;
    SpecConfig spec;
    BaselineConfig baseline;

    std::string engine = "specmoe";  // specmoe | ondemand | overlap | caching
    DraftPolicy policy = DraftPolicy::hot_temporal;

    std::vector<uint64_t> seeds;  // default {0..19}
    std::vector<int> batch_list;
    std::vector<int> gamma_list;
    std::vector<int> n_draft_list;
    std::vector<double> bandwidth_list;  // overrides tier.host_bandwidth per cell

    std::string trace_out;  // single-cell sweeps only
    bool verbose = false;   // adds the text_hash column

    void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
std::string serialize_config(const ExperimentConfig& config);

struct ResultRow {
    std::string policy;  // engine name, or draft policy for specmoe rows
    int batch = 1;
    int gamma = 10;
    int n_draft = 4;
    double bandwidth = 64e9;
    uint64_t seed = 0;
    double tau = 1.0;
    double tokens_per_sec = 0.0;
    uint64_t bytes_total = 0;
    uint64_t bytes_spec = 0;
    uint64_t bytes_verify = 0;
    double lambda = 1.0;
    double s_eq1 = 1.0;
    double s_eq2 = 1.0;
    uint64_t text_hash = 0;     // FNV-1a over all sequences' tokens
    double sim_wall_s = 0.0;    // wall-clock of the simulation itself (not emitted)
};

// Deterministic prompt material: sequence b's prompt depends only on
// (seed, b), so it is identical at every batch size.
std::vector<std::vector<int>> make_prompts(uint64_t seed, int batch, int prompt_len, int vocab);

// Cartesian sweep over (bandwidth x batch x gamma x n_draft) x seeds, rows in
// that loop order.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

// CSV header:
// policy,batch,gamma,n_draft,bandwidth,seed,tau,tokens_per_sec,bytes_total,bytes_spec,bytes_verify,lambda,s_eq1,s_eq2
// (verbose appends text_hash). JSON is an array of objects, same names.
void emit_results(std::span<const ResultRow> rows, const std::string& format, std::ostream& out,
                  bool verbose = false);
void emit_results(std::span<const ResultRow> rows, const std::string& format,
                  const std::string& path, bool verbose = false);

// Trace file: "# specmoe-trace v1 layers=<M> experts=<E> top_k=<K>", then
// "step,seq,layer,experts" with one trailing column per routed expert.
struct TraceFile {
    int moe_layers = 0;
    int experts = 0;
    int top_k = 0;
    std::vector<TraceRow> rows;
};

void write_trace(const TraceFile& trace, std::ostream& out);
void write_trace(const TraceFile& trace, const std::string& path);
TraceFile read_trace(std::istream& in);
TraceFile read_trace(const std::string& path);

HotnessCounter ingest_trace(const TraceFile& trace);
HotnessCounter ingest_trace(const std::string& path);

struct TraceReport {
    double skewness = 0.0;
    uint64_t routed_tokens = 0;
    std::vector<std::vector<int>> hottest;            // per block, hotness-ordered expert ids
    std::vector<std::vector<uint64_t>> frequencies;   // per block, per expert
};

TraceReport analyze_trace(const HotnessCounter& counter, int top_n = 10);

// Heatmap-ready CSV: "layer,expert,count,fraction".
void write_trace_report(const TraceReport& report, std::ostream& out);
void write_trace_report(const TraceReport& report, const std::string& path);

// Fast invariant suite behind the `selftest` CLI verb. Prints one line per
// check; returns false if any check fails.
bool selftest(std::ostream& out);

}  // namespace specmoe
