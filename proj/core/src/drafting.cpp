#include "specmoe/drafting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace specmoe {

const char* to_string(DraftPolicy policy) {
    switch (policy) {
        case DraftPolicy::random: return "random";
        case DraftPolicy::hot_global: return "hot_global";
        case DraftPolicy::hot_temporal: return "hot_temporal";
    }
    return "?";
}

DraftPolicy draft_policy_from_string(const std::string& name) {
    if (name == "random") return DraftPolicy::random;
    if (name == "hot_global") return DraftPolicy::hot_global;
    if (name == "hot_temporal") return DraftPolicy::hot_temporal;
    throw ConfigError("unknown draft policy: " + name);
}

AffinityTable build_affinity_table(const ModelWeights& weights) {
    const ModelSpec& spec = weights.spec;
    const int E = spec.experts_per_block;
    AffinityTable table;
    table.experts = E;
    for (const LayerWeights& layer : weights.layers) {
        if (!layer.is_moe) continue;
        std::vector<double> dist(static_cast<size_t>(E) * E, 0.0);
        for (int i = 0; i < E; ++i) {
            for (int j = i + 1; j < E; ++j) {
                const ExpertWeights& a = layer.experts[i];
                const ExpertWeights& b = layer.experts[j];
                double ss = 0.0;
                for (size_t k = 0; k < a.up.size(); ++k) {
                    double diff = a.up[k] - b.up[k];
                    ss += diff * diff;
                }
                for (size_t k = 0; k < a.down.size(); ++k) {
                    double diff = a.down[k] - b.down[k];
                    ss += diff * diff;
                }
                double d = std::sqrt(ss);
                dist[static_cast<size_t>(i) * E + j] = d;
                dist[static_cast<size_t>(j) * E + i] = d;
            }
        }
        table.dist.push_back(std::move(dist));
    }
    return table;
}

void save_affinity_csv(const AffinityTable& table, std::ostream& out) {
    out << "# specmoe-affinity v1 layers=" << table.dist.size() << " experts=" << table.experts
        << "\n";
    out << "layer,i,j,distance\n";
    char buf[64];
    for (size_t l = 0; l < table.dist.size(); ++l) {
        for (int i = 0; i < table.experts; ++i) {
            for (int j = i + 1; j < table.experts; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", table.at(static_cast<int>(l), i, j));
                out << l << ',' << i << ',' << j << ',' << buf << "\n";
            }
        }
    }
}

void save_affinity_csv(const AffinityTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    save_affinity_csv(table, out);
}

AffinityTable load_affinity_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("affinity file: empty");
    int layers = 0, experts = 0;
    if (std::sscanf(line.c_str(), "# specmoe-affinity v1 layers=%d experts=%d", &layers, &experts) !=
        2)
        throw ConfigError("affinity file: bad or missing version header");
    if (!std::getline(in, line) || line != "layer,i,j,distance")
        throw ConfigError("affinity file: bad column header");

    AffinityTable table;
    table.experts = experts;
    table.dist.assign(layers, std::vector<double>(static_cast<size_t>(experts) * experts, 0.0));
    int lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        int l = 0, i = 0, j = 0;
        double d = 0.0;
        if (std::sscanf(line.c_str(), "%d,%d,%d,%lf", &l, &i, &j, &d) != 4)
            throw ConfigError("affinity file: parse error at line " + std::to_string(lineno));
        if (l < 0 || l >= layers || i < 0 || i >= experts || j < 0 || j >= experts)
            throw ConfigError("affinity file: index out of range at line " + std::to_string(lineno));
        table.dist[l][static_cast<size_t>(i) * experts + j] = d;
        table.dist[l][static_cast<size_t>(j) * experts + i] = d;
    }
    return table;
}

AffinityTable load_affinity_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    return load_affinity_csv(in);
}

namespace {

bool contains(std::span<const int> xs, int v) {
    return std::find(xs.begin(), xs.end(), v) != xs.end();
}

}  // namespace

int nearest_draft_expert(const AffinityTable& table, int layer, int raw_pick,
                         std::span<const int> draft_set, std::span<const int> excluded) {
    if (contains(draft_set, raw_pick) && !contains(excluded, raw_pick)) return raw_pick;
    int best = -1;
    double best_dist = 0.0;
    for (int candidate : draft_set) {
        if (contains(excluded, candidate)) continue;
        double d = table.at(layer, raw_pick, candidate);
        if (best < 0 || d < best_dist || (d == best_dist && candidate < best)) {
            best = candidate;
            best_dist = d;
        }
    }
    if (best < 0) throw InvariantError("nearest_draft_expert: empty candidate set");
    return best;
}

int surrogate_draft_expert(int layer, int raw_pick, size_t prefix_len,
                           std::span<const int> draft_set, std::span<const int> excluded) {
    if (contains(draft_set, raw_pick) && !contains(excluded, raw_pick)) return raw_pick;
    std::vector<int> candidates;
    for (int candidate : draft_set)
        if (!contains(excluded, candidate)) candidates.push_back(candidate);
    if (candidates.empty()) throw InvariantError("surrogate_draft_expert: empty candidate set");
    std::sort(candidates.begin(), candidates.end());
    uint64_t h = substream(0x5eed5eedull, static_cast<uint64_t>(layer) << 32 | static_cast<uint32_t>(raw_pick),
                           prefix_len);
    return candidates[h % candidates.size()];
}

void HotnessCounter::reset() {
    for (auto& c : counts) std::fill(c.begin(), c.end(), 0);
    routed_tokens = 0;
}

void record_activations(HotnessCounter& counter, const ActivationRecord& record) {
    for (const ActivationRow& row : record.rows) {
        if (row.size() != counter.counts.size())
            throw InvariantError("record_activations: row layer count mismatch");
        for (size_t l = 0; l < row.size(); ++l) {
            for (int e : row[l].raw) {
                if (e < 0 || e >= static_cast<int>(counter.counts[l].size()))
                    throw InvariantError("record_activations: expert index out of range");
                ++counter.counts[l][e];
            }
        }
        ++counter.routed_tokens;
    }
}

namespace {

// Top-n expert indices by (count desc, index asc).
std::vector<int> top_by_count(const std::vector<uint64_t>& counts, int n) {
    std::vector<int> idx(counts.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return counts[a] > counts[b]; });
    idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(n)));
    return idx;
}

}  // namespace

std::vector<std::vector<int>> select_draft_experts(DraftPolicy policy, const HotnessCounter& counter,
                                                   const DraftState& current, int experts_per_block,
                                                   Rng& rng) {
    const int n = current.n_draft;
    if (n > experts_per_block) throw ConfigError("select_draft_experts: n_draft > experts_per_block");
    const size_t layers = counter.counts.empty() ? current.sets.size() : counter.counts.size();

    std::vector<std::vector<int>> out(layers);
    for (size_t l = 0; l < layers; ++l) {
        if (policy == DraftPolicy::random) {
            // N distinct uniform picks; partial Fisher-Yates over the ids.
            std::vector<int> pool(experts_per_block);
            std::iota(pool.begin(), pool.end(), 0);
            for (int i = 0; i < n; ++i) {
                size_t j = i + static_cast<size_t>(uniform01(rng) * (pool.size() - i));
                std::swap(pool[i], pool[j]);
            }
            pool.resize(n);
            std::sort(pool.begin(), pool.end());
            out[l] = std::move(pool);
            continue;
        }

        const auto& counts = counter.counts[l];
        std::vector<int> picked;
        for (int e : top_by_count(counts, n))
            if (counts[e] > 0) picked.push_back(e);
        // Fewer than N activated experts: keep current members so the new set
        // stays within (activated union current) and remains device-resident.
        if (static_cast<int>(picked.size()) < n && l < current.sets.size()) {
            for (int e : current.sets[l]) {
                if (static_cast<int>(picked.size()) == n) break;
                if (!contains(picked, e)) picked.push_back(e);
            }
        }
        if (static_cast<int>(picked.size()) != n)
            throw InvariantError("select_draft_experts: cannot assemble N draft experts");
        std::sort(picked.begin(), picked.end());
        out[l] = std::move(picked);
    }
    return out;
}

double skewness(const HotnessCounter& counter, double top_fraction) {
    if (counter.counts.empty()) throw InvariantError("skewness: empty counter");
    if (counter.routed_tokens == 0) throw InvariantError("skewness: no routed tokens");
    double acc = 0.0;
    int layers = 0;
    for (const auto& counts : counter.counts) {
        uint64_t total = std::accumulate(counts.begin(), counts.end(), uint64_t{0});
        if (total == 0) throw InvariantError("skewness: layer with no routed tokens");
        std::vector<uint64_t> sorted(counts);
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        auto top = static_cast<size_t>(
            std::ceil(top_fraction * static_cast<double>(counts.size())));
        uint64_t hot = std::accumulate(sorted.begin(), sorted.begin() + top, uint64_t{0});
        acc += static_cast<double>(hot) / static_cast<double>(total);
        ++layers;
    }
    return acc / layers;
}

}  // namespace specmoe
