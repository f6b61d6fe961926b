#include "specmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "specmoe/drafting.hpp"

namespace specmoe {

namespace {

bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// x * sqrt(d) / ||x||, the usual RMS normalization. Keeps gate logits and
// head logits at unit scale across layers.
std::vector<double> rms_norm(const std::vector<double>& x) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-12);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
    return out;
}

// y = M x for a row-major (rows x cols) matrix.
std::vector<double> mat_vec(const std::vector<double>& m, const std::vector<double>& x, int rows,
                            int cols) {
    std::vector<double> y(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = m.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

// y = M^T x for a row-major (rows x cols) matrix, x of length rows.
std::vector<double> mat_tvec(const std::vector<double>& m, const std::vector<double>& x, int rows,
                             int cols) {
    std::vector<double> y(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* row = m.data() + static_cast<size_t>(r) * cols;
        double xv = x[r];
        for (int c = 0; c < cols; ++c) y[c] += row[c] * xv;
    }
    return y;
}

// down^T tanh(up^T x); the expert FFN applied to one hidden vector.
std::vector<double> expert_forward(const ExpertWeights& e, const std::vector<double>& x, int d,
                                   int f) {
    std::vector<double> h = mat_tvec(e.up, x, d, f);
    for (double& v : h) v = std::tanh(v);
    return mat_tvec(e.down, h, f, d);
}

void fill_gaussian(std::vector<double>& dst, size_t n, double stddev, Rng& rng) {
    dst.resize(n);
    for (size_t i = 0; i < n; ++i) dst[i] = stddev * gaussian(rng);
}

}  // namespace

void ModelSpec::validate() const {
    if (experts_per_block < 1) throw ConfigError("model: experts_per_block >= 1 violated");
    if (top_k < 1 || top_k > experts_per_block)
        throw ConfigError("model: 1 <= top_k <= experts_per_block violated");
    if (vocab_size < 2) throw ConfigError("model: vocab_size >= 2 violated");
    if (hidden_dim < 1) throw ConfigError("model: hidden_dim >= 1 violated");
    if (ffn_dim < 1) throw ConfigError("model: ffn_dim >= 1 violated");
    if (num_layers < 1) throw ConfigError("model: num_layers >= 1 violated");
    if (gate_skew < 0.0) throw ConfigError("model: gate_skew >= 0 violated");
    if (!moe_layer_mask.empty() && static_cast<int>(moe_layer_mask.size()) != num_layers)
        throw ConfigError("model: moe_layer_mask length must equal num_layers");
    auto mask = effective_mask();
    if (std::none_of(mask.begin(), mask.end(), [](uint8_t b) { return b != 0; }))
        throw ConfigError("model: at least one layer must be an MoE block");
}

std::vector<uint8_t> ModelSpec::effective_mask() const {
    if (!moe_layer_mask.empty()) return moe_layer_mask;
    return std::vector<uint8_t>(static_cast<size_t>(num_layers), 1);
}

int ModelSpec::moe_layer_count() const {
    auto mask = effective_mask();
    return static_cast<int>(std::count_if(mask.begin(), mask.end(), [](uint8_t b) { return b != 0; }));
}

int ModelSpec::moe_layer_index(int moe_ordinal) const {
    auto mask = effective_mask();
    int seen = 0;
    for (int l = 0; l < num_layers; ++l) {
        if (mask[l]) {
            if (seen == moe_ordinal) return l;
            ++seen;
        }
    }
    throw InvariantError("moe_layer_index: ordinal out of range");
}

ModelWeights build_model(const ModelSpec& spec) {
    spec.validate();
    ModelWeights w;
    w.spec = spec;

    const int d = spec.hidden_dim;
    const int f = spec.ffn_dim;
    const int E = spec.experts_per_block;
    const int V = spec.vocab_size;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    auto mask = spec.effective_mask();

    Rng rng(spec.seed);
    fill_gaussian(w.embedding, static_cast<size_t>(V) * d, stddev, rng);

    w.layers.resize(static_cast<size_t>(spec.num_layers));
    for (int l = 0; l < spec.num_layers; ++l) {
        LayerWeights& layer = w.layers[l];
        layer.is_moe = mask[l] != 0;
        fill_gaussian(layer.mix, static_cast<size_t>(d) * d, stddev, rng);
        if (layer.is_moe) {
            fill_gaussian(layer.gate, static_cast<size_t>(d) * E, stddev, rng);
            layer.gate_bias.resize(E);
            for (int e = 0; e < E; ++e)
                layer.gate_bias[e] = spec.gate_skew * (1.0 - static_cast<double>(e) / E);
            layer.experts.resize(E);
            for (int e = 0; e < E; ++e) {
                fill_gaussian(layer.experts[e].up, static_cast<size_t>(d) * f, stddev, rng);
                fill_gaussian(layer.experts[e].down, static_cast<size_t>(f) * d, stddev, rng);
            }
        } else {
            fill_gaussian(layer.ffn.up, static_cast<size_t>(d) * f, stddev, rng);
            fill_gaussian(layer.ffn.down, static_cast<size_t>(f) * d, stddev, rng);
        }
    }
    fill_gaussian(w.head, static_cast<size_t>(d) * V, stddev, rng);
    return w;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvariantError("softmax: empty input");
    if (!all_finite(logits)) throw InvariantError("softmax: non-finite input");
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<int> route_topk(std::span<const double> gate_logits, int k) {
    if (k > static_cast<int>(gate_logits.size()))
        throw InvariantError("route_topk: k exceeds expert count");
    if (k < 0) throw InvariantError("route_topk: negative k");
    std::vector<int> idx(gate_logits.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return gate_logits[a] > gate_logits[b];  // stable keeps ties on lower index
    });
    idx.resize(k);
    return idx;
}

int greedy_next(std::span<const double> logits) {
    if (logits.empty()) throw InvariantError("greedy_next: empty logits");
    if (!all_finite(logits)) throw InvariantError("greedy_next: non-finite logits");
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

int sample_next(std::span<const double> logits, double temperature, Rng& rng) {
    if (temperature <= 0.0) throw ConfigError("sample_next: temperature must be > 0");
    std::vector<double> scaled(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    std::vector<double> p = softmax(scaled);
    double u = uniform01(rng);
    double cum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        cum += p[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;  // u landed in the rounding tail
}

ForwardResult forward(const ModelWeights& weights, std::span<const int> prefix,
                      const RestrictedExperts* restricted, const AffinityTable* affinity) {
    const ModelSpec& spec = weights.spec;
    const int d = spec.hidden_dim;
    const int f = spec.ffn_dim;
    const int E = spec.experts_per_block;
    const int K = spec.top_k;

    if (prefix.empty()) throw InvariantError("forward: empty prefix");
    for (int t : prefix)
        if (t < 0 || t >= spec.vocab_size) throw InvariantError("forward: token out of range");
    if (restricted) {
        if (static_cast<int>(restricted->per_layer.size()) != spec.moe_layer_count())
            throw InvariantError("forward: restricted set count != MoE layer count");
        for (const auto& s : restricted->per_layer)
            if (static_cast<int>(s.size()) < K)
                throw InvariantError("forward: restricted set smaller than top_k");
    }

    // Attention surrogate: the mean prefix embedding, mixed per layer.
    std::vector<double> x(d, 0.0);
    for (int t : prefix) {
        const double* emb = weights.embedding.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) x[i] += emb[i];
    }
    for (double& v : x) v /= static_cast<double>(prefix.size());

    ForwardResult result;
    int moe_ordinal = 0;
    for (const LayerWeights& layer : weights.layers) {
        std::vector<double> xn = rms_norm(x);
        std::vector<double> a = mat_vec(layer.mix, xn, d, d);
        for (int i = 0; i < d; ++i) x[i] += a[i];

        std::vector<double> xf = rms_norm(x);
        std::vector<double> y(d, 0.0);
        if (layer.is_moe) {
            std::vector<double> gl = mat_tvec(layer.gate, xf, d, E);
            for (int e = 0; e < E; ++e) gl[e] += layer.gate_bias[e];
            std::vector<double> probs = softmax(gl);
            std::vector<int> raw = route_topk(gl, K);

            LayerActivation act;
            act.raw = raw;
            std::vector<int> chosen;
            for (int pick : raw) {
                int expert = pick;
                if (restricted) {
                    const auto& draft_set = restricted->per_layer[moe_ordinal];
                    expert = affinity
                                 ? nearest_draft_expert(*affinity, moe_ordinal, pick, draft_set, chosen)
                                 : surrogate_draft_expert(moe_ordinal, pick, prefix.size(), draft_set,
                                                          chosen);
                }
                chosen.push_back(expert);
                // The remapped expert keeps the raw pick's gate weight.
                std::vector<double> eo = expert_forward(layer.experts[expert], xf, d, f);
                for (int i = 0; i < d; ++i) y[i] += probs[pick] * eo[i];
            }
            act.final = chosen;
            result.activations.push_back(std::move(act));
            ++moe_ordinal;
        } else {
            y = expert_forward(layer.ffn, xf, d, f);
        }
        for (int i = 0; i < d; ++i) x[i] += y[i];
    }

    std::vector<double> xo = rms_norm(x);
    result.logits = mat_tvec(weights.head, xo, d, spec.vocab_size);
    return result;
}

}  // namespace specmoe
