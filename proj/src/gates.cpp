#include "fvg/gates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fvg/errors.hpp"

namespace fvg {

std::vector<std::pair<std::size_t, std::size_t>> GateSchema::layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    switch (layers) {
        case 1:
            shapes.emplace_back(1, in_dim);
            break;
        case 2:
            shapes.emplace_back(hidden, in_dim);
            shapes.emplace_back(1, hidden);
            break;
        case 3:
            shapes.emplace_back(hidden, in_dim);
            shapes.emplace_back(hidden, hidden);
            shapes.emplace_back(1, hidden);
            break;
        default:
            throw ConfigError("gate depth must be 1, 2 or 3");
    }
    return shapes;
}

std::size_t GateSchema::param_count() const {
    std::size_t n = 0;
    for (auto [rows, cols] : layer_shapes()) n += rows * cols + rows;
    return n;
}

GateSchema gate_depth_variant(int layers, std::size_t hidden) {
    if (layers < 1 || layers > 3) throw ConfigError("unsupported gate depth " + std::to_string(layers));
    if (hidden == 0) throw ConfigError("gate hidden width must be positive");
    return GateSchema{layers, hidden, kStatCount};
}

void IndicatorMask::validate() const {
    if (std::none_of(enabled.begin(), enabled.end(), [](bool b) { return b; })) {
        throw ConfigError("indicator mask disables every statistic");
    }
}

StatVec IndicatorMask::apply(const StatVec& stats) const {
    StatVec out = stats;
    for (std::size_t i = 0; i < kStatCount; ++i) {
        if (!enabled[i]) out[i] = 0.0;
    }
    return out;
}

IndicatorMask IndicatorMask::parse(const std::string& bits) {
    if (bits.size() != kStatCount) throw ConfigError("indicator mask must have 3 digits, got '" + bits + "'");
    IndicatorMask m;
    for (std::size_t i = 0; i < kStatCount; ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw ConfigError("indicator mask digits must be 0/1: '" + bits + "'");
        m.enabled[i] = bits[i] == '1';
    }
    m.validate();
    return m;
}

std::string IndicatorMask::to_string() const {
    std::string s;
    for (bool b : enabled) s.push_back(b ? '1' : '0');
    return s;
}

StatNormalizer StatNormalizer::fit(std::span<const StatVec> samples) {
    StatNormalizer n;
    if (samples.empty()) return n;
    const double count = static_cast<double>(samples.size());
    for (std::size_t k = 0; k < kStatCount; ++k) {
        double mean = 0.0;
        for (const auto& s : samples) mean += s[k];
        mean /= count;
        double var = 0.0;
        for (const auto& s : samples) var += (s[k] - mean) * (s[k] - mean);
        var /= count;
        const double sd = std::sqrt(var);
        n.mean[k] = static_cast<double>(static_cast<float>(mean));
        n.stddev[k] = sd > 1e-6 ? static_cast<double>(static_cast<float>(sd)) : 1.0;
    }
    return n;
}

StatVec StatNormalizer::apply(const StatVec& stats) const {
    StatVec out{};
    for (std::size_t k = 0; k < kStatCount; ++k) out[k] = (stats[k] - mean[k]) / stddev[k];
    return out;
}

Gate::Gate(std::string prefix, GateSchema schema) : prefix_(std::move(prefix)), schema_(schema) {
    const auto shapes = schema_.layer_shapes();
    layers_.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto [rows, cols] = shapes[i];
        const std::string base = prefix_ + ".l" + std::to_string(i);
        layers_.push_back(Layer{Parameter(base + ".w", rows, cols), Parameter(base + ".b", rows, 1)});
    }
}

void Gate::init(std::mt19937_64& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        if (i + 1 == layers_.size()) {
            layer.w.value.fill(0.0);
            layer.b.value.fill(0.0);
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.value.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : layer.w.value.data()) v = dist(rng);
        for (double& v : layer.b.value.data()) v = dist(rng);
        round_to_float(layer.w.value.data());
        round_to_float(layer.b.value.data());
    }
}

TrustScore Gate::forward(const StatVec& input) const {
    if (layers_.empty()) throw ConfigError("gate used before construction");
    Vec act(input.begin(), input.end());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Vec next = matvec(layers_[i].w.value, act);
        add_into(next, layers_[i].b.value.data());
        if (i + 1 < layers_.size()) {
            for (double& v : next) v = std::max(v, 0.0);
        }
        act = std::move(next);
    }
    const double q = act[0];
    return {sigmoid(q), q};
}

void Gate::backward(const StatVec& input, double d_pre_logit) {
    // Re-run the forward pass keeping every layer input.
    std::vector<Vec> inputs;
    inputs.emplace_back(input.begin(), input.end());
    std::vector<Vec> pre;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Vec z = matvec(layers_[i].w.value, inputs.back());
        add_into(z, layers_[i].b.value.data());
        pre.push_back(z);
        if (i + 1 < layers_.size()) {
            for (double& v : z) v = std::max(v, 0.0);
            inputs.push_back(std::move(z));
        }
    }

    Vec delta{d_pre_logit};
    for (std::size_t k = layers_.size(); k-- > 0;) {
        Layer& layer = layers_[k];
        add_outer(layer.w.grad, delta, inputs[k]);
        add_into(layer.b.grad.data(), delta);
        if (k == 0) break;
        Vec back = matvec_t(layer.w.value, delta);
        const Vec& z_prev = pre[k - 1];
        for (std::size_t j = 0; j < back.size(); ++j) {
            if (z_prev[j] <= 0.0) back[j] = 0.0;
        }
        delta = std::move(back);
    }
}

ParamSet Gate::params() {
    ParamSet set;
    for (Layer& layer : layers_) {
        set.add(layer.w);
        set.add(layer.b);
    }
    return set;
}

std::vector<double> Gate::flat_values() const {
    std::vector<double> out;
    for (const Layer& layer : layers_) {
        out.insert(out.end(), layer.w.value.data().begin(), layer.w.value.data().end());
        out.insert(out.end(), layer.b.value.data().begin(), layer.b.value.data().end());
    }
    return out;
}

double frg_loss(const TrustScore& r, int r_star) { return bce(r.value, r_star); }

double frg_loss_grad(const TrustScore& r, int r_star) {
    return bce_backward(r.value, r_star) * r.value * (1.0 - r.value);
}

double gate_accuracy(const Gate& gate, std::span<const StatVec> inputs, std::span<const int> targets) {
    if (inputs.size() != targets.size()) throw ShapeError("gate_accuracy: inputs/targets length mismatch");
    if (inputs.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const int pred = gate.forward(inputs[i]).value >= 0.5 ? 1 : 0;
        if (pred == targets[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

double fit_gate_bce(Gate& gate, std::span<const StatVec> inputs, std::span<const int> targets, int epochs,
                    double lr, std::size_t batch, std::uint64_t seed) {
    if (inputs.size() != targets.size()) throw ShapeError("fit_gate_bce: inputs/targets length mismatch");
    if (batch == 0) throw ConfigError("fit_gate_bce: batch must be positive");
    ParamSet params = gate.params();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            const double inv = 1.0 / static_cast<double>(stop - start);
            params.zero_grad();
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const TrustScore r = gate.forward(inputs[i]);
                gate.backward(inputs[i], inv * frg_loss_grad(r, targets[i]));
            }
            sgd_step(params, lr);
            round_to_float(params);
        }
    }
    return gate_accuracy(gate, inputs, targets);
}

}  // namespace fvg
