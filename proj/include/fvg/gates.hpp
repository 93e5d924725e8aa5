#pragma once

// Reliability gates: a small perceptron over three statistics ending in a
// scalar sigmoid. FRG and BRG are two instances with disjoint parameters.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fvg/diffmath.hpp"
#include "fvg/indicators.hpp"

namespace fvg {

inline constexpr std::size_t kDefaultGateHidden = 32;

struct TrustScore {
    double value = 0.5;  // sigmoid(pre_logit), strictly inside (0,1)
    double pre_logit = 0.0;
};

struct GateSchema {
    int layers = 2;  // affine layers, including the scalar head
    std::size_t hidden = kDefaultGateHidden;
    std::size_t in_dim = kStatCount;

    std::size_t param_count() const;
    // (rows, cols) of each affine layer's weight, input to output.
    std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const;
};

// 1 = single affine 3->1, 2 = 3->h->1 (default), 3 = 3->h->h->1.
GateSchema gate_depth_variant(int layers, std::size_t hidden = kDefaultGateHidden);

// Which of the three statistics reach the gate; disabled ones are fed as 0.
struct IndicatorMask {
    std::array<bool, kStatCount> enabled{true, true, true};

    void validate() const;  // ConfigError when all are disabled
    StatVec apply(const StatVec& stats) const;
    // "101" -> {true, false, true}
    static IndicatorMask parse(const std::string& bits);
    std::string to_string() const;
};

// Per-statistic standardisation fitted once on the training set, then frozen.
struct StatNormalizer {
    StatVec mean{0.0, 0.0, 0.0};
    StatVec stddev{1.0, 1.0, 1.0};

    static StatNormalizer fit(std::span<const StatVec> samples);
    StatVec apply(const StatVec& stats) const;
};

class Gate {
public:
    Gate() = default;
    Gate(std::string prefix, GateSchema schema);

    // Hidden layers uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], head zero,
    // then rounded to the float32 grid.
    void init(std::mt19937_64& rng);

    TrustScore forward(const StatVec& input) const;
    // Adds dL/dparams given dL/d(pre_logit) for this input.
    void backward(const StatVec& input, double d_pre_logit);

    ParamSet params();
    const GateSchema& schema() const { return schema_; }
    const std::string& prefix() const { return prefix_; }
    // Flattened parameter values in registry order (for equality checks).
    std::vector<double> flat_values() const;

private:
    struct Layer {
        Parameter w;
        Parameter b;
    };

    std::string prefix_;
    GateSchema schema_;
    std::vector<Layer> layers_;
};

// L_FRG = BCE(r, r*).
double frg_loss(const TrustScore& r, int r_star);
// dL_FRG/d(pre_logit), consistent with the clamp in bce.
double frg_loss_grad(const TrustScore& r, int r_star);

// Fits a gate on (already standardised and masked) inputs with BCE, batch-mean
// SGD and a seeded per-epoch shuffle. Returns the final training accuracy
// (r thresholded at 0.5).
double fit_gate_bce(Gate& gate, std::span<const StatVec> inputs, std::span<const int> targets, int epochs,
                    double lr, std::size_t batch, std::uint64_t seed);

double gate_accuracy(const Gate& gate, std::span<const StatVec> inputs, std::span<const int> targets);

}  // namespace fvg
