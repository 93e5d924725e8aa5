#pragma once

// Foreground distillation compensation: residual bottleneck adapters on the
// frozen image/text features, the compensated logits they produce, and the
// base-branch objective CE(z_fdc) + L_FRG + lambda_d * L_dist.

#include <optional>
#include <random>
#include <span>

#include "fvg/diffmath.hpp"
#include "fvg/gates.hpp"

namespace fvg {

inline constexpr std::size_t kDefaultBottleneck = 64;

enum class AdapterSide { visual, textual };

// Two independent residual adapters f -> L2Norm(f + W_up relu(W_down f + b_down) + b_up).
class Adapter {
public:
    Adapter() = default;
    // Throws ConfigError unless 0 < bottleneck < dim.
    Adapter(std::size_t dim, std::size_t bottleneck, bool textual_enabled = true);

    // Down-projections uniform in [-1/sqrt(D), 1/sqrt(D)], up-projections zero,
    // so a fresh adapter is the identity on unit-norm inputs.
    void init(std::mt19937_64& rng);

    Vec adapt(ConstSpan feat, AdapterSide side) const;
    // Adapts every row of `feats`.
    Mat adapt_rows(const Mat& feats, AdapterSide side) const;
    // Accumulates dL/dparams for one adapt() call given dL/d(output).
    void adapt_backward(ConstSpan feat, AdapterSide side, ConstSpan d_out);

    ParamSet params();
    std::size_t dim() const { return dim_; }
    std::size_t bottleneck() const { return bottleneck_; }
    bool textual_enabled() const { return textual_enabled_; }
    std::size_t param_count() const;
    std::vector<double> flat_values() const;

private:
    struct Branch {
        Parameter w_down;
        Parameter b_down;
        Parameter w_up;
        Parameter b_up;
    };

    Branch make_branch(const std::string& name) const;
    const Branch* branch_for(AdapterSide side) const;
    Branch* branch_for(AdapterSide side);

    std::size_t dim_ = 0;
    std::size_t bottleneck_ = 0;
    bool textual_enabled_ = true;
    Branch visual_;
    Branch textual_;
};

// Largest usable bottleneck for a feature dimension: the requested width if it
// is below `dim`, otherwise dim / 2.
std::size_t resolve_bottleneck(std::size_t requested, std::size_t dim);

struct CompensatedLogits {
    Vec z_fdc;
    Vec p_fdc;
};

// z_fdc[c] = scale * <adapt(img), adapt(text_c)>, p_fdc = softmax(z_fdc / tau_d).
CompensatedLogits fdc_logits(ConstSpan img_feat, const Mat& class_feats, const Adapter& adapter, double scale,
                             double tau_d);
// Same, with the text side already adapted (reused across a batch).
CompensatedLogits fdc_logits_pre_adapted(ConstSpan img_feat, const Mat& adapted_class_feats,
                                         const Adapter& adapter, double scale, double tau_d);

// L_dist = r KL(p_fg || p_fdc) + (1 - r) KL(p_full || p_fdc).
double distill_loss(double r, ConstSpan p_fg, ConstSpan p_full, ConstSpan p_fdc);

// One training sample of the base branch with its frozen quantities cached.
struct BaseSample {
    Vec feat_full;      // backbone image feature of the full image
    std::size_t label;  // index into the candidate class list
    Vec z_full;         // frozen backbone logits on the full image
    Vec z_fg;           // frozen backbone logits on the foreground view
    StatVec gate_input; // standardised + masked FRG statistics
    int r_star = 0;
};

struct BaseLossOptions {
    double lambda_d = 10.0;
    double tau_d = 2.0;
    double scale = kDefaultLogitScale;
    bool use_frg_loss = true;
    bool use_fdc_ce = true;
    bool use_fdc_dist = true;
    bool stop_grad_r = false;
    std::optional<double> forced_r;  // bypasses the gate when set
};

struct BaseLossTerms {
    double fdc_ce = 0.0;
    double frg = 0.0;
    double dist = 0.0;  // unweighted L_dist
    double total = 0.0;
};

// Batch-mean base loss. With `accumulate`, adds gradients into the adapter's
// and the FRG gate's parameters. Throws DivergedError on a non-finite loss.
BaseLossTerms base_loss(std::span<const BaseSample> batch, const Mat& class_feats, Adapter& adapter, Gate& frg,
                        const BaseLossOptions& options, bool accumulate);

}  // namespace fvg
