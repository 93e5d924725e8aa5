#pragma once

// Prior calibration for the new branch, and the decoupled inference router.
//
// The new branch blends frozen backbone logits with zero-shot prior logits,
// z_pc = (1 - b) z_full + b z_clip, where b comes from the BRG gate. It never
// touches the FDC adapters; the base branch never touches the BRG.

#include <span>
#include <vector>

#include "fvg/dataio.hpp"
#include "fvg/fdc.hpp"
#include "fvg/gates.hpp"

namespace fvg {

Vec blend(ConstSpan z_full, ConstSpan z_clip, double b);

struct PcSample {
    Vec z_full;  // frozen backbone logits over the candidate classes
    Vec z_clip;  // prior logits over the same candidates
    std::size_t label = 0;
    StatVec gate_input;  // standardised + masked BRG statistics
};

struct PcLossOptions {
    double tau_d = 2.0;
    bool use_ce = true;
    bool use_kl = true;
};

struct PcLossTerms {
    double ce = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

// Batch mean of CE(z_pc, y) + KL(p_clip || softmax(z_pc / tau_d)). Gradients
// (when accumulating) reach the BRG parameters only.
PcLossTerms pc_loss(std::span<const PcSample> batch, Gate& brg, const PcLossOptions& options, bool accumulate);

struct PcOutput {
    TrustScore b;
    Vec z_pc;
    std::size_t predicted_class = 0;  // index into the candidate list
};

PcOutput calibrate(ConstSpan z_full, ConstSpan z_clip, const TrustScore& b);

enum class Branch { base, novel };

const char* to_string(Branch b);
Branch parse_branch(const std::string& s);

// Everything the base branch needs at inference time.
struct BaseBranchModel {
    const Adapter* adapter = nullptr;
    const Gate* frg = nullptr;
    StatNormalizer frg_norm;
    IndicatorMask frg_mask;
};

// Everything the new branch needs. With pc_enabled false the branch falls
// back to the raw backbone logits (b = 0).
struct NewBranchModel {
    const Gate* brg = nullptr;
    StatNormalizer brg_norm;
    IndicatorMask brg_mask;
    bool pc_enabled = true;
};

struct Prediction {
    std::size_t predicted_class = 0;  // global class index
    double trust = 0.0;               // r (base) or b (new)
    double d_fg = 0.0;                // foreground shift index of the branch's own predictions
    Vec logits;                       // z_fdc or z_pc over the candidates
};

// Per-branch predictor with the candidate class bank (and, for the base
// branch, its adapted text features) prepared once.
class BranchPredictor {
public:
    static BranchPredictor for_base(const ClassBank& banks, std::vector<std::size_t> candidates,
                                    const BaseBranchModel& model, double scale, double tau_d);
    static BranchPredictor for_new(const ClassBank& banks, std::vector<std::size_t> candidates,
                                   const NewBranchModel& model, double scale, double tau_d);

    Prediction predict(const SampleRecord& sample) const;
    Branch branch() const { return branch_; }
    const std::vector<std::size_t>& candidates() const { return candidates_; }

private:
    Branch branch_ = Branch::base;
    std::vector<std::size_t> candidates_;
    Mat class_feats_;
    Mat adapted_class_feats_;
    BaseBranchModel base_;
    NewBranchModel novel_;
    double scale_ = kDefaultLogitScale;
    double tau_d_ = 2.0;
};

// One-shot convenience over BranchPredictor. Throws ConfigError when the
// branch's model is missing (or the sample lacks prior logits for the new branch).
Prediction infer(const SampleRecord& sample, Branch branch, const ClassBank& banks,
                 const std::vector<std::size_t>& candidates, const BaseBranchModel* base,
                 const NewBranchModel* novel, double scale, double tau_d);

}  // namespace fvg
