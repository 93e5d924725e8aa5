#include "fvg/pc.hpp"

#include <cmath>

#include "fvg/errors.hpp"
#include "fvg/indicators.hpp"

namespace fvg {

Vec blend(ConstSpan z_full, ConstSpan z_clip, double b) {
    if (z_full.size() != z_clip.size()) throw ShapeError("blend: logit lengths differ");
    if (!(b >= 0.0 && b <= 1.0)) throw DomainError("blend: weight outside [0,1]");
    Vec out(z_full.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - b) * z_full[i] + b * z_clip[i];
    return out;
}

PcOutput calibrate(ConstSpan z_full, ConstSpan z_clip, const TrustScore& b) {
    PcOutput out;
    out.b = b;
    out.z_pc = blend(z_full, z_clip, b.value);
    out.predicted_class = argmax(out.z_pc);
    return out;
}

PcLossTerms pc_loss(std::span<const PcSample> batch, Gate& brg, const PcLossOptions& opt, bool accumulate) {
    PcLossTerms terms;
    if (batch.empty()) return terms;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const PcSample& s : batch) {
        if (s.z_full.size() != s.z_clip.size()) throw ShapeError("pc_loss: logit lengths differ");
        const TrustScore b = brg.forward(s.gate_input);
        const Vec z_pc = blend(s.z_full, s.z_clip, b.value);
        const Vec p_pc = softmax_temp(z_pc, opt.tau_d);
        const Vec p_clip = softmax_temp(s.z_clip, opt.tau_d);
        const double ce = cross_entropy(z_pc, s.label, opt.tau_d);
        const double kl = kl_div(p_clip, p_pc);
        double total = 0.0;
        if (opt.use_ce) total += ce;
        if (opt.use_kl) total += kl;
        if (!std::isfinite(total)) throw DivergedError("PC loss is not finite");
        terms.ce += inv_n * ce;
        terms.kl += inv_n * kl;
        terms.total += inv_n * total;

        if (!accumulate) continue;
        Vec dz(z_pc.size(), 0.0);
        if (opt.use_ce) add_into(dz, cross_entropy_backward(z_pc, s.label, opt.tau_d));
        if (opt.use_kl) add_into(dz, softmax_temp_backward(p_pc, kl_div_backward_q(p_clip, p_pc), opt.tau_d));
        double db = 0.0;
        for (std::size_t c = 0; c < dz.size(); ++c) db += dz[c] * (s.z_clip[c] - s.z_full[c]);
        const double dq = inv_n * db * b.value * (1.0 - b.value);
        if (dq != 0.0) brg.backward(s.gate_input, dq);
    }
    return terms;
}

const char* to_string(Branch b) { return b == Branch::base ? "base" : "new"; }

Branch parse_branch(const std::string& s) {
    if (s == "base") return Branch::base;
    if (s == "new") return Branch::novel;
    throw ConfigError("unknown branch '" + s + "' (expected base or new)");
}

BranchPredictor BranchPredictor::for_base(const ClassBank& banks, std::vector<std::size_t> candidates,
                                          const BaseBranchModel& model, double scale, double tau_d) {
    if (model.adapter == nullptr || model.frg == nullptr) {
        throw ConfigError("base branch requires adapter and FRG parameters");
    }
    if (candidates.empty()) throw ConfigError("base branch has no candidate classes");
    if (model.adapter->dim() != banks.dim()) throw ConfigError("adapter dimension does not match the dataset");
    BranchPredictor p;
    p.branch_ = Branch::base;
    p.class_feats_ = select_rows(banks.feats_backbone, candidates);
    p.adapted_class_feats_ = model.adapter->adapt_rows(p.class_feats_, AdapterSide::textual);
    p.candidates_ = std::move(candidates);
    p.base_ = model;
    p.scale_ = scale;
    p.tau_d_ = tau_d;
    return p;
}

BranchPredictor BranchPredictor::for_new(const ClassBank& banks, std::vector<std::size_t> candidates,
                                         const NewBranchModel& model, double scale, double tau_d) {
    if (model.pc_enabled && model.brg == nullptr) throw ConfigError("new branch requires BRG parameters");
    if (candidates.empty()) throw ConfigError("new branch has no candidate classes");
    BranchPredictor p;
    p.branch_ = Branch::novel;
    p.class_feats_ = select_rows(banks.feats_backbone, candidates);
    p.candidates_ = std::move(candidates);
    p.novel_ = model;
    p.scale_ = scale;
    p.tau_d_ = tau_d;
    return p;
}

Prediction BranchPredictor::predict(const SampleRecord& sample) const {
    Prediction out;
    const Vec z_full = backbone_logits(sample.feat_full, class_feats_, scale_);
    const Vec z_fg = backbone_logits(sample.feat_fg, class_feats_, scale_);

    if (branch_ == Branch::base) {
        const auto full = fdc_logits_pre_adapted(sample.feat_full, adapted_class_feats_, *base_.adapter, scale_, tau_d_);
        const auto fg = fdc_logits_pre_adapted(sample.feat_fg, adapted_class_feats_, *base_.adapter, scale_, tau_d_);
        const LogitBundle bundle{z_full, z_fg, std::nullopt, z_full.size()};
        const StatVec u = base_.frg_mask.apply(
            base_.frg_norm.apply(build_frg_stats(bundle, sample.area_ratio, tau_d_).as_array()));
        out.trust = base_.frg->forward(u).value;
        out.d_fg = kl_div(full.p_fdc, fg.p_fdc);
        out.predicted_class = candidates_[argmax(full.z_fdc)];
        out.logits = full.z_fdc;
        return out;
    }

    out.d_fg = fg_shift_index(z_full, z_fg, tau_d_);
    if (!novel_.pc_enabled) {
        out.trust = 0.0;
        out.predicted_class = candidates_[argmax(z_full)];
        out.logits = z_full;
        return out;
    }
    if (!sample.z_clip) throw ConfigError("new branch needs prior logits for record '" + sample.id + "'");
    const Vec z_clip = select(*sample.z_clip, candidates_);
    const LogitBundle bundle{z_full, z_fg, z_clip, z_full.size()};
    const StatVec s = novel_.brg_mask.apply(novel_.brg_norm.apply(build_brg_stats(bundle, tau_d_).as_array()));
    const PcOutput pc = calibrate(z_full, z_clip, novel_.brg->forward(s));
    out.trust = pc.b.value;
    out.predicted_class = candidates_[pc.predicted_class];
    out.logits = pc.z_pc;
    return out;
}

Prediction infer(const SampleRecord& sample, Branch branch, const ClassBank& banks,
                 const std::vector<std::size_t>& candidates, const BaseBranchModel* base,
                 const NewBranchModel* novel, double scale, double tau_d) {
    if (branch == Branch::base) {
        if (base == nullptr) throw ConfigError("base branch inference requires FDC parameters");
        return BranchPredictor::for_base(banks, candidates, *base, scale, tau_d).predict(sample);
    }
    if (novel == nullptr) throw ConfigError("new branch inference requires BRG parameters");
    return BranchPredictor::for_new(banks, candidates, *novel, scale, tau_d).predict(sample);
}

}  // namespace fvg
