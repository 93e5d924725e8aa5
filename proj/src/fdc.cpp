#include "fvg/fdc.hpp"

#include <cmath>
#include <sstream>

#include "fvg/errors.hpp"
#include "fvg/indicators.hpp"

namespace fvg {

namespace {

struct AdapterTrace {
    Vec hidden_pre;
    Vec hidden;
    Vec residual;  // f + MLP(f), before normalisation
};

}  // namespace

std::size_t resolve_bottleneck(std::size_t requested, std::size_t dim) {
    if (requested == 0) throw ConfigError("bottleneck width must be positive");
    if (dim < 2) throw ConfigError("feature dimension too small for an adapter");
    return requested < dim ? requested : dim / 2;
}

Adapter::Branch Adapter::make_branch(const std::string& name) const {
    return Branch{
        Parameter("adapter." + name + ".w_down", bottleneck_, dim_),
        Parameter("adapter." + name + ".b_down", bottleneck_, 1),
        Parameter("adapter." + name + ".w_up", dim_, bottleneck_),
        Parameter("adapter." + name + ".b_up", dim_, 1),
    };
}

Adapter::Adapter(std::size_t dim, std::size_t bottleneck, bool textual_enabled)
    : dim_(dim), bottleneck_(bottleneck), textual_enabled_(textual_enabled) {
    if (bottleneck == 0 || bottleneck >= dim) {
        std::ostringstream msg;
        msg << "adapter bottleneck " << bottleneck << " must be in (0, " << dim << ")";
        throw ConfigError(msg.str());
    }
    visual_ = make_branch("visual");
    if (textual_enabled_) textual_ = make_branch("textual");
}

void Adapter::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto init_branch = [&](Branch& b) {
        for (double& v : b.w_down.value.data()) v = dist(rng);
        for (double& v : b.b_down.value.data()) v = dist(rng);
        round_to_float(b.w_down.value.data());
        round_to_float(b.b_down.value.data());
        b.w_up.value.fill(0.0);
        b.b_up.value.fill(0.0);
    };
    init_branch(visual_);
    if (textual_enabled_) init_branch(textual_);
}

const Adapter::Branch* Adapter::branch_for(AdapterSide side) const {
    if (side == AdapterSide::visual) return &visual_;
    return textual_enabled_ ? &textual_ : nullptr;
}

Adapter::Branch* Adapter::branch_for(AdapterSide side) {
    if (side == AdapterSide::visual) return &visual_;
    return textual_enabled_ ? &textual_ : nullptr;
}

namespace {

AdapterTrace run_branch(const Parameter& w_down, const Parameter& b_down, const Parameter& w_up,
                        const Parameter& b_up, ConstSpan feat) {
    AdapterTrace t;
    t.hidden_pre = matvec(w_down.value, feat);
    add_into(t.hidden_pre, b_down.value.data());
    t.hidden = t.hidden_pre;
    for (double& v : t.hidden) v = std::max(v, 0.0);
    t.residual = matvec(w_up.value, t.hidden);
    add_into(t.residual, b_up.value.data());
    add_into(t.residual, feat);
    return t;
}

}  // namespace

Vec Adapter::adapt(ConstSpan feat, AdapterSide side) const {
    if (feat.size() != dim_) throw ShapeError("adapter: feature dimension mismatch");
    const Branch* b = branch_for(side);
    if (b == nullptr) return l2_normalize(feat);
    const AdapterTrace t = run_branch(b->w_down, b->b_down, b->w_up, b->b_up, feat);
    return l2_normalize(t.residual);
}

Mat Adapter::adapt_rows(const Mat& feats, AdapterSide side) const {
    Mat out(feats.rows(), feats.cols());
    for (std::size_t r = 0; r < feats.rows(); ++r) {
        const Vec y = adapt(feats.row(r), side);
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

void Adapter::adapt_backward(ConstSpan feat, AdapterSide side, ConstSpan d_out) {
    Branch* b = branch_for(side);
    if (b == nullptr) return;
    const AdapterTrace t = run_branch(b->w_down, b->b_down, b->w_up, b->b_up, feat);
    const Vec dv = l2_normalize_backward(t.residual, d_out);
    add_outer(b->w_up.grad, dv, t.hidden);
    add_into(b->b_up.grad.data(), dv);
    Vec dh = matvec_t(b->w_up.value, dv);
    for (std::size_t j = 0; j < dh.size(); ++j) {
        if (t.hidden_pre[j] <= 0.0) dh[j] = 0.0;
    }
    add_outer(b->w_down.grad, dh, feat);
    add_into(b->b_down.grad.data(), dh);
}

ParamSet Adapter::params() {
    ParamSet set;
    auto add_branch = [&](Branch& b) {
        set.add(b.w_down);
        set.add(b.b_down);
        set.add(b.w_up);
        set.add(b.b_up);
    };
    add_branch(visual_);
    if (textual_enabled_) add_branch(textual_);
    return set;
}

std::size_t Adapter::param_count() const {
    const std::size_t per_side = bottleneck_ * dim_ + bottleneck_ + dim_ * bottleneck_ + dim_;
    return per_side * (textual_enabled_ ? 2 : 1);
}

std::vector<double> Adapter::flat_values() const {
    std::vector<double> out;
    auto append = [&](const Branch& b) {
        for (const Parameter* p : {&b.w_down, &b.b_down, &b.w_up, &b.b_up}) {
            out.insert(out.end(), p->value.data().begin(), p->value.data().end());
        }
    };
    append(visual_);
    if (textual_enabled_) append(textual_);
    return out;
}

CompensatedLogits fdc_logits_pre_adapted(ConstSpan img_feat, const Mat& adapted_class_feats,
                                         const Adapter& adapter, double scale, double tau_d) {
    const Vec f = adapter.adapt(img_feat, AdapterSide::visual);
    CompensatedLogits out;
    out.z_fdc = backbone_logits(f, adapted_class_feats, scale);
    out.p_fdc = softmax_temp(out.z_fdc, tau_d);
    return out;
}

CompensatedLogits fdc_logits(ConstSpan img_feat, const Mat& class_feats, const Adapter& adapter, double scale,
                             double tau_d) {
    if (class_feats.cols() != adapter.dim()) throw ShapeError("fdc_logits: class feature dimension mismatch");
    return fdc_logits_pre_adapted(img_feat, adapter.adapt_rows(class_feats, AdapterSide::textual), adapter, scale,
                                  tau_d);
}

double distill_loss(double r, ConstSpan p_fg, ConstSpan p_full, ConstSpan p_fdc) {
    return r * kl_div(p_fg, p_fdc) + (1.0 - r) * kl_div(p_full, p_fdc);
}

BaseLossTerms base_loss(std::span<const BaseSample> batch, const Mat& class_feats, Adapter& adapter, Gate& frg,
                        const BaseLossOptions& opt, bool accumulate) {
    BaseLossTerms terms;
    if (batch.empty()) return terms;
    if (class_feats.cols() != adapter.dim()) throw ShapeError("base_loss: class feature dimension mismatch");

    const Mat text = adapter.adapt_rows(class_feats, AdapterSide::textual);
    Mat d_text(text.rows(), text.cols());
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (const BaseSample& s : batch) {
        const Vec f = adapter.adapt(s.feat_full, AdapterSide::visual);
        const Vec z = backbone_logits(f, text, opt.scale);
        const Vec p = softmax_temp(z, opt.tau_d);
        const Vec p_full = softmax_temp(s.z_full, opt.tau_d);
        const Vec p_fg = softmax_temp(s.z_fg, opt.tau_d);

        const TrustScore r = opt.forced_r ? TrustScore{*opt.forced_r, 0.0} : frg.forward(s.gate_input);
        const double ce = cross_entropy(z, s.label, opt.tau_d);
        const double kl_fg = kl_div(p_fg, p);
        const double kl_full = kl_div(p_full, p);
        const double dist = r.value * kl_fg + (1.0 - r.value) * kl_full;
        const double frg_term = frg_loss(r, s.r_star);

        double total = 0.0;
        if (opt.use_fdc_ce) total += ce;
        if (opt.use_frg_loss) total += frg_term;
        if (opt.use_fdc_dist) total += opt.lambda_d * dist;
        if (!std::isfinite(total)) throw DivergedError("base loss is not finite");

        terms.fdc_ce += inv_n * ce;
        terms.frg += inv_n * frg_term;
        terms.dist += inv_n * dist;
        terms.total += inv_n * total;

        if (!accumulate) continue;

        Vec dz(z.size(), 0.0);
        if (opt.use_fdc_ce) add_into(dz, cross_entropy_backward(z, s.label, opt.tau_d), inv_n);
        double dq = 0.0;
        if (opt.use_fdc_dist) {
            Vec dp = kl_div_backward_q(p_fg, p);
            for (double& v : dp) v *= r.value;
            add_into(dp, kl_div_backward_q(p_full, p), 1.0 - r.value);
            add_into(dz, softmax_temp_backward(p, dp, opt.tau_d), inv_n * opt.lambda_d);
            if (!opt.stop_grad_r && !opt.forced_r) {
                dq += inv_n * opt.lambda_d * (kl_fg - kl_full) * r.value * (1.0 - r.value);
            }
        }
        if (opt.use_frg_loss && !opt.forced_r) dq += inv_n * frg_loss_grad(r, s.r_star);
        if (dq != 0.0) frg.backward(s.gate_input, dq);

        // z = scale * text f  =>  df = scale text^T dz, d_text += scale dz f^T
        Vec df = matvec_t(text, dz);
        for (double& v : df) v *= opt.scale;
        Vec dz_scaled = dz;
        for (double& v : dz_scaled) v *= opt.scale;
        add_outer(d_text, dz_scaled, f);
        adapter.adapt_backward(s.feat_full, AdapterSide::visual, df);
    }

    if (accumulate && adapter.textual_enabled()) {
        for (std::size_t c = 0; c < class_feats.rows(); ++c) {
            adapter.adapt_backward(class_feats.row(c), AdapterSide::textual, d_text.row(c));
        }
    }
    return terms;
}

}  // namespace fvg
