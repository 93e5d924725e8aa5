#include "fvg/gradsuite.hpp"

#include <random>

#include "fvg/fdc.hpp"
#include "fvg/gates.hpp"
#include "fvg/indicators.hpp"
#include "fvg/pc.hpp"

namespace fvg {

namespace {

Vec random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec v(dim);
    for (double& x : v) x = g(rng);
    const double n = norm(v);
    for (double& x : v) x /= n;
    return v;
}

StatVec random_stats(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    return {g(rng), g(rng), g(rng)};
}

// Moves every parameter off its initialisation so no gradient is trivially zero.
void scramble(ParamSet& params, std::mt19937_64& rng, double sd) {
    std::normal_distribution<double> g(0.0, sd);
    for (Parameter* p : params) {
        for (double& x : p->value.data()) x = g(rng);
    }
}

GradTermResult check(const std::string& term, const Objective& objective, ParamSet& params,
                     const GradSuiteOptions& opt) {
    Objective wrapped = objective;
    if (opt.inject_wrong_sign) {
        wrapped = [&objective, &params](bool accumulate) {
            const double v = objective(accumulate);
            if (accumulate) {
                for (Parameter* p : params) {
                    for (double& gval : p->grad.data()) gval = -gval;
                }
            }
            return v;
        };
    }
    const GradCheckResult r = grad_check(wrapped, params, opt.step);
    return {term, r.max_rel_error, r.worst_param, r.max_rel_error <= opt.tolerance};
}

}  // namespace

std::vector<GradTermResult> run_gradient_suite(const GradSuiteOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::bernoulli_distribution coin(0.5);
    const std::size_t C = opt.classes;
    const std::size_t D = opt.dim;
    // Small logit scale keeps softmaxes away from saturation so the central
    // difference is accurate.
    const double scale = 5.0;

    Mat class_feats(C, D);
    for (std::size_t c = 0; c < C; ++c) {
        const Vec v = random_unit(rng, D);
        std::copy(v.begin(), v.end(), class_feats.row(c).begin());
    }

    std::vector<BaseSample> base_batch;
    std::vector<PcSample> pc_batch;
    for (std::size_t i = 0; i < opt.batch; ++i) {
        BaseSample s;
        s.feat_full = random_unit(rng, D);
        const Vec feat_fg = random_unit(rng, D);
        s.label = i % C;
        s.z_full = backbone_logits(s.feat_full, class_feats, scale);
        s.z_fg = backbone_logits(feat_fg, class_feats, scale);
        s.gate_input = random_stats(rng);
        s.r_star = coin(rng) ? 1 : 0;
        base_batch.push_back(s);

        PcSample p;
        p.z_full = s.z_full;
        p.z_clip = backbone_logits(random_unit(rng, D), class_feats, scale);
        p.label = i % C;
        p.gate_input = random_stats(rng);
        pc_batch.push_back(p);
    }

    Adapter adapter(D, resolve_bottleneck(D / 2, D), true);
    adapter.init(rng);
    const GateSchema schema = gate_depth_variant(2, 8);
    Gate frg("frg", schema);
    frg.init(rng);
    Gate brg("brg", schema);
    brg.init(rng);

    ParamSet base_params = adapter.params();
    base_params.add(frg.params());
    scramble(base_params, rng, 0.3);
    ParamSet pc_params = brg.params();
    scramble(pc_params, rng, 0.5);

    auto base_objective = [&](bool frg_on, bool ce_on, bool dist_on) {
        BaseLossOptions o;
        o.scale = scale;
        o.use_frg_loss = frg_on;
        o.use_fdc_ce = ce_on;
        o.use_fdc_dist = dist_on;
        return Objective([&, o](bool acc) {
            return base_loss(base_batch, class_feats, adapter, frg, o, acc).total;
        });
    };
    auto pc_objective = [&](bool ce_on, bool kl_on) {
        PcLossOptions o;
        o.use_ce = ce_on;
        o.use_kl = kl_on;
        return Objective([&, o](bool acc) { return pc_loss(pc_batch, brg, o, acc).total; });
    };

    std::vector<GradTermResult> out;
    out.push_back(check("frg", base_objective(true, false, false), base_params, opt));
    out.push_back(check("fdc_ce", base_objective(false, true, false), base_params, opt));
    out.push_back(check("dist", base_objective(false, false, true), base_params, opt));
    out.push_back(check("pc_ce", pc_objective(true, false), pc_params, opt));
    out.push_back(check("pc_kl", pc_objective(false, true), pc_params, opt));
    out.push_back(check("base_total", base_objective(true, true, true), base_params, opt));
    out.push_back(check("pc_total", pc_objective(true, true), pc_params, opt));
    return out;
}

}  // namespace fvg
