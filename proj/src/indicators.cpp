#include "fvg/indicators.hpp"

#include <cmath>
#include <sstream>

#include "fvg/errors.hpp"

namespace fvg {

void LogitBundle::validate() const {
    auto check = [&](const Vec& v, const char* what) {
        if (v.size() != class_count) {
            std::ostringstream msg;
            msg << "LogitBundle: " << what << " has " << v.size() << " entries, expected " << class_count;
            throw ShapeError(msg.str());
        }
    };
    check(z_full, "z_full");
    check(z_fg, "z_fg");
    if (z_clip) check(*z_clip, "z_clip");
}

Vec backbone_logits(ConstSpan img_feat, const Mat& class_feats, double scale) {
    if (!(scale > 0.0)) throw ConfigError("backbone_logits: scale must be positive");
    if (class_feats.cols() != img_feat.size()) {
        std::ostringstream msg;
        msg << "backbone_logits: image feature dim " << img_feat.size() << " vs class feature dim "
            << class_feats.cols();
        throw ShapeError(msg.str());
    }
    Vec z = matvec(class_feats, img_feat);
    for (double& v : z) v *= scale;
    return z;
}

int frg_supervision(ConstSpan z_full, ConstSpan z_fg, std::size_t label, double tau_d) {
    const double loss_full = cross_entropy(z_full, label, tau_d);
    const double loss_fg = cross_entropy(z_fg, label, tau_d);
    return loss_fg < loss_full ? 1 : 0;
}

FrgStats build_frg_stats(const LogitBundle& bundle, double area_ratio, double tau_d) {
    bundle.validate();
    if (!(area_ratio >= 0.0 && area_ratio <= 1.0)) throw DomainError("build_frg_stats: area ratio outside [0,1]");
    const Vec p_full = softmax_temp(bundle.z_full, tau_d);
    const Vec p_fg = softmax_temp(bundle.z_fg, tau_d);
    return {entropy(p_full) - entropy(p_fg), cosine(p_full, p_fg), area_ratio};
}

BrgStats build_brg_stats(const LogitBundle& bundle, double tau_d) {
    if (!bundle.z_clip) throw ConfigError("build_brg_stats: prior logits are required");
    if (bundle.z_full.size() != bundle.class_count || bundle.z_clip->size() != bundle.class_count) {
        throw ShapeError("build_brg_stats: logit lengths disagree with class count");
    }
    const Vec p_full = softmax_temp(bundle.z_full, tau_d);
    const Vec p_clip = softmax_temp(*bundle.z_clip, tau_d);
    return {entropy(p_full), entropy(p_clip), cosine(p_full, p_clip)};
}

double fg_shift_index(ConstSpan z_full, ConstSpan z_fg, double tau_d) {
    return kl_div(softmax_temp(z_full, tau_d), softmax_temp(z_fg, tau_d));
}

}  // namespace fvg
