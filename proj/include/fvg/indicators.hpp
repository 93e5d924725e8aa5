#pragma once

// Reliability statistics computed from frozen-backbone logits. Everything here
// is a pure function of its inputs; nothing is trainable.

#include <array>
#include <cstddef>
#include <optional>

#include "fvg/diffmath.hpp"

namespace fvg {

inline constexpr std::size_t kStatCount = 3;
using StatVec = std::array<double, kStatCount>;

inline constexpr double kDefaultLogitScale = 100.0;

struct LogitBundle {
    Vec z_full;                 // backbone logits, full image
    Vec z_fg;                   // backbone logits, foreground view
    std::optional<Vec> z_clip;  // zero-shot prior logits
    std::size_t class_count = 0;

    // Throws ShapeError when a present vector disagrees with class_count.
    void validate() const;
};

// FRG input u = [delta_h, cos(p_full, p_fg), area_ratio].
struct FrgStats {
    double delta_h = 0.0;
    double cos_full_fg = 0.0;
    double area_ratio = 0.0;

    StatVec as_array() const { return {delta_h, cos_full_fg, area_ratio}; }
};

// BRG input s = [H(p_full), H(p_clip), cos(p_full, p_clip)].
struct BrgStats {
    double h_full = 0.0;
    double h_clip = 0.0;
    double cos_full_clip = 0.0;

    StatVec as_array() const { return {h_full, h_clip, cos_full_clip}; }
};

// z[c] = scale * <img_feat, class_feats.row(c)>
Vec backbone_logits(ConstSpan img_feat, const Mat& class_feats, double scale = kDefaultLogitScale);

// r* = 1 iff CE(z_fg) < CE(z_full) strictly; ties go to the full image.
int frg_supervision(ConstSpan z_full, ConstSpan z_fg, std::size_t label, double tau_d);

FrgStats build_frg_stats(const LogitBundle& bundle, double area_ratio, double tau_d);

// Requires bundle.z_clip; throws ConfigError otherwise.
BrgStats build_brg_stats(const LogitBundle& bundle, double tau_d);

// D_fg = KL(p_full || p_fg).
double fg_shift_index(ConstSpan z_full, ConstSpan z_fg, double tau_d);

}  // namespace fvg
