#pragma once

// FVGE dataset layout: a JSON manifest plus one flat little-endian block file
// per tensor. Every block starts with a 16-byte header:
//   "FVGE" | u32 version (=1) | u32 rows | u32 cols
// followed by rows*cols 32-bit words, row-major.
//
//   manifest.txt        JSON: dims, class names, splits, record ids
//   feat_full.bin       N x D float32
//   feat_fg.bin         N x D float32
//   bank_backbone.bin   C x D float32
//   bank_prior.bin      C x D float32
//   z_clip.bin          N x C float32 (optional)
//   aux.bin             N x 2: int32 label, float32 area ratio

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvg/diffmath.hpp"

namespace fvg {

struct SampleRecord {
    std::string id;
    std::size_t label = 0;  // global class index
    Vec feat_full;
    Vec feat_fg;
    double area_ratio = 1.0;
    std::optional<Vec> z_clip;  // one entry per class in the prior bank

    bool operator==(const SampleRecord&) const = default;
};

struct ClassBank {
    std::vector<std::string> names;
    Mat feats_backbone;  // C x D, tuned text features
    Mat feats_prior;     // C x D, zero-shot text features

    std::size_t class_count() const { return feats_backbone.rows(); }
    std::size_t dim() const { return feats_backbone.cols(); }
    bool operator==(const ClassBank&) const = default;
};

struct SplitManifest {
    std::vector<std::size_t> base_classes;
    std::vector<std::size_t> new_classes;
    std::size_t shots = 0;

    bool operator==(const SplitManifest&) const = default;
};

// Records are ordered train-first: records[0, train_count) are the few-shot
// training set (base classes only), the rest are evaluation samples.
struct Dataset {
    std::vector<SampleRecord> records;
    std::size_t train_count = 0;
    ClassBank banks;
    SplitManifest split;

    std::size_t dim() const { return banks.dim(); }
    std::span<const SampleRecord> train() const { return {records.data(), train_count}; }
    std::span<const SampleRecord> test() const {
        return {records.data() + train_count, records.size() - train_count};
    }
    bool has_prior_logits() const;
    bool operator==(const Dataset&) const = default;
};

// ---- FVGE blocks -------------------------------------------------------------

inline constexpr std::uint32_t kFvgeVersion = 1;
inline constexpr std::size_t kFvgeHeaderBytes = 16;

struct Block {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint32_t> words;  // raw 32-bit payload

    static Block from_floats(std::size_t rows, std::size_t cols, std::span<const double> values);
    static Block from_mat(const Mat& m);
    Mat to_mat() const;
    float float_at(std::size_t i) const;
};

void write_block(const std::filesystem::path& path, const Block& block);
Block read_block(const std::filesystem::path& path);

// ---- dataset I/O -------------------------------------------------------------

// Throws ValidationError naming the offending record.
void validate_dataset(const Dataset& data);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);

struct ReadResult {
    Dataset data;
    std::vector<std::string> warnings;
};

// Features within 1e-4 of unit norm load unchanged; within 1e-3 they are
// renormalised with a warning; anything further off is a ValidationError.
ReadResult read_dataset(const std::filesystem::path& dir);

// ---- synthetic generator -------------------------------------------------------

struct SynthParams {
    std::uint64_t seed = 7;
    std::size_t classes = 8;
    std::size_t dim = 64;
    std::size_t shots = 16;
    double fg_advantage = 0.8;
    double noise = 0.1;
    std::size_t test_per_class = 50;
    double logit_scale = 100.0;
};

// Seeded surrogate for a few-shot benchmark. Each class has a random unit
// prototype tilted toward a shared background direction. Full-image features
// add that background in proportion to fg_advantage and (1 - area ratio);
// foreground features are noisy prototypes, occasionally hit by a bad mask.
// Prior logits come from a separate, noisier zero-shot bank. Values are
// rounded to float32 so the in-memory dataset equals its on-disk form.
Dataset synth_generate(const SynthParams& params);

}  // namespace fvg
