#pragma once

// Training orchestration for the two decoupled branches, evaluation, and the
// on-disk checkpoint.
//
// Checkpoint directory layout (FVGE blocks, see dataio.hpp):
//   manifest.txt                 JSON: config echo, shapes, epochs, block list
//   <parameter name>.bin         one block per parameter, e.g. adapter.visual.w_down.bin
//   frg.norm.bin, brg.norm.bin   2 x 3 blocks: row 0 mean, row 1 stddev

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvg/dataio.hpp"
#include "fvg/errors.hpp"
#include "fvg/fdc.hpp"
#include "fvg/gates.hpp"
#include "fvg/pc.hpp"

namespace fvg {

// Each flag switches one loss term's contribution on or off.
struct LossToggles {
    bool frg_loss = true;  // L_FRG
    bool fdc_ce = true;    // CE(z_fdc)
    bool fdc_dist = true;  // lambda_d * L_dist
    bool pc_ce = true;     // CE(z_pc)
    bool pc_kl = true;     // KL(p_clip || p_pc)

    bool pc_active() const { return pc_ce || pc_kl; }
    bool base_active() const { return frg_loss || fdc_ce || fdc_dist; }
    bool operator==(const LossToggles&) const = default;
};

enum class LrSchedule { constant, cosine };

struct TrainConfig {
    double lr = 0.0035;
    int epochs = 10;
    std::size_t batch = 4;
    double tau_d = 2.0;
    double lambda_d = 10.0;
    std::size_t dim_fdc = kDefaultBottleneck;
    std::size_t dim_rg = kDefaultGateHidden;
    int gate_layers = 2;
    double logit_scale = kDefaultLogitScale;
    std::uint64_t seed = 1;
    LossToggles toggles;
    bool textual_adapter = true;
    // r weights the distillation targets but is trained by L_FRG alone.
    // false lets L_dist's gradient reach the FRG through r ("r-grad-flow").
    bool stop_grad_r = true;
    IndicatorMask frg_mask;
    IndicatorMask brg_mask;
    LrSchedule schedule = LrSchedule::constant;

    void validate() const;  // ConfigError on any invalid value
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Applies a named ablation ("no-pc", "no-frg-loss", "visual-only", ...).
// Throws ConfigError for unknown names.
void apply_ablation(TrainConfig& config, const std::string& name);
std::vector<std::string> ablation_names();

struct Checkpoint {
    TrainConfig config;
    std::size_t dim = 0;
    std::size_t bottleneck = 0;
    Adapter adapter;
    Gate frg;
    Gate brg;
    StatNormalizer frg_norm;
    StatNormalizer brg_norm;
    bool pc_enabled = true;
    int base_epochs = 0;
    int pc_epochs = 0;
    bool has_base = true;  // false when loaded without the base-branch blocks
    bool has_new = true;   // false when loaded without the new-branch blocks

    // Fresh parameters for feature dimension `dim`, seeded from config.seed.
    static Checkpoint initial(const TrainConfig& config, std::size_t dim);

    // Trainable registries: base = adapters + FRG, new = BRG.
    ParamSet base_registry();
    ParamSet pc_registry();
    std::size_t trainable_count() const;

    BaseBranchModel base_model() const;
    NewBranchModel new_model() const;
};

struct EpochRecord {
    std::string branch;  // "base" or "pc"
    int epoch = 0;
    double loss = 0.0;
    // base: fdc_ce, frg, dist; pc: ce, kl, unused
    double term_a = 0.0;
    double term_b = 0.0;
    double term_c = 0.0;

    nlohmann::json to_json() const;
    bool operator==(const EpochRecord&) const = default;
};

// Divergence during training. Carries the parameters as of the last
// completed epoch.
class TrainingDiverged : public DivergedError {
public:
    TrainingDiverged(const std::string& what, Checkpoint last_good)
        : DivergedError(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

// Frozen per-sample quantities for the base branch over the base classes.
struct BasePrep {
    std::vector<std::size_t> candidates;
    Mat class_feats;
    std::vector<BaseSample> samples;
    std::vector<StatVec> raw_stats;
};
BasePrep prepare_base(const Dataset& data, std::span<const SampleRecord> records, const TrainConfig& config);

struct PcPrep {
    std::vector<std::size_t> candidates;
    std::vector<PcSample> samples;
    std::vector<StatVec> raw_stats;
};
PcPrep prepare_pc(const Dataset& data, std::span<const SampleRecord> records, const TrainConfig& config);

// Optimises adapters + FRG on the base training split. Deterministic for a
// given seed. Modifies only the base-branch part of `ckpt`.
std::vector<EpochRecord> train_base(const Dataset& data, Checkpoint& ckpt);

// Optimises the BRG on the base training split; the base branch is untouched.
// With both PC loss terms disabled it only records pc_enabled = false.
std::vector<EpochRecord> train_pc(const Dataset& data, Checkpoint& ckpt);

struct BranchMetrics {
    Branch branch = Branch::base;
    std::size_t count = 0;
    double accuracy = 0.0;
    double mean_dfg = 0.0;
    double mean_trust = 0.0;  // mean r (base) or b (new)
};

// Evaluates one branch on the test records whose label belongs to that branch.
BranchMetrics evaluate(const Dataset& data, const Checkpoint& ckpt, Branch branch);
// Same, on an explicit record set.
BranchMetrics evaluate_records(const Dataset& data, const Checkpoint& ckpt, Branch branch,
                               std::span<const SampleRecord> records);

double harmonic_mean(double a, double b);

// Worker count for evaluation: FVG_THREADS if set and positive, else 1.
std::size_t worker_count();

struct LoadParts {
    bool base = true;
    bool novel = true;
};

struct LoadedCheckpoint {
    Checkpoint ckpt;
    std::vector<std::string> blocks_read;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, LoadParts parts = {});

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace fvg
