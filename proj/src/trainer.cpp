#include "fvg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "fvg/indicators.hpp"

namespace fvg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Stream : std::uint64_t {
    kAdapterInit = 1,
    kFrgInit = 2,
    kBrgInit = 3,
    kBaseShuffle = 4,
    kPcShuffle = 5,
};

std::mt19937_64 stream_rng(std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xFFFFFFFFu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

// Rounds onto the float32 grid; values past float range mean the step diverged.
void store_float(ParamSet& registry) {
    round_to_float(registry);
    for (const Parameter* p : registry) {
        if (!all_finite(p->value.data())) throw DivergedError("non-finite value in " + p->name + " after update");
    }
}

const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (cfg.schedule == LrSchedule::constant || total_steps == 0) return cfg.lr;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return std::max(0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * t)), 1e-12);
}

std::map<std::size_t, std::size_t> local_index(const std::vector<std::size_t>& candidates) {
    std::map<std::size_t, std::size_t> m;
    for (std::size_t i = 0; i < candidates.size(); ++i) m[candidates[i]] = i;
    return m;
}

template <typename Sample>
std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t>& order, std::mt19937_64& rng,
                                                    std::size_t batch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (!(tau_d > 0.0) || !std::isfinite(tau_d)) throw ConfigError("tau_d must be positive");
    if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d)) throw ConfigError("lambda_d must be non-negative");
    if (dim_fdc == 0) throw ConfigError("dim_fdc must be positive");
    if (dim_rg == 0) throw ConfigError("dim_rg must be positive");
    gate_depth_variant(gate_layers, dim_rg);
    if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) throw ConfigError("logit scale must be positive");
    frg_mask.validate();
    brg_mask.validate();
}

json TrainConfig::to_json() const {
    return json{
        {"lr", lr},
        {"epochs", epochs},
        {"batch", batch},
        {"tau_d", tau_d},
        {"lambda_d", lambda_d},
        {"dim_fdc", dim_fdc},
        {"dim_rg", dim_rg},
        {"gate_layers", gate_layers},
        {"logit_scale", logit_scale},
        {"seed", seed},
        {"toggles",
         {{"frg_loss", toggles.frg_loss},
          {"fdc_ce", toggles.fdc_ce},
          {"fdc_dist", toggles.fdc_dist},
          {"pc_ce", toggles.pc_ce},
          {"pc_kl", toggles.pc_kl}}},
        {"textual_adapter", textual_adapter},
        {"stop_grad_r", stop_grad_r},
        {"frg_indicators", frg_mask.to_string()},
        {"brg_indicators", brg_mask.to_string()},
        {"lr_schedule", to_string(schedule)},
    };
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.tau_d = j.value("tau_d", c.tau_d);
    c.lambda_d = j.value("lambda_d", c.lambda_d);
    c.dim_fdc = j.value("dim_fdc", c.dim_fdc);
    c.dim_rg = j.value("dim_rg", c.dim_rg);
    c.gate_layers = j.value("gate_layers", c.gate_layers);
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.seed = j.value("seed", c.seed);
    if (j.contains("toggles")) {
        const json& t = j.at("toggles");
        c.toggles.frg_loss = t.value("frg_loss", true);
        c.toggles.fdc_ce = t.value("fdc_ce", true);
        c.toggles.fdc_dist = t.value("fdc_dist", true);
        c.toggles.pc_ce = t.value("pc_ce", true);
        c.toggles.pc_kl = t.value("pc_kl", true);
    }
    c.textual_adapter = j.value("textual_adapter", c.textual_adapter);
    c.stop_grad_r = j.value("stop_grad_r", c.stop_grad_r);
    c.frg_mask = IndicatorMask::parse(j.value("frg_indicators", std::string("111")));
    c.brg_mask = IndicatorMask::parse(j.value("brg_indicators", std::string("111")));
    c.schedule = parse_schedule(j.value("lr_schedule", std::string("constant")));
    return c;
}

std::vector<std::string> ablation_names() {
    return {"no-frg-loss", "no-fdc-ce", "no-fdc-dist", "no-pc-ce", "no-pc-kl",
            "no-pc",       "no-fdc",    "no-base",     "visual-only", "r-grad-flow"};
}

void apply_ablation(TrainConfig& c, const std::string& name) {
    if (name == "no-frg-loss") {
        c.toggles.frg_loss = false;
    } else if (name == "no-fdc-ce") {
        c.toggles.fdc_ce = false;
    } else if (name == "no-fdc-dist") {
        c.toggles.fdc_dist = false;
    } else if (name == "no-pc-ce") {
        c.toggles.pc_ce = false;
    } else if (name == "no-pc-kl") {
        c.toggles.pc_kl = false;
    } else if (name == "no-pc") {
        c.toggles.pc_ce = false;
        c.toggles.pc_kl = false;
    } else if (name == "no-fdc") {
        c.toggles.fdc_ce = false;
        c.toggles.fdc_dist = false;
    } else if (name == "no-base") {
        c.toggles.frg_loss = false;
        c.toggles.fdc_ce = false;
        c.toggles.fdc_dist = false;
    } else if (name == "visual-only") {
        c.textual_adapter = false;
    } else if (name == "r-grad-flow") {
        c.stop_grad_r = false;
    } else {
        throw ConfigError("unknown ablation '" + name + "'");
    }
}

Checkpoint Checkpoint::initial(const TrainConfig& config, std::size_t dim) {
    config.validate();
    Checkpoint c;
    c.config = config;
    c.dim = dim;
    c.bottleneck = resolve_bottleneck(config.dim_fdc, dim);
    c.adapter = Adapter(dim, c.bottleneck, config.textual_adapter);
    auto rng_a = stream_rng(config.seed, kAdapterInit);
    c.adapter.init(rng_a);
    const GateSchema schema = gate_depth_variant(config.gate_layers, config.dim_rg);
    c.frg = Gate("frg", schema);
    auto rng_f = stream_rng(config.seed, kFrgInit);
    c.frg.init(rng_f);
    c.brg = Gate("brg", schema);
    auto rng_b = stream_rng(config.seed, kBrgInit);
    c.brg.init(rng_b);
    c.pc_enabled = config.toggles.pc_active();
    return c;
}

ParamSet Checkpoint::base_registry() {
    ParamSet set = adapter.params();
    set.add(frg.params());
    return set;
}

ParamSet Checkpoint::pc_registry() { return brg.params(); }

std::size_t Checkpoint::trainable_count() const {
    return adapter.param_count() + frg.schema().param_count() + brg.schema().param_count();
}

BaseBranchModel Checkpoint::base_model() const {
    if (!has_base) throw ConfigError("checkpoint was loaded without base-branch parameters");
    return BaseBranchModel{&adapter, &frg, frg_norm, config.frg_mask};
}

NewBranchModel Checkpoint::new_model() const {
    if (!has_new) throw ConfigError("checkpoint was loaded without new-branch parameters");
    return NewBranchModel{&brg, brg_norm, config.brg_mask, pc_enabled};
}

json EpochRecord::to_json() const {
    json j{{"branch", branch}, {"epoch", epoch}, {"loss", loss}};
    if (branch == "base") {
        j["fdc_ce"] = term_a;
        j["frg"] = term_b;
        j["dist"] = term_c;
    } else {
        j["ce"] = term_a;
        j["kl"] = term_b;
    }
    return j;
}

BasePrep prepare_base(const Dataset& data, std::span<const SampleRecord> records, const TrainConfig& cfg) {
    BasePrep prep;
    prep.candidates = data.split.base_classes;
    if (prep.candidates.empty()) throw ConfigError("dataset has no base classes");
    prep.class_feats = select_rows(data.banks.feats_backbone, prep.candidates);
    const auto local = local_index(prep.candidates);
    for (const SampleRecord& r : records) {
        const auto it = local.find(r.label);
        if (it == local.end()) throw ValidationError("record '" + r.id + "' is not a base-class sample");
        BaseSample s;
        s.feat_full = r.feat_full;
        s.label = it->second;
        s.z_full = backbone_logits(r.feat_full, prep.class_feats, cfg.logit_scale);
        s.z_fg = backbone_logits(r.feat_fg, prep.class_feats, cfg.logit_scale);
        s.r_star = frg_supervision(s.z_full, s.z_fg, s.label, cfg.tau_d);
        const LogitBundle bundle{s.z_full, s.z_fg, std::nullopt, s.z_full.size()};
        prep.raw_stats.push_back(build_frg_stats(bundle, r.area_ratio, cfg.tau_d).as_array());
        prep.samples.push_back(std::move(s));
    }
    return prep;
}

PcPrep prepare_pc(const Dataset& data, std::span<const SampleRecord> records, const TrainConfig& cfg) {
    PcPrep prep;
    prep.candidates = data.split.base_classes;
    if (prep.candidates.empty()) throw ConfigError("dataset has no base classes");
    const Mat class_feats = select_rows(data.banks.feats_backbone, prep.candidates);
    const Mat prior_feats = select_rows(data.banks.feats_prior, prep.candidates);
    const auto local = local_index(prep.candidates);
    for (const SampleRecord& r : records) {
        const auto it = local.find(r.label);
        if (it == local.end()) throw ValidationError("record '" + r.id + "' is not a base-class sample");
        PcSample s;
        s.label = it->second;
        s.z_full = backbone_logits(r.feat_full, class_feats, cfg.logit_scale);
        s.z_clip = r.z_clip ? select(*r.z_clip, prep.candidates)
                            : backbone_logits(r.feat_full, prior_feats, cfg.logit_scale);
        const LogitBundle bundle{s.z_full, s.z_full, s.z_clip, s.z_full.size()};
        prep.raw_stats.push_back(build_brg_stats(bundle, cfg.tau_d).as_array());
        prep.samples.push_back(std::move(s));
    }
    return prep;
}

std::vector<EpochRecord> train_base(const Dataset& data, Checkpoint& ckpt) {
    const TrainConfig& cfg = ckpt.config;
    cfg.validate();
    if (ckpt.dim != data.dim()) throw ConfigError("checkpoint dimension does not match dataset");
    if (!ckpt.has_base) throw ConfigError("checkpoint has no base-branch parameters");
    std::vector<EpochRecord> history;
    if (cfg.epochs == 0 || !cfg.toggles.base_active() || data.train_count == 0) return history;

    BasePrep prep = prepare_base(data, data.train(), cfg);
    ckpt.frg_norm = StatNormalizer::fit(prep.raw_stats);
    for (std::size_t i = 0; i < prep.samples.size(); ++i) {
        prep.samples[i].gate_input = cfg.frg_mask.apply(ckpt.frg_norm.apply(prep.raw_stats[i]));
    }

    BaseLossOptions opt;
    opt.lambda_d = cfg.lambda_d;
    opt.tau_d = cfg.tau_d;
    opt.scale = cfg.logit_scale;
    opt.use_frg_loss = cfg.toggles.frg_loss;
    opt.use_fdc_ce = cfg.toggles.fdc_ce;
    opt.use_fdc_dist = cfg.toggles.fdc_dist;
    opt.stop_grad_r = cfg.stop_grad_r;

    ParamSet registry = ckpt.base_registry();
    registry.zero_grad();
    auto rng = stream_rng(cfg.seed, kBaseShuffle);
    std::vector<std::size_t> order(prep.samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t steps_per_epoch = (order.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
    std::size_t step = 0;
    Checkpoint last_good = ckpt;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec{"base", ckpt.base_epochs + epoch + 1};
        try {
            const auto batches = epoch_batches<BaseSample>(order, rng, cfg.batch);
            for (const auto& idx : batches) {
                std::vector<BaseSample> batch;
                batch.reserve(idx.size());
                for (std::size_t i : idx) batch.push_back(prep.samples[i]);
                registry.zero_grad();
                const BaseLossTerms t = base_loss(batch, prep.class_feats, ckpt.adapter, ckpt.frg, opt, true);
                sgd_step(registry, scheduled_lr(cfg, step++, total_steps));
                store_float(registry);
                rec.loss += t.total;
                rec.term_a += t.fdc_ce;
                rec.term_b += t.frg;
                rec.term_c += t.dist;
            }
        } catch (const DivergedError& e) {
            throw TrainingDiverged(std::string("base training diverged in epoch ") +
                                       std::to_string(rec.epoch) + ": " + e.what(),
                                   last_good);
        }
        const double n = static_cast<double>(steps_per_epoch);
        rec.loss /= n;
        rec.term_a /= n;
        rec.term_b /= n;
        rec.term_c /= n;
        history.push_back(rec);
        last_good = ckpt;
    }
    ckpt.base_epochs += cfg.epochs;
    return history;
}

std::vector<EpochRecord> train_pc(const Dataset& data, Checkpoint& ckpt) {
    const TrainConfig& cfg = ckpt.config;
    cfg.validate();
    if (!ckpt.has_new) throw ConfigError("checkpoint has no new-branch parameters");
    std::vector<EpochRecord> history;
    ckpt.pc_enabled = cfg.toggles.pc_active();
    if (!ckpt.pc_enabled || cfg.epochs == 0 || data.train_count == 0) return history;

    PcPrep prep = prepare_pc(data, data.train(), cfg);
    ckpt.brg_norm = StatNormalizer::fit(prep.raw_stats);
    for (std::size_t i = 0; i < prep.samples.size(); ++i) {
        prep.samples[i].gate_input = cfg.brg_mask.apply(ckpt.brg_norm.apply(prep.raw_stats[i]));
    }
    const PcLossOptions opt{cfg.tau_d, cfg.toggles.pc_ce, cfg.toggles.pc_kl};

    ParamSet registry = ckpt.pc_registry();
    registry.zero_grad();
    auto rng = stream_rng(cfg.seed, kPcShuffle);
    std::vector<std::size_t> order(prep.samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t steps_per_epoch = (order.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
    std::size_t step = 0;
    Checkpoint last_good = ckpt;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec{"pc", ckpt.pc_epochs + epoch + 1};
        try {
            const auto batches = epoch_batches<PcSample>(order, rng, cfg.batch);
            for (const auto& idx : batches) {
                std::vector<PcSample> batch;
                batch.reserve(idx.size());
                for (std::size_t i : idx) batch.push_back(prep.samples[i]);
                registry.zero_grad();
                const PcLossTerms t = pc_loss(batch, ckpt.brg, opt, true);
                sgd_step(registry, scheduled_lr(cfg, step++, total_steps));
                store_float(registry);
                rec.loss += t.total;
                rec.term_a += t.ce;
                rec.term_b += t.kl;
            }
        } catch (const DivergedError& e) {
            throw TrainingDiverged(std::string("PC training diverged in epoch ") + std::to_string(rec.epoch) +
                                       ": " + e.what(),
                                   last_good);
        }
        const double n = static_cast<double>(steps_per_epoch);
        rec.loss /= n;
        rec.term_a /= n;
        rec.term_b /= n;
        history.push_back(rec);
        last_good = ckpt;
    }
    ckpt.pc_epochs += cfg.epochs;
    return history;
}

double harmonic_mean(double a, double b) {
    if (a + b <= 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

std::size_t worker_count() {
    const char* env = std::getenv("FVG_THREADS");
    if (env == nullptr) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
}

BranchMetrics evaluate_records(const Dataset& data, const Checkpoint& ckpt, Branch branch,
                               std::span<const SampleRecord> records) {
    if (ckpt.dim != data.dim()) throw ConfigError("checkpoint dimension does not match dataset");
    const auto& cfg = ckpt.config;
    const BranchPredictor predictor =
        branch == Branch::base
            ? BranchPredictor::for_base(data.banks, data.split.base_classes, ckpt.base_model(), cfg.logit_scale,
                                        cfg.tau_d)
            : BranchPredictor::for_new(data.banks, data.split.new_classes, ckpt.new_model(), cfg.logit_scale,
                                       cfg.tau_d);
    const auto local = local_index(predictor.candidates());
    std::vector<const SampleRecord*> selected;
    for (const SampleRecord& r : records) {
        if (local.count(r.label) != 0) selected.push_back(&r);
    }

    std::vector<Prediction> results(selected.size());
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(selected.size(), 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < selected.size(); ++i) results[i] = predictor.predict(*selected[i]);
    } else {
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            threads.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < selected.size(); i += workers) {
                        results[i] = predictor.predict(*selected[i]);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    BranchMetrics m;
    m.branch = branch;
    m.count = selected.size();
    if (selected.empty()) return m;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        if (results[i].predicted_class == selected[i]->label) ++correct;
        m.mean_dfg += results[i].d_fg;
        m.mean_trust += results[i].trust;
    }
    const double n = static_cast<double>(selected.size());
    m.accuracy = static_cast<double>(correct) / n;
    m.mean_dfg /= n;
    m.mean_trust /= n;
    return m;
}

BranchMetrics evaluate(const Dataset& data, const Checkpoint& ckpt, Branch branch) {
    return evaluate_records(data, ckpt, branch, data.test());
}

namespace {

void write_param(const Parameter& p, const fs::path& dir) {
    write_block(dir / (p.name + ".bin"), Block::from_mat(p.value));
}

void read_param(Parameter& p, const fs::path& dir) {
    const Block b = read_block(dir / (p.name + ".bin"));
    if (b.rows != p.value.rows() || b.cols != p.value.cols()) {
        throw FormatError("checkpoint block " + p.name + " has the wrong shape");
    }
    p.value = b.to_mat();
    p.grad = Mat(p.value.rows(), p.value.cols());
}

void write_norm(const StatNormalizer& n, const fs::path& path) {
    Vec v(n.mean.begin(), n.mean.end());
    v.insert(v.end(), n.stddev.begin(), n.stddev.end());
    write_block(path, Block::from_floats(2, kStatCount, v));
}

StatNormalizer read_norm(const fs::path& path) {
    const Block b = read_block(path);
    if (b.rows != 2 || b.cols != kStatCount) throw FormatError(path.string() + ": normalizer block must be 2x3");
    StatNormalizer n;
    for (std::size_t k = 0; k < kStatCount; ++k) {
        n.mean[k] = static_cast<double>(b.float_at(k));
        n.stddev[k] = static_cast<double>(b.float_at(kStatCount + k));
    }
    return n;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    fs::create_directories(dir);
    Checkpoint copy = ckpt;
    std::vector<std::string> blocks;
    if (copy.has_base) {
        for (const Parameter* p : copy.base_registry()) {
            write_param(*p, dir);
            blocks.push_back(p->name);
        }
        write_norm(copy.frg_norm, dir / "frg.norm.bin");
        blocks.emplace_back("frg.norm");
    }
    if (copy.has_new) {
        for (const Parameter* p : copy.pc_registry()) {
            write_param(*p, dir);
            blocks.push_back(p->name);
        }
        write_norm(copy.brg_norm, dir / "brg.norm.bin");
        blocks.emplace_back("brg.norm");
    }
    json m{
        {"format", "FVGE-checkpoint"},
        {"version", kFvgeVersion},
        {"dim", ckpt.dim},
        {"bottleneck", ckpt.bottleneck},
        {"pc_enabled", ckpt.pc_enabled},
        {"base_epochs", ckpt.base_epochs},
        {"pc_epochs", ckpt.pc_epochs},
        {"has_base", ckpt.has_base},
        {"has_new", ckpt.has_new},
        {"trainable_params", ckpt.trainable_count()},
        {"config", ckpt.config.to_json()},
        {"blocks", blocks},
    };
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint manifest in " + dir.string());
    out << m.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, LoadParts parts) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw FormatError("missing checkpoint manifest in " + dir.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }

    LoadedCheckpoint out;
    Checkpoint& c = out.ckpt;
    try {
        if (m.at("format").get<std::string>() != "FVGE-checkpoint") throw FormatError("not a checkpoint manifest");
        c.config = TrainConfig::from_json(m.at("config"));
        c.dim = m.at("dim").get<std::size_t>();
        c.bottleneck = m.at("bottleneck").get<std::size_t>();
        c.pc_enabled = m.at("pc_enabled").get<bool>();
        c.base_epochs = m.at("base_epochs").get<int>();
        c.pc_epochs = m.at("pc_epochs").get<int>();
        const bool stored_base = m.value("has_base", true);
        const bool stored_new = m.value("has_new", true);
        if (parts.base && !stored_base) throw ConfigError("checkpoint does not contain base-branch parameters");
        if (parts.novel && !stored_new) throw ConfigError("checkpoint does not contain new-branch parameters");
        c.has_base = parts.base;
        c.has_new = parts.novel;
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }

    c.adapter = Adapter(c.dim, c.bottleneck, c.config.textual_adapter);
    const GateSchema schema = gate_depth_variant(c.config.gate_layers, c.config.dim_rg);
    c.frg = Gate("frg", schema);
    c.brg = Gate("brg", schema);
    if (parts.base) {
        for (Parameter* p : c.base_registry()) {
            read_param(*p, dir);
            out.blocks_read.push_back(p->name);
        }
        c.frg_norm = read_norm(dir / "frg.norm.bin");
        out.blocks_read.emplace_back("frg.norm");
    }
    if (parts.novel) {
        for (Parameter* p : c.pc_registry()) {
            read_param(*p, dir);
            out.blocks_read.push_back(p->name);
        }
        c.brg_norm = read_norm(dir / "brg.norm.bin");
        out.blocks_read.emplace_back("brg.norm");
    }
    return out;
}

void write_history(const std::vector<EpochRecord>& history, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write loss history: " + path.string());
    for (const auto& rec : history) out << rec.to_json().dump() << '\n';
}

}  // namespace fvg
