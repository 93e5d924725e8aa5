#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "fvg/errors.hpp"
#include "fvg/report.hpp"
#include "fvg/trainer.hpp"

using namespace fvg;
namespace fs = std::filesystem;
using doctest::Approx;

namespace {

const Dataset& synth7() {
    static const Dataset d = synth_generate(SynthParams{});
    return d;
}

std::vector<double> brg_values(const Checkpoint& c) { return c.brg.flat_values(); }

bool same_params(const Checkpoint& a, const Checkpoint& b) {
    return a.adapter.flat_values() == b.adapter.flat_values() && a.frg.flat_values() == b.frg.flat_values() &&
           a.brg.flat_values() == b.brg.flat_values();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config defaults and validation") {
    const TrainConfig c;
    CHECK(c.lr == 0.0035);
    CHECK(c.epochs == 10);
    CHECK(c.batch == 4);
    CHECK(c.tau_d == 2.0);
    CHECK(c.lambda_d == 10.0);
    CHECK(c.dim_fdc == 64);
    CHECK(c.dim_rg == 32);
    TrainConfig bad = c;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.gate_layers = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.tau_d = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(apply_ablation(bad, "no-such-row"), ConfigError);

    TrainConfig j = c;
    apply_ablation(j, "no-pc");
    apply_ablation(j, "visual-only");
    j.frg_mask = IndicatorMask::parse("101");
    j.seed = 99;
    const TrainConfig back = TrainConfig::from_json(j.to_json());
    CHECK(back.to_json() == j.to_json());
}

TEST_CASE("zero epochs leave the checkpoint at its initialisation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.lambda_d = 0;
    cfg.toggles = {false, true, false, false, false};
    const Checkpoint init = Checkpoint::initial(cfg, synth7().dim());
    Checkpoint ck = init;
    CHECK(train_base(synth7(), ck).empty());
    CHECK(train_pc(synth7(), ck).empty());
    CHECK(same_params(ck, init));
}

TEST_CASE("parameter registries") {
    Checkpoint ck = Checkpoint::initial(TrainConfig{}, 512);
    const auto base = ck.base_registry().names();
    for (const auto& n : base) CHECK((n.rfind("adapter.", 0) == 0 || n.rfind("frg.", 0) == 0));
    CHECK(base.size() == 8 + 4);
    for (const auto& n : ck.pc_registry().names()) CHECK(n.rfind("brg.", 0) == 0);
    CHECK(ck.pc_registry().count() == 4);

    TrainConfig v;
    apply_ablation(v, "visual-only");
    Checkpoint vo = Checkpoint::initial(v, 512);
    CHECK(vo.base_registry().count() == 4 + 4);
}

TEST_CASE("default trainable parameter count at D=512 is about 0.13M") {
    const Checkpoint ck = Checkpoint::initial(TrainConfig{}, 512);
    CHECK(ck.trainable_count() == 2 * (512 * 64 + 64 + 64 * 512 + 512) + 161 + 161);
    CHECK(std::abs(static_cast<double>(ck.trainable_count()) - 130000.0) <= 0.05 * 130000.0);
    TrainConfig g1;
    g1.gate_layers = 1;
    const ParamCounts pc = param_counts(Checkpoint::initial(g1, 512));
    CHECK(pc.frg == 4);
    CHECK(pc.brg == 4);
}

TEST_CASE("training is deterministic") {
    TrainConfig cfg;
    cfg.seed = 3;
    Checkpoint a = Checkpoint::initial(cfg, synth7().dim());
    Checkpoint b = Checkpoint::initial(cfg, synth7().dim());
    const auto ha = train_base(synth7(), a);
    const auto hb = train_base(synth7(), b);
    CHECK(ha == hb);
    CHECK(ha.size() == 10);
    for (const auto& e : ha) CHECK(std::isfinite(e.loss));
    CHECK(train_pc(synth7(), a) == train_pc(synth7(), b));
    CHECK(same_params(a, b));

    cfg.seed = 4;
    Checkpoint c = Checkpoint::initial(cfg, synth7().dim());
    train_base(synth7(), c);
    CHECK(!same_params(a, c));
}

TEST_CASE("train_pc touches only the BRG and does not depend on base training") {
    const TrainConfig cfg;
    Checkpoint first = Checkpoint::initial(cfg, synth7().dim());
    train_pc(synth7(), first);
    const auto adapter_before = first.adapter.flat_values();
    const auto frg_before = first.frg.flat_values();
    train_base(synth7(), first);

    Checkpoint second = Checkpoint::initial(cfg, synth7().dim());
    train_base(synth7(), second);
    const auto base_after = second.adapter.flat_values();
    train_pc(synth7(), second);
    CHECK(second.adapter.flat_values() == base_after);
    CHECK(brg_values(first) == brg_values(second));

    Checkpoint only_pc = Checkpoint::initial(cfg, synth7().dim());
    train_pc(synth7(), only_pc);
    CHECK(only_pc.adapter.flat_values() == adapter_before);
    CHECK(only_pc.frg.flat_values() == frg_before);
}

TEST_CASE("disabling both PC terms is a no-op that switches PC off") {
    TrainConfig cfg;
    apply_ablation(cfg, "no-pc");
    Checkpoint ck = Checkpoint::initial(cfg, synth7().dim());
    const auto before = brg_values(ck);
    CHECK(train_pc(synth7(), ck).empty());
    CHECK(brg_values(ck) == before);
    CHECK(!ck.pc_enabled);
}

TEST_CASE("base training improves on the frozen backbone and lowers D_fg") {
    const TrainConfig cfg;
    const Checkpoint init = Checkpoint::initial(cfg, synth7().dim());
    Checkpoint ck = init;
    train_base(synth7(), ck);
    const BranchMetrics before = evaluate(synth7(), init, Branch::base);
    const BranchMetrics after = evaluate(synth7(), ck, Branch::base);
    MESSAGE("frozen " << before.accuracy << " trained " << after.accuracy);
    CHECK(after.accuracy >= before.accuracy);
    CHECK(after.mean_dfg < before.mean_dfg);
}

TEST_CASE("converged run classifies its training data") {
    TrainConfig cfg;
    cfg.epochs = 30;
    Checkpoint ck = Checkpoint::initial(cfg, synth7().dim());
    train_base(synth7(), ck);
    const BranchMetrics m = evaluate_records(synth7(), ck, Branch::base, synth7().train());
    MESSAGE("train accuracy " << m.accuracy);
    CHECK(m.accuracy >= 0.9);
}

TEST_CASE("harmonic mean") {
    CHECK(harmonic_mean(0.8, 0.8) == Approx(0.8));
    CHECK(std::abs(harmonic_mean(82.40, 73.62) - 77.76) < 0.005);
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
}

TEST_CASE("perfect classifier gives accuracy 1 and finite D_fg") {
    Dataset d;
    d.banks.names = {"a", "b", "c", "d"};
    d.banks.feats_backbone = Mat(4, 4);
    for (std::size_t i = 0; i < 4; ++i) d.banks.feats_backbone(i, i) = 1;
    d.banks.feats_prior = d.banks.feats_backbone;
    d.split.base_classes = {0, 1};
    d.split.new_classes = {2, 3};
    for (std::size_t c = 0; c < 4; ++c) {
        SampleRecord r;
        r.id = "s" + std::to_string(c);
        r.label = c;
        r.feat_full = onehot(4, c);
        r.feat_fg = onehot(4, c);
        r.area_ratio = 0.5;
        r.z_clip = backbone_logits(r.feat_full, d.banks.feats_prior, 100.0);
        d.records.push_back(r);
    }
    const Checkpoint ck = Checkpoint::initial(TrainConfig{}, 4);
    for (Branch b : {Branch::base, Branch::novel}) {
        const BranchMetrics m = evaluate(d, ck, b);
        CHECK(m.count == 2);
        CHECK(m.accuracy == 1.0);
        CHECK(std::isfinite(m.mean_dfg));
    }
    CHECK_THROWS_AS(evaluate(synth7(), ck, Branch::base), ConfigError);
}

TEST_CASE("evaluation does not depend on the worker count") {
    Checkpoint ck = Checkpoint::initial(TrainConfig{}, synth7().dim());
    train_base(synth7(), ck);
    train_pc(synth7(), ck);
    ::unsetenv("FVG_THREADS");
    CHECK(worker_count() == 1);
    const BranchMetrics a = evaluate(synth7(), ck, Branch::base);
    const BranchMetrics an = evaluate(synth7(), ck, Branch::novel);
    ::setenv("FVG_THREADS", "4", 1);
    CHECK(worker_count() == 4);
    const BranchMetrics b = evaluate(synth7(), ck, Branch::base);
    const BranchMetrics bn = evaluate(synth7(), ck, Branch::novel);
    ::unsetenv("FVG_THREADS");
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.mean_dfg == b.mean_dfg);
    CHECK(a.mean_trust == b.mean_trust);
    CHECK(an.mean_trust == bn.mean_trust);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Checkpoint ck = Checkpoint::initial(TrainConfig{}, synth7().dim());
    train_base(synth7(), ck);
    train_pc(synth7(), ck);
    const fs::path dir = fs::temp_directory_path() / "fvg_test_ckpt";
    fs::remove_all(dir);
    save_checkpoint(ck, dir);
    const LoadedCheckpoint loaded = load_checkpoint(dir);
    CHECK(same_params(loaded.ckpt, ck));
    CHECK(loaded.ckpt.frg_norm.mean == ck.frg_norm.mean);
    CHECK(loaded.ckpt.brg_norm.stddev == ck.brg_norm.stddev);
    CHECK(loaded.ckpt.config.to_json() == ck.config.to_json());
    CHECK(loaded.ckpt.base_epochs == 10);

    for (Branch b : {Branch::base, Branch::novel}) {
        const BranchMetrics x = evaluate(synth7(), ck, b);
        const BranchMetrics y = evaluate(synth7(), loaded.ckpt, b);
        CHECK(x.accuracy == y.accuracy);
        CHECK(x.mean_dfg == y.mean_dfg);
        CHECK(x.mean_trust == y.mean_trust);
    }

    const fs::path again = fs::temp_directory_path() / "fvg_test_ckpt2";
    fs::remove_all(again);
    save_checkpoint(loaded.ckpt, again);
    for (const auto& e : fs::directory_iterator(dir)) CHECK(slurp(e.path()) == slurp(again / e.path().filename()));

    const LoadedCheckpoint nov = load_checkpoint(dir, LoadParts{false, true});
    for (const auto& b : nov.blocks_read) CHECK(b.rfind("adapter.", 0) != 0);
    CHECK_THROWS_AS(nov.ckpt.base_model(), ConfigError);
    CHECK(evaluate(synth7(), nov.ckpt, Branch::novel).accuracy == evaluate(synth7(), ck, Branch::novel).accuracy);

    fs::remove(dir / "adapter.visual.w_up.bin");
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
    CHECK_NOTHROW(load_checkpoint(dir, LoadParts{false, true}));
}

TEST_CASE("divergence aborts with the last good checkpoint") {
    TrainConfig cfg;
    cfg.lr = 1e300;
    const Checkpoint init = Checkpoint::initial(cfg, synth7().dim());
    Checkpoint ck = init;
    bool thrown = false;
    try {
        train_base(synth7(), ck);
    } catch (const TrainingDiverged& e) {
        thrown = true;
        CHECK(all_finite(e.last_good().adapter.flat_values()));
        CHECK(all_finite(e.last_good().frg.flat_values()));
    }
    CHECK(thrown);
}

TEST_CASE("reports are deterministic line-delimited JSON") {
    Checkpoint ck = Checkpoint::initial(TrainConfig{}, synth7().dim());
    const auto h = train_base(synth7(), ck);
    RunReport r;
    r.config = ck.config;
    r.params = param_counts(ck);
    r.history = h;
    r.base = evaluate(synth7(), ck, Branch::base);
    r.novel = evaluate(synth7(), ck, Branch::novel);
    const std::string s = r.to_string();
    CHECK(s == r.to_string());
    std::size_t lines = 0;
    bool saw_hm = false;
    for (std::size_t pos = 0, nl; (nl = s.find('\n', pos)) != std::string::npos; pos = nl + 1) {
        const auto j = nlohmann::json::parse(s.substr(pos, nl - pos));
        ++lines;
        if (j.at("kind") == "summary") {
            saw_hm = j.contains("hm");
            CHECK(!j.contains("wall_time_s"));
        }
    }
    CHECK(lines == 1 + h.size() + 2 + 1);
    CHECK(saw_hm);
}

TEST_CASE("a huge but float-representable step saturates instead of diverging") {
    TrainConfig cfg;
    cfg.lr = 1e30;
    Checkpoint ck = Checkpoint::initial(cfg, synth7().dim());
    for (const auto& e : train_base(synth7(), ck)) CHECK(std::isfinite(e.loss));
}

TEST_CASE("cosine schedule trains") {
    TrainConfig cfg;
    cfg.schedule = LrSchedule::cosine;
    Checkpoint ck = Checkpoint::initial(cfg, synth7().dim());
    const auto h = train_base(synth7(), ck);
    CHECK(h.size() == 10);
    CHECK(h.back().loss < h.front().loss);
}

}
