#include "fvg/report.hpp"

#include <fstream>

namespace fvg {

using nlohmann::json;

ParamCounts param_counts(const Checkpoint& ckpt) {
    return {ckpt.adapter.param_count(), ckpt.frg.schema().param_count(), ckpt.brg.schema().param_count()};
}

std::optional<double> RunReport::hm() const {
    if (!base || !novel) return std::nullopt;
    return harmonic_mean(base->accuracy, novel->accuracy);
}

namespace {

json branch_line(const BranchMetrics& m) {
    const bool is_base = m.branch == Branch::base;
    return json{
        {"kind", "branch"},
        {"branch", to_string(m.branch)},
        {"count", m.count},
        {"accuracy", m.accuracy},
        {"mean_dfg", m.mean_dfg},
        {is_base ? "mean_r" : "mean_b", m.mean_trust},
    };
}

}  // namespace

std::vector<json> RunReport::lines() const {
    std::vector<json> out;
    json cfg = config.to_json();
    cfg["kind"] = "config";
    cfg["bottleneck_effective"] = bottleneck;
    out.push_back(std::move(cfg));
    for (const auto& rec : history) {
        json j = rec.to_json();
        j["kind"] = "epoch";
        out.push_back(std::move(j));
    }
    if (base) out.push_back(branch_line(*base));
    if (novel) out.push_back(branch_line(*novel));
    json summary{
        {"kind", "summary"},
        {"seed", config.seed},
        {"params", {{"adapter", params.adapter}, {"frg", params.frg}, {"brg", params.brg}, {"total", params.total()}}},
    };
    if (const auto h = hm()) summary["hm"] = *h;
    if (wall_time_s) summary["wall_time_s"] = *wall_time_s;
    out.push_back(std::move(summary));
    return out;
}

std::string RunReport::to_string() const {
    std::string s;
    for (const auto& j : lines()) {
        s += j.dump();
        s += '\n';
    }
    return s;
}

void write_report(const RunReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write report: " + path.string());
    out << report.to_string();
}

}  // namespace fvg
