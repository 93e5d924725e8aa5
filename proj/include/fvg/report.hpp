#pragma once

// Run reports: line-delimited JSON, one object per line.
//   {"kind":"config", ...}            config echo
//   {"kind":"branch","branch":"base", ...}
//   {"kind":"branch","branch":"new", ...}
//   {"kind":"summary", ...}           HM, seed, parameter counts, optional wall time

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvg/trainer.hpp"

namespace fvg {

struct ParamCounts {
    std::size_t adapter = 0;
    std::size_t frg = 0;
    std::size_t brg = 0;
    std::size_t total() const { return adapter + frg + brg; }
};

ParamCounts param_counts(const Checkpoint& ckpt);

struct RunReport {
    TrainConfig config;
    std::size_t bottleneck = 0;
    ParamCounts params;
    std::optional<BranchMetrics> base;
    std::optional<BranchMetrics> novel;
    std::optional<double> wall_time_s;  // only set with --record-time; breaks byte-level determinism
    std::vector<EpochRecord> history;   // empty for eval-only runs

    // HM of the two branch accuracies; absent unless both branches were evaluated.
    std::optional<double> hm() const;
    std::vector<nlohmann::json> lines() const;
    std::string to_string() const;
};

void write_report(const RunReport& report, const std::filesystem::path& path);

}  // namespace fvg
