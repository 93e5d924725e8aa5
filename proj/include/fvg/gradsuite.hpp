#pragma once

// Finite-difference check of every training loss on small random instances.

#include <cstdint>
#include <string>
#include <vector>

namespace fvg {

struct GradSuiteOptions {
    std::uint64_t seed = 11;
    std::size_t classes = 3;
    std::size_t dim = 16;
    std::size_t batch = 4;
    double tolerance = 1e-3;
    double step = 1e-4;
    // Test hook: flips the analytic gradient before comparison. Every term
    // must then fail.
    bool inject_wrong_sign = false;
};

struct GradTermResult {
    std::string term;
    double max_rel_error = 0.0;
    std::string worst_param;
    bool pass = false;
};

// Terms, in order: frg, fdc_ce, dist, pc_ce, pc_kl, base_total, pc_total.
std::vector<GradTermResult> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace fvg
