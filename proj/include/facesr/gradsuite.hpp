#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace facesr {

struct GradSuiteCase {
    std::string name;
    double tolerance = 1e-4;
    double step = 1e-3;
    std::size_t seeds = 0;
    std::size_t coords = 0;
    double max_rel_error = 0.0;
    std::string worst;
    double seconds = 0.0;

    bool passed() const { return max_rel_error < tolerance; }
};

struct GradSuiteOptions {
    std::size_t seeds = 20;
    std::uint64_t first_seed = 0;
    // Substring filter on case names; empty runs everything.
    std::string only;
};

struct GradSuiteReport {
    std::vector<GradSuiteCase> cases;
    double seconds = 0.0;

    bool passed() const;
    double max_rel_error() const;          // over cases with tolerance 1e-4
    double max_rel_error_end_to_end() const;  // over looser end-to-end cases
};

std::vector<std::string> gradient_suite_cases();

// Central finite differences for every differentiable operation, each over
// `seeds` random instances, on double-precision graphs.
GradSuiteReport run_gradient_suite(const GradSuiteOptions& options = {},
                                   const std::function<void(const GradSuiteCase&)>& on_case = {});

}  // namespace facesr
