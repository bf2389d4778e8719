#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "facesr/tensor.hpp"

namespace facesr {

struct GradCheckOptions {
    double step = 1e-3;
    // Denominator floor of the relative error, so coordinates whose true
    // derivative is ~0 are judged on absolute error at this scale.
    double denominator_floor = 1e-3;
    // 0 checks every coordinate; otherwise a seeded random subset per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst;  // "<tensor>[<index>] analytic=... numeric=..."
};

inline double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

// Central finite differences of a scalar objective against the reverse-mode
// gradient, evaluated entirely in double precision. `objective` must rebuild
// its graph from the current values of `inputs` on every call.
inline GradCheckResult check_gradients(const std::function<Tensor64()>& objective,
                                       std::vector<std::pair<std::string, Tensor64>> inputs,
                                       const GradCheckOptions& options = {}) {
    for (auto& [name, t] : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor64 out = objective();
    out.backward();

    GradCheckResult result;
    std::mt19937_64 rng(options.seed);
    for (auto& [name, t] : inputs) {
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        std::vector<std::size_t> coords(t.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        auto data = t.data();
        for (std::size_t i : coords) {
            const double saved = data[i];
            data[i] = saved + options.step;
            const double plus = objective().item();
            data[i] = saved - options.step;
            const double minus = objective().item();
            data[i] = saved;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double err = relative_error(analytic[i], numeric, options.denominator_floor);
            ++result.coords_checked;
            if (err > result.max_rel_error || result.worst.empty()) {
                result.max_rel_error = std::max(result.max_rel_error, err);
                if (err >= result.max_rel_error) {
                    result.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                                   " numeric=" + std::to_string(numeric);
                }
            }
        }
    }
    return result;
}

}  // namespace facesr
