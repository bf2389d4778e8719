#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include "facesr/tensor.hpp"

namespace facesr::testing {

template <typename T = double>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return BasicTensor<T>(std::move(shape), std::move(data), requires_grad);
}

// Values bounded away from zero, so ReLU-style kinks stay outside the
// finite-difference stencil.
inline Tensor64 random_away_from_zero(Shape shape, std::uint64_t seed, double margin = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor64(std::move(shape), std::move(data));
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("facesr_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace facesr::testing
