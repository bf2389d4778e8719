#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "facesr/config.hpp"
#include "facesr/image.hpp"
#include "facesr/raster.hpp"
#include "facesr/tensor.hpp"

namespace facesr {

struct GaussianComponent {
    double weight = 1.0;
    std::array<double, 2> mean{};
    std::array<double, 3> cov{};  // xx, xy, yy
};

// Two-class Gaussian mixture over normalized rg chromaticity
// (r = R / (R+G+B), g = G / (R+G+B)).
struct SkinModel {
    std::vector<GaussianComponent> skin;
    std::vector<GaussianComponent> non_skin;
    double skin_prior = 0.5;

    void validate() const;
    double log_likelihood(const std::vector<GaussianComponent>& mixture, double r, double g) const;
    // P(skin | chromaticity), evaluated in log space.
    double posterior(double r, double g) const;
    double posterior_rgb(double red, double green, double blue) const;

    static SkinModel shipped();
    static SkinModel from_config(const KeyValueFile& kv);
    static SkinModel load(const std::filesystem::path& path);
};

// Black pixels have no chromaticity; they map to the neutral point (1/3, 1/3).
std::array<double, 2> chromaticity(double red, double green, double blue);

// Per-pixel skin probability, row-major H x W.
std::vector<float> skin_mask(const Image& image, const SkinModel& model);
// Batch version on [N, 3, H, W]; returns [N, 1, H, W] without a graph.
template <typename T>
BasicTensor<T> skin_mask(const BasicTensor<T>& images, const SkinModel& model);

class DegenerateMaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// (1/N) sum_j [ sum_{i in M_j} A_ij ||I_ij - R_ij||_2 / sum_{i in M_j} A_ij ].
// `sharp` and `rendered` are [N, 3, H, W]; `attention` is [N, 1, H, W];
// `face_masks` holds N row-major H x W masks. Differentiable w.r.t. `rendered`.
template <typename T>
BasicTensor<T> rendering_loss(const BasicTensor<T>& sharp, const BasicTensor<T>& rendered,
                              const BasicTensor<T>& attention, const std::vector<std::vector<std::uint8_t>>& face_masks);

// Spread of plausible coefficients: standard deviation for identity,
// expression and texture, half-range for pose (three angles, then xyz).
struct CoefficientSpread {
    double alpha = 5.0;
    double beta = 3.0;
    double delta = 1.5;
    std::array<double, kPoseDim> rho{0.25, 0.35, 0.10, 0.05, 0.05, 0.20};
};

// weight * (1/N) sum_j mean_i (c_ji / s_i)^2 over identity, expression,
// texture and pose entries of [N, 239] coefficients; illumination is free.
template <typename T>
BasicTensor<T> coefficient_prior(const BasicTensor<T>& coeffs, double weight,
                                 const CoefficientSpread& spread = {});

inline constexpr std::size_t kPriorChannels = 7;

// Four lr_size x lr_size maps (identity, expression, texture, illumination
// followed by pose), each min-max scaled and embedded row-major from the
// top-left. Returned as 4 consecutive planes.
template <typename T>
std::vector<float> coeff_to_maps(std::span<const T> coeffs, int lr_size);

struct PriorStack {
    Tensor channels;  // [7, lr_size, lr_size]
    int lr_size = 0;
};

PriorStack build_prior_stack(const RenderOutput<float>& render, std::span<const float> coeffs, int lr_size);

// [N, 7, s, s] batch from individual stacks.
Tensor stack_priors(std::span<const PriorStack> priors);

}  // namespace facesr
