#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facesr/morphable.hpp"
#include "facesr/optim.hpp"
#include "facesr/tensor.hpp"

namespace facesr {

// Deterministic parameter factory. Every tensor draws from its own stream,
// seeded by (seed, name), so adding or removing one parameter group leaves
// all other initial values untouched.
template <typename T>
class ParamFactory {
public:
    ParamFactory(ParameterSet<T>& set, std::uint64_t seed) : set_(set), seed_(seed) {}

    // Kaiming-uniform, bound sqrt(6 / fan_in).
    BasicTensor<T> uniform(const std::string& name, Shape shape, std::size_t fan_in, double gain = 1.0);
    BasicTensor<T> constant(const std::string& name, Shape shape, T value);

private:
    ParameterSet<T>& set_;
    std::uint64_t seed_;
};

template <typename T>
struct ConvLayer {
    BasicTensor<T> weight;  // [O, C, k, k]
    BasicTensor<T> bias;    // [O]
    int stride = 1;
    int pad = 1;

    static ConvLayer make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out, int k,
                          int stride = 1);
    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

// Stride-2 4x4 transposed convolution (exact 2x upsampling with pad 1).
template <typename T>
struct DeconvLayer {
    BasicTensor<T> weight;  // [C_in, C_out, 4, 4]
    BasicTensor<T> bias;

    static DeconvLayer make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out);
    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
struct LinearLayer {
    BasicTensor<T> weight;  // [Out, In]
    BasicTensor<T> bias;

    static LinearLayer make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out);
    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

// ---- coefficient regressor -------------------------------------------------

struct RegressorConfig {
    std::array<std::size_t, 4> widths{16, 32, 64, 128};
    std::size_t blocks_per_stage = 2;
    std::size_t output_dim = kCoefficientDim;
    // Scale of the final layer's initial weights relative to Kaiming.
    double head_gain = 0.01;
    // Initial output bias: a neutral, frontally lit face.
    double neutral_gamma0 = 3.0;

    void validate() const;
};

template <typename T>
struct ResidualBlock {
    ConvLayer<T> conv1, conv2;
    bool has_projection = false;
    ConvLayer<T> projection;

    BasicTensor<T> operator()(const BasicTensor<T>& x) const;
};

template <typename T>
class Regressor {
public:
    Regressor(const RegressorConfig& config, std::uint64_t seed);

    // [N, 3, s, s] with s in {16, 32} -> [N, 239]
    BasicTensor<T> forward(const BasicTensor<T>& lr_images) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const RegressorConfig& config() const { return config_; }

private:
    RegressorConfig config_;
    ParameterSet<T> params_;
    ConvLayer<T> stem_;
    std::vector<ResidualBlock<T>> blocks_;
    LinearLayer<T> head_;
};

// ---- spatial attention SR network ----------------------------------------

struct SamConfig {
    std::size_t channels = 64;
    std::size_t rcab_count = 8;
    std::size_t reduction = 16;
    int scale = 8;
    std::size_t sft_count = 2;  // 0, 1 (post-head) or 2 (post-head and pre-upscale)
    std::size_t prior_channels = 7;
    // Ablations: no_prior drops the conditioning network entirely; no_sam
    // feeds the prior as extra input channels and removes SFT and channel
    // attention.
    bool no_prior = false;
    bool no_sam = false;

    void validate() const;
    std::size_t upscale_stages() const;
    bool uses_theta() const { return !no_prior && !no_sam && sft_count > 0; }
};

template <typename T>
struct RcabParams {
    ConvLayer<T> conv1, conv2;
    bool attention = true;
    LinearLayer<T> down, up;
};

template <typename T>
struct ThetaParams {
    ConvLayer<T> trunk1, trunk2;
    std::vector<ConvLayer<T>> mu_heads, nu_heads;
};

template <typename T>
struct UpscaleParams {
    std::vector<DeconvLayer<T>> stages;
    ConvLayer<T> tail;
};

// mu * F + nu, elementwise.
template <typename T>
BasicTensor<T> sft_modulate(const BasicTensor<T>& features, const BasicTensor<T>& mu, const BasicTensor<T>& nu);

// (mu, nu) for SFT insertion point `index` from a [N, 7, s, s] prior.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> sft_condition(const BasicTensor<T>& prior, const ThetaParams<T>& theta,
                                                        std::size_t index);

// F + C(X) * X with X = conv2(relu(conv1(F))) and C the channel gate.
template <typename T>
BasicTensor<T> rcab_forward(const BasicTensor<T>& features, const RcabParams<T>& params);

// Transposed-conv stages with ReLU, then a 3-channel conv. No clamping.
template <typename T>
BasicTensor<T> upscale_forward(const BasicTensor<T>& features, const UpscaleParams<T>& params);

template <typename T>
class SamNetwork {
public:
    SamNetwork(const SamConfig& config, std::uint64_t seed);

    // lr: [N, 3, s, s]; prior: [N, 7, s, s] (ignored when no_prior).
    BasicTensor<T> forward(const BasicTensor<T>& lr, const BasicTensor<T>& prior) const;
    // Forward pass clamped to [0, 1], without a graph.
    BasicTensor<T> infer(const BasicTensor<T>& lr, const BasicTensor<T>& prior) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const SamConfig& config() const { return config_; }
    const ThetaParams<T>& theta() const { return theta_; }
    const std::vector<RcabParams<T>>& rcabs() const { return rcabs_; }

    // Closed-form scalar parameter count for a configuration.
    static std::size_t analytic_parameter_count(const SamConfig& config);

private:
    SamConfig config_;
    ParameterSet<T> params_;
    ConvLayer<T> head_;
    ThetaParams<T> theta_;
    std::vector<RcabParams<T>> rcabs_;
    UpscaleParams<T> upscale_;
};

inline constexpr const char* kThetaPrefix = "sam.theta.";

// Copies values between parameter sets of different precision by name.
template <typename To, typename From>
void copy_parameters(const ParameterSet<From>& from, ParameterSet<To>& to);

}  // namespace facesr
