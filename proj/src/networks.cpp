#include "facesr/networks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "facesr/config.hpp"
#include "facesr/ops.hpp"

namespace facesr {

template <typename T>
BasicTensor<T> ParamFactory<T>::uniform(const std::string& name, Shape shape, std::size_t fan_in, double gain) {
    std::mt19937_64 rng(seed_ ^ fnv1a64(name));
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return set_.add(name, BasicTensor<T>(std::move(shape), std::move(data)));
}

template <typename T>
BasicTensor<T> ParamFactory<T>::constant(const std::string& name, Shape shape, T value) {
    return set_.add(name, BasicTensor<T>::full(std::move(shape), value));
}

template <typename T>
ConvLayer<T> ConvLayer<T>::make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out, int k,
                                int stride) {
    const std::size_t ks = static_cast<std::size_t>(k);
    ConvLayer layer;
    layer.weight = f.uniform(name + ".w", {out, in, ks, ks}, in * ks * ks);
    layer.bias = f.constant(name + ".b", {out}, T(0));
    layer.stride = stride;
    layer.pad = k / 2;
    return layer;
}

template <typename T>
BasicTensor<T> ConvLayer<T>::operator()(const BasicTensor<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
}

template <typename T>
DeconvLayer<T> DeconvLayer<T>::make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out) {
    DeconvLayer layer;
    // Each output pixel of a 4x4 stride-2 deconv sees 2x2 taps per input channel.
    layer.weight = f.uniform(name + ".w", {in, out, 4, 4}, in * 4);
    layer.bias = f.constant(name + ".b", {out}, T(0));
    return layer;
}

template <typename T>
BasicTensor<T> DeconvLayer<T>::operator()(const BasicTensor<T>& x) const {
    return transposed_conv2d(x, weight, bias, 2, 1);
}

template <typename T>
LinearLayer<T> LinearLayer<T>::make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out) {
    LinearLayer layer;
    layer.weight = f.uniform(name + ".w", {out, in}, in);
    layer.bias = f.constant(name + ".b", {out}, T(0));
    return layer;
}

template <typename T>
BasicTensor<T> LinearLayer<T>::operator()(const BasicTensor<T>& x) const {
    return linear(x, weight, bias);
}

// ---- regressor -----------------------------------------------------------

void RegressorConfig::validate() const {
    for (auto w : widths)
        if (w == 0) throw std::invalid_argument("regressor: stage widths must be positive");
    if (blocks_per_stage == 0) throw std::invalid_argument("regressor: need at least one block per stage");
    if (output_dim != kCoefficientDim) {
        throw std::invalid_argument("regressor: output dimension must be " + std::to_string(kCoefficientDim));
    }
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::operator()(const BasicTensor<T>& x) const {
    const auto y = conv2(relu(conv1(x)));
    return relu(add(y, has_projection ? projection(x) : x));
}

template <typename T>
Regressor<T>::Regressor(const RegressorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    ParamFactory<T> f(params_, seed);
    stem_ = ConvLayer<T>::make(f, "reg.stem", 3, config_.widths[0], 3);
    std::size_t in = config_.widths[0];
    for (std::size_t s = 0; s < config_.widths.size(); ++s) {
        const std::size_t out = config_.widths[s];
        for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
            const std::string name = "reg.s" + std::to_string(s) + ".b" + std::to_string(b);
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            ResidualBlock<T> block;
            block.conv1 = ConvLayer<T>::make(f, name + ".conv1", in, out, 3, stride);
            block.conv2 = ConvLayer<T>::make(f, name + ".conv2", out, out, 3);
            if (stride != 1 || in != out) {
                block.has_projection = true;
                block.projection = ConvLayer<T>::make(f, name + ".proj", in, out, 1, stride);
            }
            blocks_.push_back(std::move(block));
            in = out;
        }
    }
    head_.weight = f.uniform("reg.fc.w", {config_.output_dim, in}, in, config_.head_gain);
    BasicTensor<T> bias = BasicTensor<T>::zeros({config_.output_dim});
    bias.data()[kGammaOffset] = static_cast<T>(config_.neutral_gamma0);
    head_.bias = params_.add("reg.fc.b", bias);
}

template <typename T>
BasicTensor<T> Regressor<T>::forward(const BasicTensor<T>& lr_images) const {
    if (lr_images.rank() != 4 || lr_images.dim(1) != 3 || lr_images.dim(2) != lr_images.dim(3) ||
        (lr_images.dim(2) != 16 && lr_images.dim(2) != 32)) {
        throw DimensionError("regressor: expected [N, 3, s, s] with s in {16, 32}, got " +
                             shape_str(lr_images.shape()));
    }
    auto x = relu(stem_(lr_images));
    for (const auto& block : blocks_) x = block(x);
    return head_(global_avg_pool(x));
}

// ---- SAM -------------------------------------------------------------------

void SamConfig::validate() const {
    if (channels == 0) throw std::invalid_argument("sam: channels must be positive");
    if (reduction == 0 || channels % reduction != 0) {
        throw std::invalid_argument("sam: reduction " + std::to_string(reduction) + " must divide channels " +
                                    std::to_string(channels));
    }
    if (scale != 4 && scale != 8) throw std::invalid_argument("sam: unsupported scale " + std::to_string(scale));
    if (sft_count > 2) throw std::invalid_argument("sam: at most 2 SFT insertion points");
    if (no_prior && no_sam) throw std::invalid_argument("sam: no_prior and no_sam are exclusive");
}

std::size_t SamConfig::upscale_stages() const {
    std::size_t stages = 0;
    for (int s = scale; s > 1; s >>= 1) ++stages;
    return stages;
}

template <typename T>
BasicTensor<T> sft_modulate(const BasicTensor<T>& features, const BasicTensor<T>& mu, const BasicTensor<T>& nu) {
    if (mu.shape() != features.shape() || nu.shape() != features.shape()) {
        throw DimensionError("sft_modulate: features " + shape_str(features.shape()) + ", mu " +
                             shape_str(mu.shape()) + ", nu " + shape_str(nu.shape()));
    }
    return add(mul(mu, features), nu);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> sft_condition(const BasicTensor<T>& prior, const ThetaParams<T>& theta,
                                                        std::size_t index) {
    if (index >= theta.mu_heads.size()) throw std::out_of_range("sft_condition: no SFT head " + std::to_string(index));
    const auto trunk = relu(theta.trunk2(relu(theta.trunk1(prior))));
    return {theta.mu_heads[index](trunk), theta.nu_heads[index](trunk)};
}

template <typename T>
BasicTensor<T> rcab_forward(const BasicTensor<T>& features, const RcabParams<T>& p) {
    if (features.rank() != 4 || features.dim(1) != p.conv1.weight.dim(1)) {
        throw DimensionError("rcab: expected " + std::to_string(p.conv1.weight.dim(1)) + " channels, got " +
                             shape_str(features.shape()));
    }
    const auto x = p.conv2(relu(p.conv1(features)));
    if (!p.attention) return add(features, x);
    const std::size_t n = x.dim(0), c = x.dim(1);
    const auto gate = sigmoid(p.up(relu(p.down(global_avg_pool(x)))));
    return add(features, mul(x, reshape(gate, {n, c, 1, 1})));
}

template <typename T>
BasicTensor<T> upscale_forward(const BasicTensor<T>& features, const UpscaleParams<T>& params) {
    auto x = features;
    for (const auto& stage : params.stages) x = relu(stage(x));
    return params.tail(x);
}

template <typename T>
SamNetwork<T>::SamNetwork(const SamConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    ParamFactory<T> f(params_, seed);
    const std::size_t c = config_.channels;
    const std::size_t in = config_.no_sam ? 3 + config_.prior_channels : 3;
    head_ = ConvLayer<T>::make(f, "sam.head", in, c, 3);
    if (config_.uses_theta()) {
        const std::string t = kThetaPrefix;
        theta_.trunk1 = ConvLayer<T>::make(f, t + "trunk1", config_.prior_channels, c, 3);
        theta_.trunk2 = ConvLayer<T>::make(f, t + "trunk2", c, c, 3);
        for (std::size_t k = 0; k < config_.sft_count; ++k) {
            ConvLayer<T> mu, nu;
            const std::string idx = std::to_string(k);
            mu.weight = f.constant(t + "mu" + idx + ".w", {c, c, 3, 3}, T(0));
            mu.bias = f.constant(t + "mu" + idx + ".b", {c}, T(1));
            nu.weight = f.constant(t + "nu" + idx + ".w", {c, c, 3, 3}, T(0));
            nu.bias = f.constant(t + "nu" + idx + ".b", {c}, T(0));
            theta_.mu_heads.push_back(std::move(mu));
            theta_.nu_heads.push_back(std::move(nu));
        }
    }
    for (std::size_t b = 0; b < config_.rcab_count; ++b) {
        const std::string name = "sam.rcab" + std::to_string(b);
        RcabParams<T> p;
        p.conv1 = ConvLayer<T>::make(f, name + ".conv1", c, c, 3);
        p.conv2 = ConvLayer<T>::make(f, name + ".conv2", c, c, 3);
        p.attention = !config_.no_sam;
        if (p.attention) {
            p.down = LinearLayer<T>::make(f, name + ".down", c, c / config_.reduction);
            p.up = LinearLayer<T>::make(f, name + ".up", c / config_.reduction, c);
        }
        rcabs_.push_back(std::move(p));
    }
    for (std::size_t s = 0; s < config_.upscale_stages(); ++s) {
        upscale_.stages.push_back(DeconvLayer<T>::make(f, "sam.up" + std::to_string(s), c, c));
    }
    upscale_.tail = ConvLayer<T>::make(f, "sam.tail", c, 3, 3);
}

template <typename T>
BasicTensor<T> SamNetwork<T>::forward(const BasicTensor<T>& lr, const BasicTensor<T>& prior) const {
    if (lr.rank() != 4 || lr.dim(1) != 3) throw DimensionError("sam: expected [N, 3, s, s], got " + shape_str(lr.shape()));
    const bool needs_prior = config_.uses_theta() || config_.no_sam;
    if (needs_prior) {
        if (!prior.defined() || prior.rank() != 4 || prior.dim(0) != lr.dim(0) ||
            prior.dim(1) != config_.prior_channels || prior.dim(2) != lr.dim(2) || prior.dim(3) != lr.dim(3)) {
            throw DimensionError("sam: prior " + (prior.defined() ? shape_str(prior.shape()) : std::string("<none>")) +
                                 " does not match input " + shape_str(lr.shape()));
        }
    }
    auto x = head_(config_.no_sam ? concat_channels(lr, prior) : lr);
    if (config_.uses_theta()) {
        auto [mu, nu] = sft_condition(prior, theta_, 0);
        x = sft_modulate(x, mu, nu);
    }
    for (const auto& block : rcabs_) x = rcab_forward(x, block);
    if (config_.uses_theta() && config_.sft_count > 1) {
        auto [mu, nu] = sft_condition(prior, theta_, 1);
        x = sft_modulate(x, mu, nu);
    }
    return upscale_forward(x, upscale_);
}

template <typename T>
BasicTensor<T> SamNetwork<T>::infer(const BasicTensor<T>& lr, const BasicTensor<T>& prior) const {
    return clamp01(forward(lr, prior));
}

template <typename T>
std::size_t SamNetwork<T>::analytic_parameter_count(const SamConfig& cfg) {
    const std::size_t c = cfg.channels, p = cfg.prior_channels;
    const auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; };
    std::size_t total = conv(cfg.no_sam ? 3 + p : 3, c, 3);
    if (cfg.uses_theta()) total += conv(p, c, 3) + conv(c, c, 3) + cfg.sft_count * 2 * conv(c, c, 3);
    const std::size_t r = c / cfg.reduction;
    const std::size_t per_block = 2 * conv(c, c, 3) + (cfg.no_sam ? 0 : (r * c + r) + (c * r + c));
    total += cfg.rcab_count * per_block;
    total += cfg.upscale_stages() * (c * c * 16 + c);
    total += conv(c, 3, 3);
    return total;
}

template <typename To, typename From>
void copy_parameters(const ParameterSet<From>& from, ParameterSet<To>& to) {
    for (auto& entry : to.entries()) {
        const BasicTensor<From>* src = from.find(entry.name);
        if (!src) throw std::invalid_argument("copy_parameters: missing tensor " + entry.name);
        if (src->shape() != entry.tensor.shape()) {
            throw DimensionError("copy_parameters: shape mismatch for " + entry.name);
        }
        auto dst = entry.tensor.data();
        const auto s = src->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<To>(s[i]);
    }
}

#define FACESR_INSTANTIATE(T)                                                                                     \
    template class ParamFactory<T>;                                                                               \
    template struct ConvLayer<T>;                                                                                 \
    template struct DeconvLayer<T>;                                                                               \
    template struct LinearLayer<T>;                                                                               \
    template struct ResidualBlock<T>;                                                                             \
    template class Regressor<T>;                                                                                  \
    template class SamNetwork<T>;                                                                                 \
    template BasicTensor<T> sft_modulate(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
    template std::pair<BasicTensor<T>, BasicTensor<T>> sft_condition(const BasicTensor<T>&, const ThetaParams<T>&, \
                                                                     std::size_t);                                \
    template BasicTensor<T> rcab_forward(const BasicTensor<T>&, const RcabParams<T>&);                            \
    template BasicTensor<T> upscale_forward(const BasicTensor<T>&, const UpscaleParams<T>&);

FACESR_INSTANTIATE(float)
FACESR_INSTANTIATE(double)

template void copy_parameters(const ParameterSet<float>&, ParameterSet<double>&);
template void copy_parameters(const ParameterSet<double>&, ParameterSet<float>&);
template void copy_parameters(const ParameterSet<float>&, ParameterSet<float>&);

}  // namespace facesr
