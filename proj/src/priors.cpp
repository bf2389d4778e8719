#include "facesr/priors.hpp"

#include "facesr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace facesr {

namespace {

double component_log_density(const GaussianComponent& c, double r, double g) {
    const double det = c.cov[0] * c.cov[2] - c.cov[1] * c.cov[1];
    const double dx = r - c.mean[0], dy = g - c.mean[1];
    const double maha = (c.cov[2] * dx * dx - 2.0 * c.cov[1] * dx * dy + c.cov[0] * dy * dy) / det;
    return std::log(c.weight) - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * maha;
}

void validate_mixture(const std::vector<GaussianComponent>& mix, const char* name) {
    if (mix.empty()) throw std::invalid_argument(std::string("skin model: ") + name + " mixture is empty");
    double total = 0;
    for (const auto& c : mix) {
        if (!(c.weight > 0)) throw std::invalid_argument(std::string("skin model: non-positive weight in ") + name);
        const double det = c.cov[0] * c.cov[2] - c.cov[1] * c.cov[1];
        if (!(c.cov[0] > 0) || !(det > 0)) {
            throw std::invalid_argument(std::string("skin model: covariance not positive definite in ") + name);
        }
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw std::invalid_argument(std::string("skin model: ") + name + " weights sum to " + std::to_string(total));
    }
}

std::vector<GaussianComponent> read_mixture(const KeyValueFile& kv, const std::string& prefix) {
    const long long n = kv.get_int(prefix + ".components");
    if (n <= 0) throw ConfigError(kv.origin() + ": " + prefix + ".components must be positive");
    std::vector<GaussianComponent> mix;
    for (long long i = 0; i < n; ++i) {
        const std::string key = prefix + "." + std::to_string(i);
        GaussianComponent c;
        c.weight = kv.get_double(key + ".weight");
        const auto mean = kv.get_doubles(key + ".mean");
        const auto cov = kv.get_doubles(key + ".cov");
        if (mean.size() != 2) throw ConfigError(kv.origin() + ": " + key + ".mean needs 2 values");
        if (cov.size() != 3) throw ConfigError(kv.origin() + ": " + key + ".cov needs 3 values (xx xy yy)");
        c.mean = {mean[0], mean[1]};
        c.cov = {cov[0], cov[1], cov[2]};
        mix.push_back(c);
    }
    return mix;
}

}  // namespace

void SkinModel::validate() const {
    validate_mixture(skin, "skin");
    validate_mixture(non_skin, "non_skin");
    if (!(skin_prior > 0 && skin_prior < 1)) throw std::invalid_argument("skin model: prior must lie in (0, 1)");
}

double SkinModel::log_likelihood(const std::vector<GaussianComponent>& mixture, double r, double g) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(mixture.size());
    for (const auto& c : mixture) {
        terms.push_back(component_log_density(c, r, g));
        best = std::max(best, terms.back());
    }
    double s = 0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
}

double SkinModel::posterior(double r, double g) const {
    const double ls = std::log(skin_prior) + log_likelihood(skin, r, g);
    const double ln = std::log1p(-skin_prior) + log_likelihood(non_skin, r, g);
    return 1.0 / (1.0 + std::exp(ln - ls));
}

double SkinModel::posterior_rgb(double red, double green, double blue) const {
    const auto c = chromaticity(red, green, blue);
    return posterior(c[0], c[1]);
}

SkinModel SkinModel::shipped() {
    SkinModel m;
    m.skin = {{0.6, {0.46, 0.31}, {0.0015, -0.0004, 0.0008}}, {0.4, {0.42, 0.32}, {0.0020, -0.0005, 0.0010}}};
    m.non_skin = {{0.5, {0.33, 0.33}, {0.0100, 0.0, 0.0100}}, {0.5, {0.28, 0.42}, {0.0200, -0.0050, 0.0300}}};
    m.skin_prior = 0.5;
    return m;
}

SkinModel SkinModel::from_config(const KeyValueFile& kv) {
    SkinModel m;
    m.skin_prior = kv.get_double_or("skin_prior", 0.5);
    m.skin = read_mixture(kv, "skin");
    m.non_skin = read_mixture(kv, "nonskin");
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(kv.origin() + ": " + e.what());
    }
    return m;
}

SkinModel SkinModel::load(const std::filesystem::path& path) { return from_config(KeyValueFile::load(path)); }

std::array<double, 2> chromaticity(double red, double green, double blue) {
    const double sum = red + green + blue;
    if (!(sum > 1e-6)) return {1.0 / 3.0, 1.0 / 3.0};
    return {red / sum, green / sum};
}

std::vector<float> skin_mask(const Image& image, const SkinModel& model) {
    if (image.channels != 3) throw DimensionError("skin_mask: expected an RGB image");
    std::vector<float> out(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            out[static_cast<std::size_t>(y) * image.width + x] = static_cast<float>(
                model.posterior_rgb(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)));
    return out;
}

template <typename T>
BasicTensor<T> skin_mask(const BasicTensor<T>& images, const SkinModel& model) {
    if (images.rank() != 4 || images.dim(1) != 3) {
        throw DimensionError("skin_mask: expected [N, 3, H, W], got " + shape_str(images.shape()));
    }
    const std::size_t n = images.dim(0), plane = images.dim(2) * images.dim(3);
    std::vector<T> out(n * plane);
    const auto d = images.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) {
            const T* base = d.data() + i * 3 * plane + p;
            out[i * plane + p] = static_cast<T>(model.posterior_rgb(base[0], base[plane], base[2 * plane]));
        }
    return BasicTensor<T>({n, 1, images.dim(2), images.dim(3)}, std::move(out));
}

template <typename T>
BasicTensor<T> rendering_loss(const BasicTensor<T>& sharp, const BasicTensor<T>& rendered,
                              const BasicTensor<T>& attention, const std::vector<std::vector<std::uint8_t>>& face_masks) {
    if (sharp.rank() != 4 || sharp.dim(1) != 3 || sharp.shape() != rendered.shape()) {
        throw DimensionError("rendering_loss: sharp " + shape_str(sharp.shape()) + " vs rendered " +
                             shape_str(rendered.shape()));
    }
    const std::size_t n = sharp.dim(0), plane = sharp.dim(2) * sharp.dim(3);
    if (attention.shape() != Shape{n, 1, sharp.dim(2), sharp.dim(3)}) {
        throw DimensionError("rendering_loss: attention shape " + shape_str(attention.shape()));
    }
    if (face_masks.size() != n) throw DimensionError("rendering_loss: expected one face mask per sample");
    for (const auto& m : face_masks)
        if (m.size() != plane) throw DimensionError("rendering_loss: face mask size mismatch");

    const auto I = sharp.data();
    const auto R = rendered.data();
    const auto A = attention.data();
    std::vector<double> norms(n * plane, 0.0);
    std::vector<double> denominators(n, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double num = 0.0, den = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            if (!face_masks[j][p]) continue;
            double sq = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t k = (j * 3 + c) * plane + p;
                const double r = static_cast<double>(I[k]) - static_cast<double>(R[k]);
                sq += r * r;
            }
            const double norm = std::sqrt(sq);
            norms[j * plane + p] = norm;
            num += static_cast<double>(A[j * plane + p]) * norm;
            den += static_cast<double>(A[j * plane + p]);
        }
        if (!(den > 0.0)) {
            throw DegenerateMaskError("rendering_loss: sample " + std::to_string(j) +
                                      " has zero attention mass inside its face mask");
        }
        if (!std::isfinite(num)) throw NumericError("rendering_loss: non-finite residual in sample " + std::to_string(j));
        denominators[j] = den;
        total += num / den;
    }
    const double loss = total / static_cast<double>(n);

    return BasicTensor<T>::make_result(
        {}, {static_cast<T>(loss)}, {rendered},
        [sharp, rendered, attention, face_masks, norms = std::move(norms), denominators = std::move(denominators), n,
         plane](TensorNode<T>& self) {
            const double seed = static_cast<double>(self.grad[0]);
            const auto I = sharp.data();
            const auto R = rendered.data();
            const auto A = attention.data();
            std::vector<T> grad(R.size(), T(0));
            for (std::size_t j = 0; j < n; ++j) {
                const double scale_j = seed / (denominators[j] * static_cast<double>(n));
                for (std::size_t p = 0; p < plane; ++p) {
                    const double norm = norms[j * plane + p];
                    if (!face_masks[j][p] || norm == 0.0) continue;
                    const double f = -static_cast<double>(A[j * plane + p]) * scale_j / norm;
                    for (std::size_t c = 0; c < 3; ++c) {
                        const std::size_t k = (j * 3 + c) * plane + p;
                        grad[k] = static_cast<T>(f * (static_cast<double>(I[k]) - static_cast<double>(R[k])));
                    }
                }
            }
            accumulate_grad(rendered, std::span<const T>(grad));
        });
}

template <typename T>
std::vector<float> coeff_to_maps(std::span<const T> coeffs, int lr_size) {
    if (coeffs.size() != kCoefficientDim) {
        throw std::invalid_argument("coeff_to_maps: expected " + std::to_string(kCoefficientDim) + " coefficients");
    }
    if (lr_size <= 0 || static_cast<std::size_t>(lr_size) * lr_size < kIdentityDim) {
        throw std::invalid_argument("coeff_to_maps: lr_size^2 must be at least " + std::to_string(kIdentityDim));
    }
    const std::size_t plane = static_cast<std::size_t>(lr_size) * lr_size;
    const std::array<std::pair<std::size_t, std::size_t>, 4> groups{{{kAlphaOffset, kIdentityDim},
                                                                     {kBetaOffset, kExpressionDim},
                                                                     {kDeltaOffset, kTextureDim},
                                                                     {kGammaOffset, kIlluminationDim + kPoseDim}}};
    std::vector<float> maps(4 * plane, 0.0f);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto [offset, len] = groups[k];
        const auto first = coeffs.begin() + offset;
        const auto [lo_it, hi_it] = std::minmax_element(first, first + len);
        const double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
        for (std::size_t i = 0; i < len; ++i) {
            const double v = static_cast<double>(coeffs[offset + i]);
            maps[k * plane + i] = hi > lo ? static_cast<float>((v - lo) / (hi - lo)) : 0.5f;
        }
    }
    return maps;
}

PriorStack build_prior_stack(const RenderOutput<float>& render, std::span<const float> coeffs, int lr_size) {
    if (lr_size != 16 && lr_size != 32) throw std::invalid_argument("build_prior_stack: lr_size must be 16 or 32");
    Image hr(render.width, render.height, 3);
    for (int y = 0; y < render.height; ++y)
        for (int x = 0; x < render.width; ++x)
            for (int c = 0; c < 3; ++c)
                hr.at(c, y, x) = render.rgb[3 * (static_cast<std::size_t>(y) * render.width + x) + c];
    const Image lr = clamp01(resize_bicubic(hr, lr_size, lr_size));
    const auto maps = coeff_to_maps<float>(coeffs, lr_size);
    std::vector<float> data(lr.data);
    data.insert(data.end(), maps.begin(), maps.end());
    const std::size_t s = static_cast<std::size_t>(lr_size);
    return {Tensor({kPriorChannels, s, s}, std::move(data)), lr_size};
}

Tensor stack_priors(std::span<const PriorStack> priors) {
    if (priors.empty()) throw std::invalid_argument("stack_priors: empty batch");
    const int s = priors.front().lr_size;
    std::vector<float> data;
    for (const auto& p : priors) {
        if (p.lr_size != s) throw DimensionError("stack_priors: mixed prior sizes");
        data.insert(data.end(), p.channels.data().begin(), p.channels.data().end());
    }
    const std::size_t ss = static_cast<std::size_t>(s);
    return Tensor({priors.size(), kPriorChannels, ss, ss}, std::move(data));
}

template <typename T>
BasicTensor<T> coefficient_prior(const BasicTensor<T>& coeffs, double weight, const CoefficientSpread& spread) {
    if (coeffs.rank() != 2 || coeffs.dim(1) != kCoefficientDim) {
        throw DimensionError("coefficient_prior: expected [N, 239], got " + shape_str(coeffs.shape()));
    }
    const std::size_t n = coeffs.dim(0);
    std::vector<double> inv(kCoefficientDim, 0.0);
    for (std::size_t i = 0; i < kIdentityDim; ++i) inv[kAlphaOffset + i] = 1.0 / (spread.alpha * spread.alpha);
    for (std::size_t i = 0; i < kExpressionDim; ++i) inv[kBetaOffset + i] = 1.0 / (spread.beta * spread.beta);
    for (std::size_t i = 0; i < kTextureDim; ++i) inv[kDeltaOffset + i] = 1.0 / (spread.delta * spread.delta);
    for (std::size_t i = 0; i < kPoseDim; ++i) inv[kRhoOffset + i] = 1.0 / (spread.rho[i] * spread.rho[i]);
    const double count = static_cast<double>(kCoefficientDim - kIlluminationDim) * static_cast<double>(n);
    std::vector<T> w(n * kCoefficientDim);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < kCoefficientDim; ++i) w[j * kCoefficientDim + i] = static_cast<T>(weight * inv[i] / count);
    return reshape(weighted_sum(mul(coeffs, coeffs), BasicTensor<T>(coeffs.shape(), std::move(w))), Shape{});
}

template BasicTensor<float> coefficient_prior(const BasicTensor<float>&, double, const CoefficientSpread&);
template BasicTensor<double> coefficient_prior(const BasicTensor<double>&, double, const CoefficientSpread&);
template BasicTensor<float> skin_mask(const BasicTensor<float>&, const SkinModel&);
template BasicTensor<double> skin_mask(const BasicTensor<double>&, const SkinModel&);
template BasicTensor<float> rendering_loss(const BasicTensor<float>&, const BasicTensor<float>&,
                                           const BasicTensor<float>&, const std::vector<std::vector<std::uint8_t>>&);
template BasicTensor<double> rendering_loss(const BasicTensor<double>&, const BasicTensor<double>&,
                                            const BasicTensor<double>&, const std::vector<std::vector<std::uint8_t>>&);
template std::vector<float> coeff_to_maps(std::span<const float>, int);
template std::vector<float> coeff_to_maps(std::span<const double>, int);

}  // namespace facesr
