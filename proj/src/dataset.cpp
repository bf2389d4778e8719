#include "facesr/dataset.hpp"

#include <algorithm>
#include <random>

#include "facesr/config.hpp"
#include "facesr/priors.hpp"

namespace facesr {

void DatasetSpec::validate() const {
    if (scale != 4 && scale != 8) throw ConfigError("dataset scale must be 4 or 8");
    if (hr_size <= 0 || hr_size % scale != 0) throw ConfigError("hr_size must be divisible by scale");
    const int s = lr_size();
    if (s != 16 && s != 32) throw ConfigError("lr_size must be 16 or 32, got " + std::to_string(s));
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
}

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index, const char* stream) {
    std::uint64_t h = fnv1a64(stream);
    h = fnv1a64(&seed, sizeof seed, h);
    const std::uint64_t i = index;
    h = fnv1a64(&i, sizeof i, h);
    return std::mt19937_64(h);
}

}  // namespace

std::vector<float> sample_coefficients(std::uint64_t seed, std::size_t index) {
    auto rng = sample_rng(seed, index, "coefficients");
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const CoefficientSpread spread;
    FaceCoefficients<float> c;
    for (auto& v : c.alpha()) v = static_cast<float>(spread.alpha * n01(rng));
    for (auto& v : c.beta()) v = static_cast<float>(spread.beta * n01(rng));
    for (auto& v : c.delta()) v = static_cast<float>(spread.delta * n01(rng));
    auto g = c.gamma();
    g[0] = static_cast<float>(3.0 + 0.5 * u(rng));
    for (std::size_t b = 1; b < 4; ++b) g[b] = static_cast<float>(0.6 * u(rng));
    for (std::size_t b = 4; b < kIlluminationDim; ++b) g[b] = static_cast<float>(0.25 * u(rng));
    auto r = c.rho();
    for (std::size_t k = 0; k < kPoseDim; ++k) r[k] = static_cast<float>(spread.rho[k] * u(rng));
    return c.values;
}

SyntheticFaceDataset::SyntheticFaceDataset(const FaceBasis& basis, const Camera& camera,
                                           const SyntheticOptions& options)
    : basis_(basis), camera_(camera), options_(options) {
    basis_.validate();
    camera_.validate();
    if (options_.scale != 4 && options_.scale != 8) throw ConfigError("synthetic scale must be 4 or 8");
    if (camera_.width % options_.scale != 0 || camera_.height % options_.scale != 0) {
        throw ConfigError("camera size not divisible by scale");
    }
    if (!(options_.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
}

FaceSample SyntheticFaceDataset::sample(std::size_t index) const {
    FaceSample s;
    s.name = "synth_" + std::to_string(index);
    s.coefficients = sample_coefficients(options_.seed, index);
    const FaceCoefficients<float> coeffs(std::span<const float>(s.coefficients));
    const auto out = render(basis_, coeffs, camera_);

    auto rng = sample_rng(options_.seed, index, "noise");
    std::normal_distribution<double> noise(0.0, options_.noise_sigma > 0 ? options_.noise_sigma : 1.0);
    const int w = out.width, h = out.height;
    s.hr.width = w;
    s.hr.height = h;
    s.hr.data.assign(static_cast<std::size_t>(3) * w * h, 0.0f);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            for (int c = 0; c < 3; ++c) {
                double v = out.rgb[3 * p + c];
                if (out.mask[p] && options_.noise_sigma > 0) v += noise(rng);
                s.hr.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    s.lr = degrade(s.hr, options_.scale);
    return s;
}

std::vector<FaceSample> SyntheticFaceDataset::generate(std::size_t first, std::size_t count) const {
    std::vector<FaceSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample(first + i));
    return out;
}

Image center_crop_resize(const Image& image, int hr_size) {
    if (image.width <= 0 || image.height <= 0) throw DataError("empty image");
    const int side = std::min(image.width, image.height);
    const int x0 = (image.width - side) / 2, y0 = (image.height - side) / 2;
    Image crop;
    crop.width = side;
    crop.height = side;
    crop.channels = image.channels;
    crop.data.resize(static_cast<std::size_t>(image.channels) * side * side);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) crop.at(c, y, x) = image.at(c, y0 + y, x0 + x);
    if (side == hr_size) return crop;
    return clamp01(resize_bicubic(crop, hr_size, hr_size));
}

std::vector<FaceSample> load_image_directory(const DatasetSpec& spec) {
    spec.validate();
    std::error_code ec;
    if (!std::filesystem::is_directory(spec.source, ec)) throw DataError("not a directory: " + spec.source.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(spec.source)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .png files in " + spec.source.string());
    std::vector<FaceSample> out;
    for (const auto& f : files) {
        FaceSample s;
        s.name = f.stem().string();
        try {
            s.hr = center_crop_resize(load_png(f), spec.hr_size);
        } catch (const ImageIoError& e) {
            throw DataError(e.what());
        }
        s.lr = degrade(s.hr, spec.scale);
        out.push_back(std::move(s));
    }
    return out;
}

void split_samples(std::vector<FaceSample> all, const DatasetSpec& spec, std::vector<FaceSample>& train,
                   std::vector<FaceSample>& val) {
    spec.validate();
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(spec.seed ^ fnv1a64("split"));
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(spec.train_fraction * static_cast<double>(all.size()) + 0.5);
    n_train = std::clamp<std::size_t>(n_train, all.empty() ? 0 : 1, all.size());
    train.clear();
    val.clear();
    for (std::size_t k = 0; k < order.size(); ++k) {
        (k < n_train ? train : val).push_back(std::move(all[order[k]]));
    }
}

}  // namespace facesr
