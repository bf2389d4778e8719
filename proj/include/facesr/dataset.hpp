#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "facesr/image.hpp"
#include "facesr/morphable.hpp"
#include "facesr/raster.hpp"

namespace facesr {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FaceSample {
    std::string name;
    std::vector<float> coefficients;  // ground truth, empty for loaded photos
    Image hr;                         // 3 x 128 x 128
    Image lr;                         // degrade(hr, scale)
};

struct DatasetSpec {
    std::filesystem::path source;  // empty selects the synthetic generator
    int hr_size = 128;
    int scale = 8;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;

    int lr_size() const { return hr_size / scale; }
    void validate() const;
};

// Random but plausible coefficients: small identity/expression/texture
// offsets, a lit frontal-ish illumination and a mild pose.
std::vector<float> sample_coefficients(std::uint64_t seed, std::size_t index);

struct SyntheticOptions {
    int scale = 8;
    double noise_sigma = 0.02;  // additive texture noise inside the face mask
    std::uint64_t seed = 1;
};

// Sample i depends only on (seed, i), so any prefix of a larger set equals
// the smaller set.
class SyntheticFaceDataset {
public:
    SyntheticFaceDataset(const FaceBasis& basis, const Camera& camera, const SyntheticOptions& options);

    FaceSample sample(std::size_t index) const;
    std::vector<FaceSample> generate(std::size_t first, std::size_t count) const;

private:
    const FaceBasis& basis_;
    Camera camera_;
    SyntheticOptions options_;
};

// Largest centered square, bicubically resized to hr_size.
Image center_crop_resize(const Image& image, int hr_size);

// Every *.png under `spec.source` (sorted by name), cropped and degraded.
std::vector<FaceSample> load_image_directory(const DatasetSpec& spec);

// Deterministic shuffled split by spec.seed and spec.train_fraction.
void split_samples(std::vector<FaceSample> all, const DatasetSpec& spec, std::vector<FaceSample>& train,
                   std::vector<FaceSample>& val);

}  // namespace facesr
