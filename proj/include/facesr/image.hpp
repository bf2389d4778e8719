#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "facesr/tensor.hpp"

namespace facesr {

// Planar (CHW) float image, nominal range [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c = 3, float fill = 0.0f);

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    bool same_size(const Image& other) const;
};

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit RGB PNG. Gray, palette and alpha inputs are converted to RGB.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);

// Keys cubic convolution kernel.
double keys_cubic(double x, double a = -0.5);

struct ResampleTap {
    int index;
    double weight;
};

// Per-output-pixel taps for resizing `in` samples to `out` samples along one
// axis. Downscaling widens the kernel by in/out (antialiasing); indices are
// clamped to the edge and weights normalized to sum to one.
std::vector<std::vector<ResampleTap>> resample_taps(int in, int out, double a = -0.5);

// Separable bicubic resize, accumulated in double.
Image resize_bicubic(const Image& image, int out_width, int out_height);

// Bicubic downsampling of an HR image by an integer factor in {4, 8}.
Image degrade(const Image& hr, int scale);

Image upsample_nearest(const Image& image, int factor);

Image clamp01(const Image& image);

// [1, C, H, W] tensor view of an image, and back (sample `index` of a batch).
Tensor image_to_tensor(const Image& image);
Tensor images_to_tensor(const std::vector<Image>& images);
Image tensor_to_image(const Tensor& t, std::size_t index = 0);

}  // namespace facesr
