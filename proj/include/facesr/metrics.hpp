#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "facesr/image.hpp"

namespace facesr {

inline constexpr double kPsnrCap = 99.0;

// RGB PSNR at 8-bit peak (255); identical images return kPsnrCap.
double psnr(const Image& a, const Image& b);

// SSIM on BT.601 luma, 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
// L 255, averaged over all fully contained windows.
double ssim(const Image& a, const Image& b);

struct ImageScore {
    std::string name;
    double psnr = 0;
    double ssim = 0;
};

struct MetricReport {
    std::vector<ImageScore> images;  // sorted by name
    double mean_psnr = 0;
    double mean_ssim = 0;
    int scale = 0;
    std::string checkpoint_hash;
    std::string ablation;

    std::string to_text() const;
};

// Scores pairs of (name, prediction, ground truth); output is sorted by name
// so the result does not depend on input order.
MetricReport evaluate_pairs(std::vector<std::pair<std::string, std::pair<Image, Image>>> pairs);

// Matches PNG files by name in two directories.
MetricReport evaluate_directories(const std::filesystem::path& predictions, const std::filesystem::path& truth);

}  // namespace facesr
