#include "facesr/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace facesr {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_size(b)) {
        throw DimensionError(std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                             std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                             std::to_string(b.height) + ")");
    }
}

std::vector<double> luma255(const Image& img) {
    std::vector<double> y(static_cast<std::size_t>(img.width) * img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            double v;
            if (img.channels == 3) {
                v = 0.299 * img.at(0, r, c) + 0.587 * img.at(1, r, c) + 0.114 * img.at(2, r, c);
            } else {
                v = img.at(0, r, c);
            }
            y[static_cast<std::size_t>(r) * img.width + c] = 255.0 * v;
        }
    return y;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same(a, b, "psnr");
    double sse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = 255.0 * (static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(a.data.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 20.0 * std::log10(255.0 / std::sqrt(mse)));
}

double ssim(const Image& a, const Image& b) {
    require_same(a, b, "ssim");
    constexpr int win = 11;
    constexpr double sigma = 1.5;
    if (a.width < win || a.height < win) throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    std::array<double, win> g{};
    double gs = 0;
    for (int i = 0; i < win; ++i) {
        const double x = i - win / 2;
        g[i] = std::exp(-x * x / (2 * sigma * sigma));
        gs += g[i];
    }
    for (auto& v : g) v /= gs;

    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    const auto x = luma255(a), y = luma255(b);
    const int w = a.width, h = a.height;
    const int ow = w - win + 1, oh = h - win + 1;

    // Separable weighted moments over valid windows.
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0;
                for (int k = 0; k < win; ++k) s += g[k] * src[static_cast<std::size_t>(r) * w + c + k];
                tmp[static_cast<std::size_t>(r) * ow + c] = s;
            }
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double s = 0;
                for (int k = 0; k < win; ++k) s += g[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
                out[static_cast<std::size_t>(r) * ow + c] = s;
            }
        return out;
    };
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        const double num = (2 * mx[i] * my[i] + c1) * (2 * cxy + c2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    return total / static_cast<double>(mx.size());
}

std::string MetricReport::to_text() const {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6);
    for (const auto& img : images) s << "image=" << img.name << " psnr=" << img.psnr << " ssim=" << img.ssim << "\n";
    s << "count=" << images.size() << "\n";
    s << "mean_psnr=" << mean_psnr << "\n";
    s << "mean_ssim=" << mean_ssim << "\n";
    if (scale) s << "scale=" << scale << "\n";
    if (!checkpoint_hash.empty()) s << "checkpoint_hash=" << checkpoint_hash << "\n";
    if (!ablation.empty()) s << "ablation=" << ablation << "\n";
    return s.str();
}

MetricReport evaluate_pairs(std::vector<std::pair<std::string, std::pair<Image, Image>>> pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    MetricReport report;
    for (const auto& [name, imgs] : pairs) {
        report.images.push_back({name, psnr(imgs.first, imgs.second), ssim(imgs.first, imgs.second)});
    }
    double sp = 0, ss = 0;
    for (const auto& s : report.images) {
        sp += s.psnr;
        ss += s.ssim;
    }
    if (!report.images.empty()) {
        report.mean_psnr = sp / report.images.size();
        report.mean_ssim = ss / report.images.size();
    }
    return report;
}

MetricReport evaluate_directories(const std::filesystem::path& predictions, const std::filesystem::path& truth) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(predictions)) throw ImageIoError("not a directory: " + predictions.string());
    if (!fs::is_directory(truth)) throw ImageIoError("not a directory: " + truth.string());
    std::vector<std::pair<std::string, std::pair<Image, Image>>> pairs;
    for (const auto& entry : fs::directory_iterator(predictions)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const auto name = entry.path().filename().string();
        const auto gt = truth / name;
        if (!fs::exists(gt)) throw ImageIoError("no ground truth for " + name + " in " + truth.string());
        pairs.push_back({name, {load_png(entry.path()), load_png(gt)}});
    }
    if (pairs.empty()) throw ImageIoError("no PNG files in " + predictions.string());
    return evaluate_pairs(std::move(pairs));
}

}  // namespace facesr
