#include "facesr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace facesr {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("image: extents must be positive");
}

bool Image::same_size(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image load_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw ImageIoError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
        throw ImageIoError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("libpng initialization failed");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIoError("corrupt PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    if (stride < static_cast<std::size_t>(w) * 3) throw ImageIoError("unexpected PNG layout in " + path.string());
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = pixels[y * stride + 3 * x + c] / 255.0f;
    return img;
}

void save_png(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 3) throw ImageIoError("save_png: expected 3 channels");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw ImageIoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("libpng initialization failed");
    }
    std::vector<unsigned char> pixels(static_cast<std::size_t>(image.width) * image.height * 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * image.width * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

double keys_cubic(double x, double a) {
    const double t = std::abs(x);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

std::vector<std::vector<ResampleTap>> resample_taps(int in, int out, double a) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("resample_taps: sizes must be positive");
    const double scale = static_cast<double>(out) / in;
    const double stretch = scale < 1.0 ? scale : 1.0;  // kernel compression factor
    const double support = 2.0 / stretch;
    std::vector<std::vector<ResampleTap>> taps(out);
    for (int i = 0; i < out; ++i) {
        const double center = (i + 0.5) / scale - 0.5;
        const int first = static_cast<int>(std::floor(center - support)) + 1;
        const int last = static_cast<int>(std::ceil(center + support)) - 1;
        double total = 0.0;
        std::vector<ResampleTap> row;
        for (int j = first; j <= last; ++j) {
            const double w = stretch * keys_cubic(stretch * (center - j), a);
            if (w == 0.0) continue;
            const int idx = std::clamp(j, 0, in - 1);
            auto it = std::find_if(row.begin(), row.end(), [idx](const ResampleTap& t) { return t.index == idx; });
            if (it == row.end()) {
                row.push_back({idx, w});
            } else {
                it->weight += w;
            }
            total += w;
        }
        for (auto& t : row) t.weight /= total;
        taps[i] = std::move(row);
    }
    return taps;
}

Image resize_bicubic(const Image& image, int out_width, int out_height) {
    const auto tx = resample_taps(image.width, out_width);
    const auto ty = resample_taps(image.height, out_height);
    Image out(out_width, out_height, image.channels);
    std::vector<double> tmp(static_cast<std::size_t>(image.height) * out_width);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < out_width; ++x) {
                double s = 0.0;
                for (const auto& t : tx[x]) s += t.weight * image.at(c, y, t.index);
                tmp[static_cast<std::size_t>(y) * out_width + x] = s;
            }
        for (int y = 0; y < out_height; ++y)
            for (int x = 0; x < out_width; ++x) {
                double s = 0.0;
                for (const auto& t : ty[y]) s += t.weight * tmp[static_cast<std::size_t>(t.index) * out_width + x];
                out.at(c, y, x) = static_cast<float>(s);
            }
    }
    return out;
}

Image degrade(const Image& hr, int scale) {
    if (scale != 4 && scale != 8) throw std::invalid_argument("degrade: scale must be 4 or 8, got " + std::to_string(scale));
    if (hr.width % scale != 0 || hr.height % scale != 0) {
        throw std::invalid_argument("degrade: " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                                    " is not divisible by " + std::to_string(scale));
    }
    return resize_bicubic(hr, hr.width / scale, hr.height / scale);
}

Image upsample_nearest(const Image& image, int factor) {
    Image out(image.width * factor, image.height * factor, image.channels);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(c, y, x) = image.at(c, y / factor, x / factor);
    return out;
}

Image clamp01(const Image& image) {
    Image out = image;
    for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

Tensor image_to_tensor(const Image& image) {
    return Tensor({1, static_cast<std::size_t>(image.channels), static_cast<std::size_t>(image.height),
                   static_cast<std::size_t>(image.width)},
                  image.data);
}

Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const Image& first = images.front();
    std::vector<float> data;
    data.reserve(images.size() * first.data.size());
    for (const auto& img : images) {
        if (!img.same_size(first)) throw DimensionError("images_to_tensor: batch images differ in size");
        data.insert(data.end(), img.data.begin(), img.data.end());
    }
    return Tensor({images.size(), static_cast<std::size_t>(first.channels), static_cast<std::size_t>(first.height),
                   static_cast<std::size_t>(first.width)},
                  std::move(data));
}

Image tensor_to_image(const Tensor& t, std::size_t index) {
    if (t.rank() != 4 || index >= t.dim(0)) throw DimensionError("tensor_to_image: bad shape " + shape_str(t.shape()));
    Image img(static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)));
    const std::size_t n = img.data.size();
    std::copy(t.data().begin() + index * n, t.data().begin() + (index + 1) * n, img.data.begin());
    return img;
}

}  // namespace facesr
