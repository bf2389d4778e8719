#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "facesr/config.hpp"
#include "facesr/image.hpp"

using namespace facesr;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(w, h, 3);
    for (auto& v : img.data) v = u(rng);
    return img;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("facesr_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("keys kernel closed form at quarter phases") {
    // a = -0.5: 1.5|x|^3 - 2.5|x|^2 + 1 inside, -0.5|x|^3 + 2.5|x|^2 - 4|x| + 2 outside.
    CHECK(keys_cubic(0.0) == 1.0);
    CHECK(keys_cubic(0.25) == doctest::Approx(0.8671875).epsilon(1e-15));
    CHECK(keys_cubic(0.75) == doctest::Approx(0.2265625).epsilon(1e-15));
    CHECK(keys_cubic(-1.25) == doctest::Approx(-0.0703125).epsilon(1e-15));
    CHECK(keys_cubic(1.75) == doctest::Approx(-0.0234375).epsilon(1e-15));
    CHECK(keys_cubic(1.0) == doctest::Approx(0.0));
    CHECK(keys_cubic(2.0) == 0.0);
    CHECK(keys_cubic(3.1) == 0.0);
}

TEST_CASE("resample taps at phase 0.25 match the kernel") {
    // 2x upscale: output 3 sits at input coordinate 1.25.
    const auto taps = resample_taps(8, 16);
    const auto& t = taps[3];
    REQUIRE(t.size() == 4);
    const double expected[4] = {-0.0703125, 0.8671875, 0.2265625, -0.0234375};
    for (int k = 0; k < 4; ++k) {
        CHECK(t[k].index == k);
        CHECK(t[k].weight == doctest::Approx(expected[k]).epsilon(1e-14));
    }
}

TEST_CASE("downscale taps widen and sum to one") {
    for (int scale : {4, 8}) {
        const auto taps = resample_taps(128, 128 / scale);
        for (const auto& row : taps) {
            double s = 0;
            for (const auto& t : row) s += t.weight;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
        // Interior pixel: support 4*scale taps (minus the zero endpoints).
        CHECK(taps[taps.size() / 2].size() >= static_cast<std::size_t>(4 * scale - 2));
    }
}

TEST_CASE("degrade geometry and constant preservation") {
    Image hr(128, 128, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x) hr.at(c, y, x) = 0.2f + 0.3f * c;
    for (int scale : {4, 8}) {
        const Image lr = degrade(hr, scale);
        CHECK(lr.width == 128 / scale);
        CHECK(lr.height == 128 / scale);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < lr.height; ++y)
                for (int x = 0; x < lr.width; ++x) CHECK(lr.at(c, y, x) == hr.at(c, 0, 0));
        const Image back = upsample_nearest(lr, scale);
        CHECK(back.data == hr.data);
    }
}

TEST_CASE("degrade rejects bad scales and sizes") {
    CHECK_THROWS_AS(degrade(Image(128, 128), 2), std::invalid_argument);
    CHECK_THROWS_AS(degrade(Image(100, 128), 8), std::invalid_argument);
}

TEST_CASE("degrade is deterministic and averages a ramp") {
    Image hr(128, 128, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x) hr.at(c, y, x) = x / 127.0f;
    const Image a = degrade(hr, 8), b = degrade(hr, 8);
    CHECK(a.data == b.data);
    // Away from the clamped edges a symmetric kernel reproduces a linear
    // ramp at the block centre.
    for (int x = 2; x < 14; ++x) CHECK(a.at(0, 5, x) == doctest::Approx((8 * x + 3.5) / 127.0).epsilon(1e-5));
}

TEST_CASE("png round trip of 8-bit values") {
    const auto dir = scratch_dir("png");
    Image img(13, 7, 3);
    std::mt19937_64 rng(3);
    for (auto& v : img.data) v = static_cast<float>(rng() % 256) / 255.0f;
    save_png(img, dir / "a.png");
    const Image back = load_png(dir / "a.png");
    REQUIRE(back.same_size(img));
    CHECK(back.data == img.data);
    CHECK_THROWS_AS(load_png(dir / "missing.png"), ImageIoError);
    {
        std::FILE* f = std::fopen((dir / "bad.png").c_str(), "wb");
        std::fputs("not a png", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_png(dir / "bad.png"), ImageIoError);
}

TEST_CASE("image tensor conversion") {
    const Image img = random_image(5, 4, 9);
    const Tensor t = image_to_tensor(img);
    CHECK(t.shape() == Shape{1, 3, 4, 5});
    CHECK(tensor_to_image(t).data == img.data);
    const Tensor batch = images_to_tensor({img, random_image(5, 4, 10)});
    CHECK(batch.shape() == Shape{2, 3, 4, 5});
    CHECK(tensor_to_image(batch, 0).data == img.data);
    CHECK_THROWS_AS(images_to_tensor({img, random_image(4, 4, 1)}), DimensionError);
}

TEST_CASE("key value parsing") {
    const auto kv = KeyValueFile::parse("# header\nscale = 4\n  lr=0.001 # trailing\n\nname = a b\nv = 1 2 3\n");
    CHECK(kv.get_int("scale") == 4);
    CHECK(kv.get_double("lr") == 0.001);
    CHECK(kv.get("name") == "a b");
    CHECK(kv.get_doubles("v") == std::vector<double>{1, 2, 3});
    CHECK_THROWS_AS(kv.get("missing"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("novalue\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("x = abc\n").get_double("x"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::parse("x = 1.5\n").get_int("x"), ConfigError);
}

TEST_CASE("train config defaults, validation and hash") {
    const TrainConfig def;
    CHECK(def.lr == 2e-4);
    CHECK(def.lr_size() == 16);
    const auto c = TrainConfig::from_file(KeyValueFile::parse("scale = 4\nbatch = 64\nchannels = 32\n"));
    CHECK(c.scale == 4);
    CHECK(c.lr_size() == 32);
    CHECK(c.batch == 64);
    CHECK(c.hash() != def.hash());
    CHECK(c.hash() == TrainConfig::from_file(KeyValueFile::parse(c.serialize())).hash());
    CHECK_THROWS_AS(TrainConfig::from_file(KeyValueFile::parse("scale = 3\n")), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_file(KeyValueFile::parse("typo = 3\n")), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_file(KeyValueFile::parse("channels = 20\n")), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_file(KeyValueFile::parse("no_prior = 1\nno_sam = 1\n")), ConfigError);
}
