#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "facesr/gradcheck.hpp"
#include "facesr/priors.hpp"
#include "test_util.hpp"

using namespace facesr;

namespace {

// Direct mixture density with an explicit 2x2 inverse.
double mixture_density(const std::vector<GaussianComponent>& mix, double r, double g) {
    double p = 0;
    for (const auto& c : mix) {
        const double a = c.cov[0], b = c.cov[1], d = c.cov[2];
        const double det = a * d - b * b;
        const double i00 = d / det, i01 = -b / det, i11 = a / det;
        const double x = r - c.mean[0], y = g - c.mean[1];
        const double q = i00 * x * x + 2 * i01 * x * y + i11 * y * y;
        p += c.weight * std::exp(-0.5 * q) / (2 * std::numbers::pi * std::sqrt(det));
    }
    return p;
}

Image constant_image(int size, float r, float g, float b) {
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }
    return img;
}

std::vector<std::vector<std::uint8_t>> full_masks(std::size_t n, std::size_t plane) {
    return std::vector<std::vector<std::uint8_t>>(n, std::vector<std::uint8_t>(plane, 1));
}

}  // namespace

TEST_CASE("shipped skin model matches the config file") {
    const SkinModel file = SkinModel::load(std::filesystem::path(FACESR_SOURCE_DIR) / "config" / "skin_gmm.txt");
    const SkinModel def = SkinModel::shipped();
    CHECK_NOTHROW(def.validate());
    REQUIRE(file.skin.size() == def.skin.size());
    REQUIRE(file.non_skin.size() == def.non_skin.size());
    for (double r = 0.2; r < 0.6; r += 0.05)
        for (double g = 0.2; g < 0.5; g += 0.05) CHECK(file.posterior(r, g) == def.posterior(r, g));
}

TEST_CASE("skin posterior against a direct Bayes-rule oracle") {
    const SkinModel m = SkinModel::shipped();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.25, 0.5);
    for (int i = 0; i < 50; ++i) {
        const double r = u(rng), g = u(rng);
        const double ps = 0.5 * mixture_density(m.skin, r, g);
        const double pn = 0.5 * mixture_density(m.non_skin, r, g);
        CHECK(m.posterior(r, g) == doctest::Approx(ps / (ps + pn)).epsilon(1e-10));
    }
    const auto& c0 = m.skin[0];
    const double ps = mixture_density(m.skin, c0.mean[0], c0.mean[1]);
    const double pn = mixture_density(m.non_skin, c0.mean[0], c0.mean[1]);
    REQUIRE(ps > 10 * pn);
    CHECK(m.posterior(c0.mean[0], c0.mean[1]) > 0.9);
}

TEST_CASE("skin posterior is one half for identical classes") {
    SkinModel m = SkinModel::shipped();
    m.non_skin = m.skin;
    for (double r : {0.1, 0.33, 0.46, 0.8}) CHECK(m.posterior(r, 0.3) == 0.5);
}

TEST_CASE("skin mask on green and skin-colored images") {
    const SkinModel m = SkinModel::shipped();
    for (float v : skin_mask(constant_image(8, 0.0f, 1.0f, 0.0f), m)) CHECK(v < 0.1f);
    for (float v : skin_mask(constant_image(8, 0.2f, 0.7f, 0.1f), m)) CHECK(v < 0.1f);
    for (float v : skin_mask(constant_image(8, 0.8f, 0.6f, 0.5f), m)) CHECK(v > 0.5f);
    for (float v : skin_mask(constant_image(8, 0.0f, 0.0f, 0.0f), m)) {
        CHECK(v > 0.0f);
        CHECK(v < 0.5f);
    }
    const auto c = chromaticity(0, 0, 0);
    CHECK(c[0] == doctest::Approx(1.0 / 3));
    CHECK(c[1] == doctest::Approx(1.0 / 3));
}

TEST_CASE("skin mask tensor form agrees with the image form") {
    const SkinModel m = SkinModel::shipped();
    const Tensor t = testing::random_tensor<float>({2, 3, 4, 5}, 8, 0.0, 1.0);
    const Tensor a = skin_mask(t, m);
    CHECK(a.shape() == Shape{2, 1, 4, 5});
    const auto ref = skin_mask(tensor_to_image(t, 1), m);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(a.data()[20 + i] == ref[i]);
}

TEST_CASE("skin model validation") {
    SkinModel m = SkinModel::shipped();
    m.skin[0].weight = 0.9;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    m = SkinModel::shipped();
    m.non_skin[1].cov = {0.01, 0.02, 0.01};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    CHECK_THROWS_AS(SkinModel::from_config(KeyValueFile::parse("skin.components = 1\n")), ConfigError);
}

TEST_CASE("rendering loss hand-evaluated cases") {
    const std::size_t h = 4, w = 5, plane = h * w;
    Tensor64 I = testing::random_tensor({1, 3, h, w}, 1, 0.0, 1.0);
    Tensor64 A = Tensor64::full({1, 1, h, w}, 1.0);
    const auto M = full_masks(1, plane);

    CHECK(rendering_loss(I, I.clone(), A, M).item() == 0.0);

    Tensor64 R = I.clone();
    R.data()[0 * plane + 7] += 0.3;
    R.data()[2 * plane + 7] += 0.4;
    CHECK(std::abs(rendering_loss(I, R, A, M).item() - 0.5 / plane) < 1e-7);

    BasicTensor<float> If = cast_tensor<float>(I), Rf = cast_tensor<float>(R), Af = cast_tensor<float>(A);
    CHECK(std::abs(rendering_loss(If, Rf, Af, M).item() - 0.5 / plane) < 1e-7);

    Tensor64 R2 = testing::random_tensor({1, 3, h, w}, 2, 0.0, 1.0);
    Tensor64 A1 = Tensor64::zeros({1, 1, h, w});
    A1.data()[11] = 0.37;
    double r0 = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double d = I.data()[c * plane + 11] - R2.data()[c * plane + 11];
        r0 += d * d;
    }
    CHECK(rendering_loss(I, R2, A1, M).item() == doctest::Approx(std::sqrt(r0)).epsilon(1e-14));
}

TEST_CASE("rendering loss is invariant to scaling the attention") {
    const std::size_t n = 3, h = 6, w = 6;
    const BasicTensor<float> I = testing::random_tensor<float>({n, 3, h, w}, 3, 0.0, 1.0);
    const BasicTensor<float> R = testing::random_tensor<float>({n, 3, h, w}, 4, 0.0, 1.0);
    const BasicTensor<float> A = testing::random_tensor<float>({n, 1, h, w}, 5, 0.05, 1.0);
    const auto M = full_masks(n, h * w);
    const float base = rendering_loss(I, R, A, M).item();
    for (float k : {0.5f, 4.0f, 1024.0f, 0.0078125f}) {
        BasicTensor<float> As = A.clone();
        for (auto& v : As.data()) v *= k;
        CHECK(rendering_loss(I, R, As, M).item() == base);
    }
}

TEST_CASE("rendering loss rejects a degenerate mask") {
    const Tensor64 I = testing::random_tensor({2, 3, 3, 3}, 1, 0.0, 1.0);
    const Tensor64 R = testing::random_tensor({2, 3, 3, 3}, 2, 0.0, 1.0);
    Tensor64 A = Tensor64::full({2, 1, 3, 3}, 1.0);
    auto M = full_masks(2, 9);
    std::fill(M[1].begin(), M[1].end(), 0);
    CHECK_THROWS_AS(rendering_loss(I, R, A, M), DegenerateMaskError);
    M = full_masks(2, 9);
    for (std::size_t i = 0; i < 9; ++i) A.data()[9 + i] = 0.0;
    CHECK_THROWS_AS(rendering_loss(I, R, A, M), DegenerateMaskError);
    CHECK_THROWS_AS(rendering_loss(I, testing::random_tensor({2, 3, 3, 4}, 2), A, M), DimensionError);
}

TEST_CASE("rendering loss ignores pixels outside the face mask") {
    const Tensor64 I = testing::random_tensor({1, 3, 3, 3}, 6, 0.0, 1.0);
    Tensor64 R = testing::random_tensor({1, 3, 3, 3}, 7, 0.0, 1.0);
    const Tensor64 A = testing::random_tensor({1, 1, 3, 3}, 8, 0.1, 1.0);
    auto M = full_masks(1, 9);
    M[0][4] = 0;
    const double before = rendering_loss(I, R, A, M).item();
    R.data()[4] += 0.5;
    CHECK(rendering_loss(I, R, A, M).item() == before);
}

TEST_CASE("rendering loss gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 2, h = 4, w = 4;
        const Tensor64 I = testing::random_tensor({n, 3, h, w}, 100 + seed, 0.0, 1.0);
        const Tensor64 R = testing::random_tensor({n, 3, h, w}, 200 + seed, 0.0, 1.0, true);
        const Tensor64 A = testing::random_tensor({n, 1, h, w}, 300 + seed, 0.1, 1.0);
        auto M = full_masks(n, h * w);
        M[seed % n][seed % (h * w)] = 0;
        const auto result = check_gradients([&] { return rendering_loss(I, R, A, M); }, {{"rendered", R}});
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("coefficient maps layout and scaling") {
    std::vector<float> c(kCoefficientDim);
    std::mt19937_64 rng(11);
    std::normal_distribution<float> nd(0, 1);
    for (auto& v : c) v = nd(rng);
    for (std::size_t i = 0; i < kExpressionDim; ++i) c[kBetaOffset + i] = 0.7f;
    const auto maps = coeff_to_maps<float>(c, 16);
    REQUIRE(maps.size() == 4 * 256);

    const auto first = c.begin();
    const float lo = *std::min_element(first, first + kIdentityDim);
    const float hi = *std::max_element(first, first + kIdentityDim);
    for (std::size_t i = 0; i < kIdentityDim; ++i) CHECK(maps[i] == doctest::Approx((c[i] - lo) / (hi - lo)));
    for (std::size_t i = kIdentityDim; i < 256; ++i) CHECK(maps[i] == 0.0f);
    CHECK(*std::min_element(maps.begin(), maps.begin() + kIdentityDim) == 0.0f);
    CHECK(*std::max_element(maps.begin(), maps.begin() + kIdentityDim) == 1.0f);

    for (std::size_t i = 0; i < kExpressionDim; ++i) CHECK(maps[256 + i] == 0.5f);
    for (std::size_t i = kExpressionDim; i < 256; ++i) CHECK(maps[256 + i] == 0.0f);

    // Illumination and pose: exactly the first 15 positions are populated.
    const float* ip = maps.data() + 3 * 256;
    CHECK(*std::min_element(ip, ip + 15) == 0.0f);
    CHECK(*std::max_element(ip, ip + 15) == 1.0f);
    for (std::size_t i = 15; i < 256; ++i) CHECK(ip[i] == 0.0f);

    for (std::size_t i = 0; i < kTextureDim; ++i)
        for (std::size_t j = 0; j < kTextureDim; ++j)
            if (c[kDeltaOffset + i] < c[kDeltaOffset + j]) CHECK(maps[512 + i] <= maps[512 + j]);

    CHECK(coeff_to_maps<float>(c, 32).size() == 4 * 1024);
    CHECK_THROWS_AS(coeff_to_maps<float>(c, 8), std::invalid_argument);
}

TEST_CASE("prior stack channels") {
    const FaceBasis basis = generate_basis();
    FaceCoefficients<float> coeffs;
    coeffs.gamma()[0] = 2.8f;
    for (std::size_t i = 0; i < kIdentityDim; ++i) coeffs.alpha()[i] = 0.01f * static_cast<float>(i % 7);
    const RenderOutput<float> lit = render(basis, coeffs, Camera{});

    for (int s : {16, 32}) {
        const PriorStack p = build_prior_stack(lit, coeffs.values, s);
        CHECK(p.channels.shape() == Shape{7, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
        for (float v : p.channels.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        const auto maps = coeff_to_maps<float>(coeffs.values, s);
        const std::size_t plane = static_cast<std::size_t>(s) * s;
        for (std::size_t i = 0; i < maps.size(); ++i) CHECK(p.channels.data()[3 * plane + i] == maps[i]);
    }

    FaceCoefficients<float> dark = coeffs;
    std::fill(dark.gamma().begin(), dark.gamma().end(), 0.0f);
    const PriorStack pd = build_prior_stack(render(basis, dark, Camera{}), dark.values, 16);
    const PriorStack pl = build_prior_stack(lit, coeffs.values, 16);
    for (std::size_t i = 0; i < 3 * 256; ++i) CHECK(pd.channels.data()[i] == 0.0f);
    for (std::size_t i = 3 * 256; i < 6 * 256; ++i) CHECK(pd.channels.data()[i] == pl.channels.data()[i]);

    RenderOutput<float> gray = lit;
    std::fill(gray.rgb.begin(), gray.rgb.end(), 0.4f);
    const PriorStack pg = build_prior_stack(gray, coeffs.values, 32);
    for (std::size_t i = 0; i < 3 * 1024; ++i) CHECK(pg.channels.data()[i] == 0.4f);

    const std::vector<PriorStack> list{pl, pd};
    CHECK(stack_priors(list).shape() == Shape{2, 7, 16, 16});
}
