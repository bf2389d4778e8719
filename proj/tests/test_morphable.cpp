#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "facesr/gradcheck.hpp"
#include "facesr/morphable.hpp"

using namespace facesr;

namespace {

const FaceBasis& shared_basis() {
    static const FaceBasis basis = generate_basis();
    return basis;
}

// A 5-vertex basis with hand-set random entries, small enough for a dense oracle.
FaceBasis toy_basis(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    FaceBasis b;
    b.vertex_count = 5;
    auto fill = [&](std::vector<float>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = u(rng);
    };
    fill(b.mean_shape, 15);
    fill(b.mean_texture, 15);
    for (auto& x : b.mean_texture) x = 0.5f + 0.2f * x;
    fill(b.identity_basis, 15 * kIdentityDim);
    fill(b.expression_basis, 15 * kExpressionDim);
    fill(b.texture_basis, 15 * kTextureDim);
    for (auto& x : b.texture_basis) x *= 0.01f;
    b.triangles = {{0, 1, 2}, {0, 2, 3}, {0, 3, 4}};
    return b;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Coefficients in a regime where irradiance is positive and colors stay
// below saturation, so shading is smooth in every coefficient.
FaceCoefficients<double> smooth_regime_coeffs(std::uint64_t seed) {
    FaceCoefficients<double> c;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : c.alpha()) x = 1.5 * d(rng);
    for (auto& x : c.beta()) x = 1.5 * d(rng);
    for (auto& x : c.delta()) x = 1.0 * d(rng);
    c.gamma()[0] = 2.4;
    for (std::size_t b = 1; b < 9; ++b) c.gamma()[b] = 0.08 * d(rng);
    for (std::size_t k = 0; k < 3; ++k) c.rho()[k] = 0.15 * d(rng);
    for (std::size_t k = 3; k < 6; ++k) c.rho()[k] = 0.05 * d(rng);
    return c;
}

}  // namespace

TEST_CASE("generated basis honours the coefficient contract") {
    const auto& b = shared_basis();
    CHECK(b.vertex_count == 482);
    CHECK(b.identity_basis.size() == 3 * 482 * 80);
    CHECK(b.expression_basis.size() == 3 * 482 * 64);
    CHECK(b.texture_basis.size() == 3 * 482 * 80);
    CHECK_NOTHROW(b.validate());
    for (float t : b.mean_texture) {
        CHECK(t >= 0.0f);
        CHECK(t <= 1.0f);
    }
    FaceBasis broken = b;
    broken.triangles.push_back({0, 1, 482});
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("generated mesh faces point outward") {
    const auto& b = shared_basis();
    std::vector<double> shape(b.mean_shape.begin(), b.mean_shape.end());
    // Interior reference point on the axis, inside the half-ellipsoid.
    const double cz = 0.1;
    for (const auto& tri : b.triangles) {
        double p[3][3];
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) p[k][j] = shape[3 * tri[k] + j];
        const double e1[3] = {p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]};
        const double e2[3] = {p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]};
        const double n[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
        const double c[3] = {(p[0][0] + p[1][0] + p[2][0]) / 3, (p[0][1] + p[1][1] + p[2][1]) / 3,
                             (p[0][2] + p[1][2] + p[2][2]) / 3 - cz};
        CHECK(n[0] * c[0] + n[1] * c[1] + n[2] * c[2] > 0);
    }
}

TEST_CASE("generated bases have the requested column norms and are orthogonal") {
    const auto& b = shared_basis();
    const std::size_t rows = 3 * b.vertex_count;
    auto col_dot = [&](const std::vector<float>& m, std::size_t cols, std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t r = 0; r < rows; ++r) s += double(m[r * cols + i]) * m[r * cols + j];
        return s;
    };
    const double n0 = col_dot(b.identity_basis, 80, 0, 0);
    for (std::size_t k = 1; k < 80; ++k) CHECK(col_dot(b.identity_basis, 80, k, k) == doctest::Approx(n0).epsilon(1e-4));
    CHECK(std::abs(col_dot(b.identity_basis, 80, 3, 17)) < 1e-6 * n0);
    CHECK(std::abs(col_dot(b.expression_basis, 64, 0, 63)) < 1e-6 * col_dot(b.expression_basis, 64, 0, 0));
    CHECK(col_dot(b.texture_basis, 80, 5, 5) == doctest::Approx(0.01 * 0.01 * rows).epsilon(1e-4));
}

TEST_CASE("assemble_shape: zero coefficients give the mean, unit alpha selects a column") {
    const auto& b = shared_basis();
    std::vector<double> alpha(80, 0.0), beta(64, 0.0);
    auto s = assemble_shape<double>(b, alpha, beta);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == double(b.mean_shape[i]));
    alpha[0] = 1.0;
    s = assemble_shape<double>(b, alpha, beta);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == double(b.mean_shape[i]) + double(b.identity_basis[i * 80]));
    CHECK_THROWS_AS(assemble_shape<double>(b, std::vector<double>(79), beta), std::invalid_argument);
}

TEST_CASE("assemble_shape / texture match a dense matrix-vector oracle on a toy basis") {
    const auto b = toy_basis(3);
    const auto alpha = random_vec(80, 1), beta = random_vec(64, 2), delta = random_vec(80, 4);
    const auto s = assemble_shape<double>(b, alpha, beta);
    const auto t = assemble_texture_raw<double>(b, delta);
    for (std::size_t r = 0; r < 15; ++r) {
        long double ref = b.mean_shape[r];
        for (std::size_t k = 80; k-- > 0;) ref += static_cast<long double>(b.identity_basis[r * 80 + k]) * alpha[k];
        for (std::size_t k = 64; k-- > 0;) ref += static_cast<long double>(b.expression_basis[r * 64 + k]) * beta[k];
        CHECK(s[r] == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
        long double tref = b.mean_texture[r];
        for (std::size_t k = 80; k-- > 0;) tref += static_cast<long double>(b.texture_basis[r * 80 + k]) * delta[k];
        CHECK(t[r] == doctest::Approx(static_cast<double>(tref)).epsilon(1e-12));
    }
}

TEST_CASE("assemble_texture: zero delta gives the mean, saturation clamps to 1") {
    const auto& b = shared_basis();
    std::vector<double> delta(80, 0.0);
    auto t = assemble_texture<double>(b, delta);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == double(b.mean_texture[i]));
    auto toy = toy_basis(9);
    toy.texture_basis.assign(15 * 80, 0.0f);
    toy.texture_basis[0 * 80 + 0] = 1.0f;  // red channel of vertex 0
    delta[0] = 5.0;
    t = assemble_texture<double>(toy, delta);
    CHECK(t[0] == 1.0);
    CHECK(t[1] == double(toy.mean_texture[1]));
}

TEST_CASE("shape and texture assembly are affine (superposition)") {
    const auto& b = shared_basis();
    const auto x1 = random_vec(80, 10), y1 = random_vec(64, 11), x2 = random_vec(80, 12), y2 = random_vec(64, 13);
    const double a = 0.7, c = -1.3;
    std::vector<double> xm(80), ym(64);
    for (int k = 0; k < 80; ++k) xm[k] = a * x1[k] + c * x2[k];
    for (int k = 0; k < 64; ++k) ym[k] = a * y1[k] + c * y2[k];
    const auto s1 = assemble_shape<double>(b, x1, y1), s2 = assemble_shape<double>(b, x2, y2);
    const auto sm = assemble_shape<double>(b, xm, ym);
    for (std::size_t i = 0; i < sm.size(); ++i) {
        const double expect = a * s1[i] + c * s2[i] - (a + c - 1) * double(b.mean_shape[i]);
        CHECK(std::abs(sm[i] - expect) < 1e-12);
    }
    const auto d1 = random_vec(80, 14, 0.1), d2 = random_vec(80, 15, 0.1);
    std::vector<double> dm(80);
    for (int k = 0; k < 80; ++k) dm[k] = a * d1[k] + c * d2[k];
    const auto t1 = assemble_texture_raw<double>(b, d1), t2 = assemble_texture_raw<double>(b, d2);
    const auto tm = assemble_texture_raw<double>(b, dm);
    for (std::size_t i = 0; i < tm.size(); ++i) {
        CHECK(std::abs(tm[i] - (a * t1[i] + c * t2[i] - (a + c - 1) * double(b.mean_texture[i]))) < 1e-12);
    }
}

TEST_CASE("pose_transform: identity, analytic yaw, orthogonality and rigidity") {
    std::vector<double> v{1, 0, 0, 0.3, -0.2, 0.5, -1, 2, 0.25};
    std::vector<double> rho(6, 0.0);
    auto out = pose_transform<double>(v, rho);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(out[i] == v[i]);

    rho[2] = std::numbers::pi / 2;
    out = pose_transform<double>(v, rho);
    CHECK(std::abs(out[0] - 0.0) < 1e-6);
    CHECK(std::abs(out[1] - 1.0) < 1e-6);
    CHECK(std::abs(out[2] - 0.0) < 1e-6);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = random_vec(6, 100 + seed, 1.5);
        const auto rot = euler_rotation<double>(r);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += rot[k * 3 + i] * rot[k * 3 + j];
                CHECK(std::abs(s - (i == j ? 1.0 : 0.0)) < 1e-6);
            }
        const double det = rot[0] * (rot[4] * rot[8] - rot[5] * rot[7]) - rot[1] * (rot[3] * rot[8] - rot[5] * rot[6]) +
                           rot[2] * (rot[3] * rot[7] - rot[4] * rot[6]);
        CHECK(std::abs(det - 1.0) < 1e-6);

        const auto moved = pose_transform<double>(v, r);
        for (int a = 0; a < 3; ++a)
            for (int b2 = a + 1; b2 < 3; ++b2) {
                double d0 = 0, d1 = 0;
                for (int k = 0; k < 3; ++k) {
                    d0 += std::pow(v[3 * a + k] - v[3 * b2 + k], 2);
                    d1 += std::pow(moved[3 * a + k] - moved[3 * b2 + k], 2);
                }
                CHECK(std::abs(std::sqrt(d0) - std::sqrt(d1)) < 1e-5);
            }
    }
}

TEST_CASE("pose_transform rejects non-finite pose") {
    std::vector<double> v{1, 2, 3};
    std::vector<double> rho{0, std::nan(""), 0, 0, 0, 0};
    CHECK_THROWS_AS(pose_transform<double>(v, rho), std::invalid_argument);
}

TEST_CASE("SH irradiance closed forms") {
    std::vector<double> gamma(9, 0.0);
    gamma[0] = 1.0;
    const double y0 = 1.0 / (2.0 * std::sqrt(std::numbers::pi));
    for (const auto& n : {std::array<double, 3>{0, 0, 1}, std::array<double, 3>{1, 0, 0},
                          std::array<double, 3>{0.6, -0.48, 0.64}}) {
        CHECK(std::abs(sh_irradiance<double>(n, gamma) - y0) < 1e-6);
    }
    CHECK(std::abs(sh_irradiance<double>({0, 0, 1}, gamma) - 0.28209) < 1e-5);

    std::fill(gamma.begin(), gamma.end(), 0.0);
    CHECK(sh_irradiance<double>({0, 0, 1}, gamma) == 0.0);

    gamma[2] = 0.7;  // band-1 z term
    CHECK(std::abs(sh_irradiance<double>({0, 0, 1}, gamma) - 0.48860 * 0.7) < 1e-5);
}

TEST_CASE("SH basis is orthonormal on the sphere (quadrature)") {
    // Midpoint quadrature over (theta, phi).
    const int nt = 200, np = 400;
    double gram[9][9] = {};
    for (int i = 0; i < nt; ++i) {
        const double th = (i + 0.5) * std::numbers::pi / nt;
        for (int j = 0; j < np; ++j) {
            const double ph = (j + 0.5) * 2 * std::numbers::pi / np;
            const std::array<double, 3> n{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
            const auto y = sh_basis(n);
            const double dA = std::sin(th) * (std::numbers::pi / nt) * (2 * std::numbers::pi / np);
            for (int a = 0; a < 9; ++a)
                for (int b = 0; b < 9; ++b) gram[a][b] += y[a] * y[b] * dA;
        }
    }
    for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b) CHECK(std::abs(gram[a][b] - (a == b ? 1.0 : 0.0)) < 1e-3);
}

TEST_CASE("non-unit normals are renormalized and counted") {
    std::vector<double> gamma(9, 0.0);
    gamma[2] = 1.0;
    const auto before = sh_renormalization_count();
    const double e = sh_irradiance<double>({0, 0, 2}, gamma);
    CHECK(sh_renormalization_count() == before + 1);
    CHECK(std::abs(e - 0.48860251) < 1e-6);
}

TEST_CASE("shaded mesh invariants") {
    const auto c = smooth_regime_coeffs(1);
    const auto mesh = shade_mesh(shared_basis(), c);
    for (std::size_t i = 0; i < mesh.normals.size(); i += 3) {
        const double len = std::sqrt(mesh.normals[i] * mesh.normals[i] + mesh.normals[i + 1] * mesh.normals[i + 1] +
                                     mesh.normals[i + 2] * mesh.normals[i + 2]);
        CHECK(std::abs(len - 1.0) < 1e-6);
    }
    for (double col : mesh.colors) {
        CHECK(col >= 0.0);
        CHECK(col <= 1.0);
    }
    FaceCoefficients<double> dark = c;
    for (auto& g : dark.gamma()) g = 0.0;
    for (double col : shade_mesh(shared_basis(), dark).colors) CHECK(col == 0.0);
}

TEST_CASE("shaded vertex colors: VJP matches central differences over 20 seeds") {
    const auto& basis = shared_basis();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto coeffs = smooth_regime_coeffs(seed);
        ShadingTrace<double> trace;
        const auto mesh = shade_mesh(basis, coeffs, &trace);
        // Stay away from the clamp and the irradiance-zero boundaries.
        for (double raw : trace.color_raw) REQUIRE(raw < 0.98);
        for (double e : trace.irradiance) REQUIRE(e > 0.02);

        std::mt19937_64 rng(1000 + seed);
        std::normal_distribution<double> d(0.0, 1.0);
        std::vector<double> w(mesh.colors.size());
        for (auto& x : w) x = d(rng);

        Tensor64 packed({kCoefficientDim}, coeffs.values);
        auto objective = [&] {
            FaceCoefficients<double> c(packed.data());
            ShadingTrace<double> tr;
            const auto m = shade_mesh(basis, c, &tr);
            const auto g = shade_mesh_vjp<double>(basis, c, tr, w);
            double s = 0;
            for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * m.colors[i];
            return Tensor64::make_result({1}, {s}, {packed}, [packed, g](TensorNode<double>&) {
                accumulate_grad(packed, std::span<const double>(g));
            });
        };
        auto r = check_gradients(objective, {{"coeffs", packed}});
        CHECK_MESSAGE(r.max_rel_error < 1e-4, "seed " << seed << ": " << r.worst);
    }
}
