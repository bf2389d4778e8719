#include "facesr/gradsuite.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "facesr/gradcheck.hpp"
#include "facesr/networks.hpp"
#include "facesr/ops.hpp"
#include "facesr/priors.hpp"
#include "facesr/raster.hpp"

namespace facesr {

bool GradSuiteReport::passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const GradSuiteCase& c) { return c.passed(); });
}

double GradSuiteReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& c : cases)
        if (c.tolerance <= 1e-4) m = std::max(m, c.max_rel_error);
    return m;
}

double GradSuiteReport::max_rel_error_end_to_end() const {
    double m = 0.0;
    for (const auto& c : cases)
        if (c.tolerance > 1e-4) m = std::max(m, c.max_rel_error);
    return m;
}

namespace {

using Inputs = std::vector<std::pair<std::string, Tensor64>>;

Tensor64 uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return Tensor64(std::move(shape), std::move(v));
}

// |x| in [margin, 1], random sign: keeps kinks outside the stencil.
Tensor64 away_from_zero(Shape shape, std::uint64_t seed, double margin = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensor64(std::move(shape), std::move(v));
}

Tensor64 sparse_weights(Shape shape, std::size_t count, std::uint64_t seed) {
    Tensor64 w = Tensor64::zeros(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) w.data()[rng() % w.numel()] = u(rng);
    return w;
}

GradCheckOptions options(double step, std::uint64_t seed, std::size_t coords = 0) {
    GradCheckOptions o;
    o.step = step;
    o.seed = seed;
    o.max_coords_per_tensor = coords;
    return o;
}

// sum(w . op(inputs)) with fixed random w of the output's shape.
GradCheckResult check_op(const std::function<Tensor64()>& op, const Inputs& inputs, std::uint64_t seed,
                         double step = 1e-3) {
    const Tensor64 weights = uniform(op().shape(), seed ^ 0x5eedULL);
    return check_gradients([&] { return weighted_sum(op(), weights); }, inputs, options(step, seed));
}

struct CaseSpec {
    std::string name;
    double tolerance;
    double step;
    std::function<GradCheckResult(std::uint64_t)> run;
};

RcabParams<double> random_rcab(std::size_t c, std::size_t reduced, std::uint64_t seed) {
    RcabParams<double> p;
    p.conv1 = {uniform({c, c, 3, 3}, seed + 1, -0.4, 0.4), uniform({c}, seed + 2, -0.1, 0.1), 1, 1};
    p.conv2 = {uniform({c, c, 3, 3}, seed + 3, -0.4, 0.4), uniform({c}, seed + 4, -0.1, 0.1), 1, 1};
    p.down = {uniform({reduced, c}, seed + 5, -0.8, 0.8), uniform({reduced}, seed + 6, -0.1, 0.1)};
    p.up = {uniform({c, reduced}, seed + 7, -0.8, 0.8), uniform({c}, seed + 8, -0.1, 0.1)};
    return p;
}

SamConfig micro_sam() {
    SamConfig c;
    c.channels = 8;
    c.rcab_count = 2;
    c.reduction = 4;
    c.scale = 8;
    return c;
}

// Coefficients with positive irradiance and unsaturated colors.
FaceCoefficients<double> smooth_coeffs(std::uint64_t seed) {
    FaceCoefficients<double> c;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : c.alpha()) x = 1.5 * d(rng);
    for (auto& x : c.beta()) x = 1.5 * d(rng);
    for (auto& x : c.delta()) x = d(rng);
    c.gamma()[0] = 2.4;
    for (std::size_t b = 1; b < kIlluminationDim; ++b) c.gamma()[b] = 0.08 * d(rng);
    for (std::size_t k = 0; k < 3; ++k) c.rho()[k] = 0.15 * d(rng);
    for (std::size_t k = 3; k < kPoseDim; ++k) c.rho()[k] = 0.05 * d(rng);
    return c;
}

const FaceBasis& suite_basis() {
    static const FaceBasis basis = generate_basis();
    return basis;
}

std::vector<CaseSpec> build_cases() {
    std::vector<CaseSpec> cases;
    auto add_case = [&](std::string name, double tol, double step, std::function<GradCheckResult(std::uint64_t)> f) {
        cases.push_back({std::move(name), tol, step, std::move(f)});
    };

    add_case("conv2d", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto x = uniform({2, 3, 6, 6}, 100 + s), w = uniform({4, 3, 3, 3}, 200 + s), b = uniform({4}, 300 + s);
        const int stride = s % 2 ? 2 : 1;
        return check_op([&] { return conv2d(x, w, b, stride, 1); }, {{"x", x}, {"w", w}, {"b", b}}, s);
    });
    add_case("transposed_conv2d", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto x = uniform({1, 2, 4, 4}, 400 + s), w = uniform({2, 3, 4, 4}, 500 + s), b = uniform({3}, 600 + s);
        return check_op([&] { return transposed_conv2d(x, w, b, 2, 1); }, {{"x", x}, {"w", w}, {"b", b}}, s);
    });

    auto a_of = [](std::uint64_t s) { return away_from_zero({2, 3, 3, 4}, 700 + s); };
    auto b_of = [](std::uint64_t s) { return uniform({2, 3, 3, 4}, 710 + s); };
    auto g_of = [](std::uint64_t s) { return uniform({2, 3, 1, 1}, 720 + s); };
    add_case("add", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto a = a_of(s), b = b_of(s), g = g_of(s);
        auto r = check_op([&] { return add(a, b); }, {{"a", a}, {"b", b}}, s);
        const auto rb = check_op([&] { return add(a, g); }, {{"a", a}, {"g", g}}, s);
        if (rb.max_rel_error > r.max_rel_error) r.worst = rb.worst;
        r.max_rel_error = std::max(r.max_rel_error, rb.max_rel_error);
        r.coords_checked += rb.coords_checked;
        return r;
    });
    add_case("mul", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto a = a_of(s), b = b_of(s), g = g_of(s);
        auto r = check_op([&] { return mul(a, b); }, {{"a", a}, {"b", b}}, s);
        const auto rb = check_op([&] { return mul(a, g); }, {{"a", a}, {"g", g}}, s);
        if (rb.max_rel_error > r.max_rel_error) r.worst = rb.worst;
        r.max_rel_error = std::max(r.max_rel_error, rb.max_rel_error);
        r.coords_checked += rb.coords_checked;
        return r;
    });
    add_case("scale", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s);
        return check_op([&] { return scale(b, 0.37 + static_cast<double>(s)); }, {{"b", b}}, s);
    });
    add_case("relu", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto a = a_of(s);
        return check_op([&] { return relu(a); }, {{"a", a}}, s);
    });
    add_case("sigmoid", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = scale(b_of(s), 3.0);
        return check_op([&] { return sigmoid(b); }, {{"b", b}}, s);
    });
    add_case("global_avg_pool", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s);
        return check_op([&] { return global_avg_pool(b); }, {{"b", b}}, s);
    });
    add_case("linear", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto x = uniform({3, 6}, 730 + s), w = uniform({4, 6}, 740 + s), b = uniform({4}, 750 + s);
        return check_op([&] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"bias", b}}, s);
    });
    add_case("reshape", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s);
        return check_op([&] { return reshape(b, {6, 12}); }, {{"b", b}}, s);
    });
    add_case("upsample_nearest", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s);
        return check_op([&] { return upsample_nearest(b, 2); }, {{"b", b}}, s);
    });
    add_case("concat_channels", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto a = a_of(s), b = uniform({2, 2, 3, 4}, 760 + s);
        return check_op([&] { return concat_channels(a, b); }, {{"a", a}, {"b", b}}, s);
    });
    add_case("l1_loss", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto t = b_of(s);
        const auto p = add(t, a_of(s)).detach();
        return check_gradients([&] { return l1_loss(p, t); }, {{"prediction", p}}, options(1e-3, s));
    });
    add_case("weighted_sum", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s), w = uniform({2, 3, 3, 4}, 770 + s);
        return check_gradients([&] { return weighted_sum(b, w); }, {{"b", b}}, options(1e-3, s));
    });
    add_case("mean", 1e-4, 1e-3, [=](std::uint64_t s) {
        const auto b = b_of(s);
        return check_gradients([&] { return mean(b); }, {{"b", b}}, options(1e-3, s));
    });

    // ReLU compositions use a small step so the stencil does not straddle kinks.
    add_case("rcab", 1e-4, 1e-6, [](std::uint64_t s) {
        const auto f = uniform({1, 4, 6, 6}, 300 + s);
        const auto p = random_rcab(4, 2, 400 + 10 * s);
        return check_op([&] { return rcab_forward(f, p); },
                        {{"input", f},
                         {"conv1.w", p.conv1.weight},
                         {"conv1.b", p.conv1.bias},
                         {"conv2.w", p.conv2.weight},
                         {"conv2.b", p.conv2.bias},
                         {"down.w", p.down.weight},
                         {"down.b", p.down.bias},
                         {"up.w", p.up.weight},
                         {"up.b", p.up.bias}},
                        s, 1e-6);
    });
    add_case("sft_modulate", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto f = uniform({1, 3, 3, 3}, 10 + s), m = uniform({1, 3, 3, 3}, 20 + s), n = uniform({1, 3, 3, 3}, 30 + s);
        return check_op([&] { return sft_modulate(f, m, n); }, {{"F", f}, {"mu", m}, {"nu", n}}, s);
    });
    add_case("sft_condition", 1e-4, 1e-6, [](std::uint64_t s) {
        SamNetwork<double> net(micro_sam(), s);
        std::uint64_t k = 1000 * s;
        for (auto& e : net.params().entries()) {
            const auto r = uniform(e.tensor.shape(), ++k, -0.2, 0.2);
            std::copy(r.data().begin(), r.data().end(), e.tensor.data().begin());
        }
        const auto prior = uniform({1, 7, 5, 5}, s, 0.0, 1.0);
        const auto wm = uniform({1, 8, 5, 5}, 100 + s), wn = uniform({1, 8, 5, 5}, 200 + s);
        Inputs in{{"prior", prior}};
        for (auto& e : net.params().entries())
            if (e.name.rfind(kThetaPrefix, 0) == 0) in.push_back({e.name, e.tensor});
        return check_gradients(
            [&] {
                auto [mu, nu] = sft_condition(prior, net.theta(), s % 2);
                return add(weighted_sum(mu, wm), weighted_sum(nu, wn));
            },
            in, options(1e-6, s, 6));
    });
    add_case("regressor", 1e-4, 1e-6, [](std::uint64_t s) {
        RegressorConfig cfg;
        cfg.widths = {4, 4, 6, 6};
        cfg.blocks_per_stage = 1;
        Regressor<double> reg(cfg, s);
        const auto x = uniform({1, 3, 16, 16}, 50 + s, 0.0, 1.0);
        const auto w = uniform({1, kCoefficientDim}, 60 + s);
        Inputs in{{"input", x}};
        for (auto& e : reg.params().entries()) in.push_back({e.name, e.tensor});
        return check_gradients([&] { return weighted_sum(reg.forward(x), w); }, in, options(1e-6, s, 3));
    });

    add_case("shading", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto& basis = suite_basis();
        const auto start = smooth_coeffs(s);
        std::mt19937_64 rng(1000 + s);
        std::normal_distribution<double> d(0.0, 1.0);
        std::vector<double> w(3 * basis.vertex_count);
        for (auto& x : w) x = d(rng);
        Tensor64 packed({kCoefficientDim}, start.values);
        return check_gradients(
            [&] {
                const FaceCoefficients<double> c(packed.data());
                ShadingTrace<double> tr;
                const auto m = shade_mesh(basis, c, &tr);
                const auto g = shade_mesh_vjp<double>(basis, c, tr, w);
                double v = 0.0;
                for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * m.colors[i];
                return Tensor64::make_result({}, {v}, {packed}, [packed, g](TensorNode<double>&) {
                    accumulate_grad(packed, std::span<const double>(g));
                });
            },
            {{"coefficients", packed}}, options(1e-3, s));
    });
    // Texture and illumination leave visibility unchanged, so the rasterized
    // image is smooth in them and finite differences see the full path.
    add_case("render", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto& basis = suite_basis();
        const Camera cam = Camera::centered(48, 1015.0 * 48 / 128);
        const auto start = smooth_coeffs(s);
        Tensor64 packed({1, kCoefficientDim}, start.values);
        const std::size_t n_free = kTextureDim + kIlluminationDim;
        std::vector<double> free_init(start.delta().begin(), start.delta().end());
        free_init.insert(free_init.end(), start.gamma().begin(), start.gamma().end());
        Tensor64 free({n_free}, free_init);
        const auto weights = uniform({1, 3, 48, 48}, 900 + s);
        return check_gradients(
            [&] {
                std::vector<double> values(packed.data().begin(), packed.data().end());
                std::copy(free.data().begin(), free.data().begin() + kTextureDim, values.begin() + kDeltaOffset);
                std::copy(free.data().begin() + kTextureDim, free.data().end(), values.begin() + kGammaOffset);
                Tensor64 live({1, kCoefficientDim}, values, true);
                Tensor64 obj = weighted_sum(render_batch(basis, cam, live).images, weights);
                const double v = obj.item();
                return Tensor64::make_result({}, {v}, {free}, [free, obj, live](TensorNode<double>& self) mutable {
                    obj.backward();
                    const auto g = live.grad();
                    std::vector<double> out(kTextureDim + kIlluminationDim);
                    for (std::size_t i = 0; i < kTextureDim; ++i) out[i] = self.grad[0] * g[kDeltaOffset + i];
                    for (std::size_t i = 0; i < kIlluminationDim; ++i)
                        out[kTextureDim + i] = self.grad[0] * g[kGammaOffset + i];
                    accumulate_grad(free, std::span<const double>(out));
                });
            },
            {{"texture+illumination", free}}, options(1e-3, s));
    });
    add_case("rendering_loss", 1e-4, 1e-3, [](std::uint64_t s) {
        const std::size_t n = 2, h = 4, w = 4;
        const auto sharp = uniform({n, 3, h, w}, 100 + s, 0.0, 1.0);
        const auto rendered = uniform({n, 3, h, w}, 200 + s, 0.0, 1.0);
        const auto att = uniform({n, 1, h, w}, 300 + s, 0.1, 1.0);
        std::vector<std::vector<std::uint8_t>> masks(n, std::vector<std::uint8_t>(h * w, 1));
        masks[s % n][s % (h * w)] = 0;
        return check_gradients([&] { return rendering_loss(sharp, rendered, att, masks); }, {{"rendered", rendered}},
                               options(1e-3, s));
    });
    add_case("coefficient_prior", 1e-4, 1e-3, [](std::uint64_t s) {
        const auto c = uniform({2, kCoefficientDim}, 40 + s, -2.0, 2.0);
        return check_gradients([&] { return coefficient_prior(c, 0.3); }, {{"coefficients", c}}, options(1e-3, s));
    });

    // Whole SAM network, read out at 256 random output pixels.
    add_case("sam_end_to_end", 1e-3, 1e-7, [](std::uint64_t s) {
        SamNetwork<double> net(micro_sam(), s);
        std::uint64_t k = 900 + s;
        for (auto& e : net.params().entries()) {
            if (e.name.rfind(kThetaPrefix, 0) != 0 || e.name.find(".w") == std::string::npos) continue;
            if (e.name.find("trunk") != std::string::npos) continue;
            const auto r = uniform(e.tensor.shape(), ++k, -0.05, 0.05);
            std::copy(r.data().begin(), r.data().end(), e.tensor.data().begin());
        }
        const auto lr = uniform({1, 3, 16, 16}, 10 + s, 0.0, 1.0);
        const auto prior = uniform({1, 7, 16, 16}, 20 + s, 0.0, 1.0);
        const auto w = sparse_weights({1, 3, 128, 128}, 256, 30 + s);
        Inputs in{{"lr", lr}, {"prior", prior}};
        for (auto& e : net.params().entries()) in.push_back({e.name, e.tensor});
        return check_gradients([&] { return weighted_sum(net.forward(lr, prior), w); }, in, options(1e-7, s, 2));
    });
    return cases;
}

}  // namespace

std::vector<std::string> gradient_suite_cases() {
    std::vector<std::string> names;
    for (const auto& c : build_cases()) names.push_back(c.name);
    return names;
}

GradSuiteReport run_gradient_suite(const GradSuiteOptions& opts,
                                   const std::function<void(const GradSuiteCase&)>& on_case) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    GradSuiteReport report;
    for (const auto& spec : build_cases()) {
        if (!opts.only.empty() && spec.name.find(opts.only) == std::string::npos) continue;
        const auto c0 = clock::now();
        GradSuiteCase c;
        c.name = spec.name;
        c.tolerance = spec.tolerance;
        c.step = spec.step;
        c.seeds = opts.seeds;
        for (std::size_t i = 0; i < opts.seeds; ++i) {
            const std::uint64_t seed = opts.first_seed + i;
            const auto r = spec.run(seed);
            c.coords += r.coords_checked;
            if (r.max_rel_error > c.max_rel_error || c.worst.empty()) {
                c.worst = "seed " + std::to_string(seed) + ": " + r.worst;
            }
            c.max_rel_error = std::max(c.max_rel_error, r.max_rel_error);
        }
        c.seconds = std::chrono::duration<double>(clock::now() - c0).count();
        if (on_case) on_case(c);
        report.cases.push_back(std::move(c));
    }
    report.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return report;
}

}  // namespace facesr
