#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "doctest.h"
#include "facesr/gradcheck.hpp"
#include "facesr/training.hpp"
#include "test_util.hpp"

using namespace facesr;
using facesr::testing::scratch_dir;

namespace {

const FaceBasis& shared_basis() {
    static const FaceBasis basis = generate_basis();
    return basis;
}

std::vector<FaceSample> synthetic(std::size_t first, std::size_t count, int scale = 8, std::uint64_t seed = 1) {
    SyntheticFaceDataset ds(shared_basis(), Camera{}, SyntheticOptions{scale, 0.02, seed});
    return ds.generate(first, count);
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.channels = 8;
    c.rcab_count = 1;
    c.reduction = 4;
    c.batch = 2;
    c.epochs = 3;
    c.train_samples = 4;
    c.val_samples = 2;
    return c;
}

bool same_bits(const Image& a, const Image& b) {
    return a.same_size(b) && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("synthetic dataset is reproducible per seed and index") {
    const auto a = synthetic(0, 3);
    const auto b = synthetic(0, 3);
    const auto tail = synthetic(2, 1);
    const auto other = synthetic(0, 1, 8, 2);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(same_bits(a[i].hr, b[i].hr));
        CHECK(same_bits(a[i].lr, b[i].lr));
        CHECK(a[i].coefficients == b[i].coefficients);
    }
    CHECK(same_bits(a[2].hr, tail[0].hr));
    CHECK_FALSE(same_bits(a[0].hr, other[0].hr));
    CHECK_FALSE(same_bits(a[0].hr, a[1].hr));
}

TEST_CASE("synthetic samples have the expected geometry") {
    const auto x8 = synthetic(0, 1, 8);
    const auto x4 = synthetic(0, 1, 4);
    CHECK(x8[0].hr.width == 128);
    CHECK(x8[0].hr.height == 128);
    CHECK(x8[0].lr.width == 16);
    CHECK(x4[0].lr.width == 32);
    CHECK(same_bits(x8[0].hr, x4[0].hr));
    CHECK(same_bits(x8[0].lr, degrade(x8[0].hr, 8)));
    for (float v : x8[0].hr.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("sampled coefficients stay inside the pose and lighting ranges") {
    const CoefficientSpread spread;
    for (std::size_t i = 0; i < 50; ++i) {
        FaceCoefficients<float> c(std::span<const float>(sample_coefficients(7, i)));
        CHECK(c.gamma()[0] >= 2.5f);
        CHECK(c.gamma()[0] <= 3.5f);
        for (std::size_t k = 0; k < kPoseDim; ++k) CHECK(std::abs(c.rho()[k]) <= spread.rho[k]);
    }
}

TEST_CASE("noise-free synthetic HR equals the clamped render") {
    SyntheticFaceDataset ds(shared_basis(), Camera{}, SyntheticOptions{8, 0.0, 5});
    const auto s = ds.sample(0);
    const auto out = render(shared_basis(), FaceCoefficients<float>(std::span<const float>(s.coefficients)), Camera{});
    for (int y = 0; y < 128; y += 7)
        for (int x = 0; x < 128; x += 5)
            for (int c = 0; c < 3; ++c) CHECK(s.hr.at(c, y, x) == std::clamp(out.rgb[3 * (y * 128 + x) + c], 0.0f, 1.0f));
}

TEST_CASE("image directory loader crops, resizes and splits deterministically") {
    const auto dir = scratch_dir("dataset_dir");
    for (int k = 0; k < 5; ++k) {
        Image img(160 + 10 * k, 128 + 4 * k, 3);
        for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 7 + k) % 255) / 255.0f;
        save_png(img, dir / ("face" + std::to_string(k) + ".png"));
    }
    DatasetSpec spec;
    spec.source = dir;
    spec.scale = 4;
    spec.seed = 3;
    const auto all = load_image_directory(spec);
    REQUIRE(all.size() == 5);
    CHECK(all[0].name == "face0");
    for (const auto& s : all) {
        CHECK(s.hr.width == 128);
        CHECK(s.hr.height == 128);
        CHECK(s.lr.width == 32);
    }
    std::vector<FaceSample> tr1, va1, tr2, va2;
    split_samples(all, spec, tr1, va1);
    split_samples(all, spec, tr2, va2);
    CHECK(tr1.size() == 4);
    CHECK(va1.size() == 1);
    CHECK(va1[0].name == va2[0].name);

    DatasetSpec empty = spec;
    empty.source = scratch_dir("dataset_empty");
    CHECK_THROWS_AS(load_image_directory(empty), DataError);
    DatasetSpec bad = spec;
    bad.scale = 3;
    CHECK_THROWS_AS(load_image_directory(bad), ConfigError);
}

TEST_CASE("center crop keeps the middle square") {
    Image img(6, 4, 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) img.at(c, y, x) = static_cast<float>(x) / 10.0f;
    const Image crop = center_crop_resize(img, 4);
    CHECK(crop.width == 4);
    CHECK(crop.at(0, 0, 0) == doctest::Approx(0.1));
    CHECK(crop.at(2, 3, 3) == doctest::Approx(0.4));
}

TEST_CASE("learning rate halves every 50 epochs") {
    CHECK(step_decay_lr(2e-4, 0) == 2e-4);
    CHECK(step_decay_lr(2e-4, 49) == 2e-4);
    CHECK(step_decay_lr(2e-4, 50) == 1e-4);
    CHECK(step_decay_lr(2e-4, 100) == 5e-5);
    CHECK(step_decay_lr(2e-4, 149) == 5e-5);
}

TEST_CASE("epoch order is a seeded permutation") {
    const auto a = epoch_order(1, 0, 20);
    const auto b = epoch_order(1, 0, 20);
    const auto c = epoch_order(1, 1, 20);
    const auto d = epoch_order(2, 0, 20);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a != d);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 20);
}

TEST_CASE("coefficient prior matches its closed form and gradient") {
    Tensor64 c({2, kCoefficientDim}, std::vector<double>(2 * kCoefficientDim, 0.0), true);
    c.data()[kAlphaOffset] = 5.0;                   // (5/5)^2 = 1
    c.data()[kGammaOffset] = 100.0;                 // illumination is free
    c.data()[kCoefficientDim + kRhoOffset + 5] = 0.4;  // (0.4/0.2)^2 = 4
    const double count = 2.0 * static_cast<double>(kCoefficientDim - kIlluminationDim);
    CHECK(coefficient_prior(c, 0.5).item() == doctest::Approx(0.5 * 5.0 / count).epsilon(1e-12));

    auto x = facesr::testing::random_tensor({3, kCoefficientDim}, 11, -2.0, 2.0, true);
    const auto report = check_gradients([&] { return coefficient_prior(x, 0.3); }, {{"c", x}});
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("render trainer is deterministic and resumes bitwise") {
    const auto data = synthetic(0, 4);
    const TrainConfig cfg = tiny_config();
    RenderTrainer a(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    RenderTrainer b(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    const auto la = a.train();
    const auto lb = b.train();
    REQUIRE(la.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(same_bits(la[e].loss, lb[e].loss));
    CHECK(a.checkpoint().same_contents(b.checkpoint()));
    CHECK(la[2].loss < la[0].loss);

    const auto dir = scratch_dir("render_resume");
    RenderTrainer first(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    first.run_epoch();
    save_checkpoint(first.checkpoint(), dir / "r.ckpt");
    RenderTrainer resumed(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    resumed.resume(load_checkpoint(dir / "r.ckpt"));
    CHECK(resumed.epoch() == 1);
    const auto rest = resumed.train();
    REQUIRE(rest.size() == 2);
    CHECK(same_bits(rest[0].loss, la[1].loss));
    CHECK(same_bits(rest[1].loss, la[2].loss));
    CHECK(resumed.checkpoint().same_contents(a.checkpoint()));
}

TEST_CASE("render checkpoint carries metadata") {
    const auto data = synthetic(0, 2);
    TrainConfig cfg = tiny_config();
    RenderTrainer t(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    t.run_epoch();
    const auto c = t.checkpoint();
    CHECK(c.meta.at("kind") == "render");
    CHECK(c.meta.at("epoch") == "1");
    CHECK(c.meta.at("seed") == "1");
    CHECK(c.meta.at("adam_step") == "1");
    CHECK(std::stod(c.meta.at("lr")) == 2e-4);
    CHECK_FALSE(c.meta.at("config_hash").empty());
    CHECK(c.find("adam.m.reg.fc.w") != nullptr);
}

TEST_CASE("non-finite loss aborts with the last good state") {
    auto data = synthetic(0, 2);
    std::fill(data[1].hr.data.begin(), data[1].hr.data.end(), std::numeric_limits<float>::quiet_NaN());
    TrainConfig cfg = tiny_config();
    RenderTrainer t(cfg, shared_basis(), Camera{}, SkinModel::shipped(), data);
    const Checkpoint before = t.checkpoint();
    try {
        t.run_epoch();
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.epoch == 0);
        CHECK(e.last_good.same_contents(before));
    }
    CHECK(t.checkpoint().same_contents(before));
    CHECK(t.epoch() == 0);
}

TEST_CASE("trainers reject empty or mis-sized data") {
    TrainConfig cfg = tiny_config();
    CHECK_THROWS_AS(RenderTrainer(cfg, shared_basis(), Camera{}, SkinModel::shipped(), {}), DataError);
    cfg.scale = 4;
    CHECK_THROWS_AS(RenderTrainer(cfg, shared_basis(), Camera{}, SkinModel::shipped(), synthetic(0, 1, 8)),
                    DataError);
}

TEST_CASE("SR trainer: ablation manifests, shared init and bitwise resume") {
    const auto train = synthetic(0, 4);
    const auto val = synthetic(4, 2);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    RenderTrainer rt(cfg, shared_basis(), Camera{}, SkinModel::shipped(), train);
    const Checkpoint render_ckpt = rt.checkpoint();

    SrTrainer with(cfg, shared_basis(), Camera{}, render_ckpt, train, val);
    TrainConfig np = cfg;
    np.no_prior = true;
    SrTrainer without(np, shared_basis(), Camera{}, render_ckpt, train, val);

    SUBCASE("no_prior removes exactly the conditioning tensors") {
        std::set<std::string> a, b;
        for (const auto& t : with.checkpoint().tensors) a.insert(t.name);
        for (const auto& t : without.checkpoint().tensors) b.insert(t.name);
        std::size_t theta = 0;
        for (const auto& n : b) CHECK(a.count(n) == 1);
        for (const auto& n : a) {
            if (b.count(n)) continue;
            CHECK(n.find(kThetaPrefix) != std::string::npos);
            ++theta;
        }
        CHECK(theta > 0);
        for (const auto& n : a) {
            if (n.rfind(kThetaPrefix, 0) == 0) CHECK(b.count(n) == 0);
        }
    }

    SUBCASE("non-conditioning parameters start identical") {
        const auto& pw = with.network().params();
        const auto& pn = without.network().params();
        std::size_t shared = 0;
        for (const auto& e : pn.entries()) {
            const auto* other = pw.find(e.name);
            REQUIRE(other != nullptr);
            CHECK(other->same_values(e.tensor));
            ++shared;
        }
        CHECK(shared == pn.entries().size());
    }

    SUBCASE("resume reproduces losses and parameters") {
        const auto full = with.train();
        REQUIRE(full.size() == 2);
        CHECK(std::isfinite(full[1].val_psnr));
        CHECK(std::isfinite(full[1].train_psnr));

        SrTrainer first(cfg, shared_basis(), Camera{}, render_ckpt, train, val);
        first.run_epoch();
        const auto dir = scratch_dir("sr_resume");
        save_checkpoint(first.checkpoint(), dir / "s.ckpt");
        SrTrainer resumed(cfg, shared_basis(), Camera{}, render_ckpt, train, val);
        resumed.resume(load_checkpoint(dir / "s.ckpt"));
        const auto rest = resumed.train();
        REQUIRE(rest.size() == 1);
        CHECK(same_bits(rest[0].loss, full[1].loss));
        CHECK(same_bits(rest[0].val_psnr, full[1].val_psnr));
        CHECK(resumed.checkpoint().same_contents(with.checkpoint()));
    }

    SUBCASE("a render checkpoint cannot resume SR training") {
        CHECK_THROWS_AS(with.resume(render_ckpt), ShapeMismatchError);
    }

    SUBCASE("an SR checkpoint is not a render checkpoint") {
        CHECK_THROWS_AS(SrTrainer(cfg, shared_basis(), Camera{}, with.checkpoint(), train, val), ShapeMismatchError);
    }
}

TEST_CASE("super-resolver maps LR inputs to 128x128 for both scales") {
    for (int scale : {8, 4}) {
        const auto train = synthetic(0, 2, scale);
        TrainConfig cfg = tiny_config();
        cfg.scale = scale;
        cfg.epochs = 1;
        RenderTrainer rt(cfg, shared_basis(), Camera{}, SkinModel::shipped(), train);
        SrTrainer st(cfg, shared_basis(), Camera{}, rt.checkpoint(), train, {});
        st.train();
        const auto dir = scratch_dir("sr_infer");
        save_checkpoint(st.checkpoint(), dir / "sr.ckpt");
        const SuperResolver sr(load_checkpoint(dir / "sr.ckpt"), shared_basis(), Camera{});
        CHECK(sr.scale() == scale);
        const Image out = sr.run(train[0].lr);
        CHECK(out.width == 128);
        CHECK(out.height == 128);
        CHECK(out.channels == 3);
        for (float v : out.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        Image wrong(128 / scale + 1, 128 / scale, 3);
        CHECK_THROWS_AS(sr.run(wrong), DataError);
    }
}
