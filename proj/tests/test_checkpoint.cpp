#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "facesr/checkpoint.hpp"
#include "facesr/networks.hpp"
#include "test_util.hpp"

using namespace facesr;
using facesr::testing::scratch_dir;

namespace {

SamConfig tiny_sam(int scale) {
    SamConfig c;
    c.channels = 8;
    c.rcab_count = 1;
    c.reduction = 4;
    c.scale = scale;
    return c;
}

Checkpoint model_checkpoint(int scale, std::uint64_t seed = 3) {
    SamNetwork<float> net(tiny_sam(scale), seed);
    Checkpoint c;
    c.meta["kind"] = "test";
    c.meta["note"] = "two words";
    store_parameters(c, net.params());
    return c;
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise on a fresh model") {
    const auto dir = scratch_dir("ckpt_roundtrip");
    const Checkpoint saved = model_checkpoint(8);
    save_checkpoint(saved, dir / "m.ckpt");
    const Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
    CHECK(loaded.same_contents(saved));
    CHECK(loaded.meta.at("note") == "two words");
    CHECK(checkpoint_digest(loaded) == checkpoint_digest(saved));

    SamNetwork<float> other(tiny_sam(8), 99);
    restore_parameters(loaded, other.params());
    SamNetwork<float> reference(tiny_sam(8), 3);
    for (std::size_t i = 0; i < other.params().entries().size(); ++i) {
        CHECK(other.params().entries()[i].tensor.same_values(reference.params().entries()[i].tensor));
    }
    CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.tmp"));
    CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.blob.tmp"));
}

TEST_CASE("checkpoint preserves i32 tensors and special float values") {
    const auto dir = scratch_dir("ckpt_values");
    Checkpoint c;
    const std::vector<float> f = {0.0f, -0.0f, 1e-38f, 3.4e38f, -1.5f, 1.0f / 3.0f};
    const std::vector<std::int32_t> i = {-7, 0, 2147483647};
    c.add("f", {2, 3}, f);
    c.add("i", {3}, std::span<const std::int32_t>(i));
    c.add("empty", {0, 4}, std::span<const float>());
    save_checkpoint(c, dir / "v.ckpt");
    const auto back = load_checkpoint(dir / "v.ckpt");
    CHECK(back.same_contents(c));
    CHECK(std::signbit(back.find("f")->f32[1]));
    CHECK(back.find("i")->i32 == i);
}

TEST_CASE("manifest lists tensors with offsets and the blob size") {
    const auto dir = scratch_dir("ckpt_manifest");
    Checkpoint c;
    const std::vector<float> a(6, 1.0f), b(4, 2.0f);
    c.add("a", {2, 3}, a);
    c.add("b", {4}, b);
    save_checkpoint(c, dir / "x.ckpt");
    const std::string text = read_text(dir / "x.ckpt");
    CHECK(text.rfind("FACESR-CKPT 1\n", 0) == 0);
    CHECK(text.find("tensor a f32 2 2 3 0 24\n") != std::string::npos);
    CHECK(text.find("tensor b f32 1 4 24 16\n") != std::string::npos);
    CHECK(text.find("blob_bytes 40\n") != std::string::npos);
    CHECK(std::filesystem::file_size(dir / "x.ckpt.blob") == 40);
}

TEST_CASE("blob truncated by 4 bytes raises TruncatedBlobError") {
    const auto dir = scratch_dir("ckpt_trunc");
    save_checkpoint(model_checkpoint(8), dir / "t.ckpt");
    const auto blob = dir / "t.ckpt.blob";
    std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 4);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), TruncatedBlobError);
    std::filesystem::remove(blob);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), TruncatedBlobError);
}

TEST_CASE("corrupt manifests are rejected before the blob is read") {
    const auto dir = scratch_dir("ckpt_corrupt");
    Checkpoint c;
    const std::vector<float> a(4, 1.0f), b(4, 2.0f);
    c.add("a", {4}, a);
    c.add("b", {4}, b);
    save_checkpoint(c, dir / "c.ckpt");
    const std::string good = read_text(dir / "c.ckpt");
    auto variant = [&](const std::string& from, const std::string& to) {
        std::string text = good;
        const auto pos = text.find(from);
        REQUIRE(pos != std::string::npos);
        text.replace(pos, from.size(), to);
        write_text(dir / "c.ckpt", text);
        // The blob is deliberately removed: validation must fail first.
        std::filesystem::remove(dir / "c.ckpt.blob");
    };

    variant("FACESR-CKPT 1", "FACESR-CKPT 2");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
    variant("FACESR-CKPT", "OTHER-CKPT");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
    variant("tensor b f32 1 4 16 16", "tensor b f32 1 4 8 16");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.ckpt"), doctest::Contains("overlapping"), CorruptManifestError);
    variant("tensor b f32 1 4 16 16", "tensor b f32 1 4 24 16");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.ckpt"), doctest::Contains("outside"), CorruptManifestError);
    variant("tensor b f32 1 4 16 16", "tensor b f32 1 5 16 16");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
    variant("tensor b f32", "tensor b f64");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
    variant("end\n", "");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
    variant("tensor b", "tensor a");
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CorruptManifestError);
}

TEST_CASE("blob longer than declared is a manifest error") {
    const auto dir = scratch_dir("ckpt_long");
    save_checkpoint(model_checkpoint(4), dir / "l.ckpt");
    const auto blob = dir / "l.ckpt.blob";
    std::filesystem::resize_file(blob, std::filesystem::file_size(blob) + 4);
    CHECK_THROWS_AS(load_checkpoint(dir / "l.ckpt"), CorruptManifestError);
}

TEST_CASE("loading a x4 checkpoint into a x8 model names the missing tensor") {
    const Checkpoint x4 = model_checkpoint(4);
    SamNetwork<float> x8(tiny_sam(8), 1);
    CHECK_THROWS_WITH_AS(restore_parameters(x4, x8.params()), doctest::Contains("sam.up2.w"), ShapeMismatchError);
}

TEST_CASE("differing widths report both shapes and the tensor") {
    SamConfig wide = tiny_sam(8);
    wide.channels = 16;
    SamNetwork<float> a(wide, 1);
    Checkpoint c;
    store_parameters(c, a.params());
    SamNetwork<float> b(tiny_sam(8), 1);
    CHECK_THROWS_WITH_AS(restore_parameters(c, b.params()), doctest::Contains("sam.head.w"), ShapeMismatchError);
}

TEST_CASE("basis archive round trip") {
    const auto dir = scratch_dir("ckpt_basis");
    const FaceBasis basis = generate_basis();
    save_checkpoint(basis_to_checkpoint(basis), dir / "basis.ckpt");
    const FaceBasis back = basis_from_checkpoint(load_checkpoint(dir / "basis.ckpt"));
    CHECK(back.vertex_count == basis.vertex_count);
    CHECK(back.mean_shape == basis.mean_shape);
    CHECK(back.mean_texture == basis.mean_texture);
    CHECK(back.identity_basis == basis.identity_basis);
    CHECK(back.expression_basis == basis.expression_basis);
    CHECK(back.texture_basis == basis.texture_basis);
    CHECK(back.triangles == basis.triangles);
}

TEST_CASE("optimizer state survives a checkpoint") {
    ParameterSet<float> params;
    params.add("w", Tensor({3}, {1.0f, 2.0f, 3.0f}));
    Adam adam;
    adam.attach(params);
    const std::vector<float> g = {0.5f, 0.0f, -1.0f};
    accumulate_grad(params.entries()[0].tensor, std::span<const float>(g));
    adam.step(params);

    Checkpoint c;
    store_parameters(c, params);
    store_optimizer(c, params, adam);
    CHECK(c.meta.at("adam_step") == "1");

    Adam restored;
    restore_optimizer(c, params, restored);
    CHECK(restored.state().step == 1);
    CHECK(restored.state().first_moment == adam.state().first_moment);
    CHECK(restored.state().second_moment == adam.state().second_moment);
}
