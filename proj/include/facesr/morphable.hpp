#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace facesr {

inline constexpr std::size_t kIdentityDim = 80;
inline constexpr std::size_t kExpressionDim = 64;
inline constexpr std::size_t kTextureDim = 80;
inline constexpr std::size_t kIlluminationDim = 9;
inline constexpr std::size_t kPoseDim = 6;
inline constexpr std::size_t kCoefficientDim =
    kIdentityDim + kExpressionDim + kTextureDim + kIlluminationDim + kPoseDim;  // 239

// Offsets of each group inside the packed 239-vector (alpha, beta, delta, gamma, rho).
inline constexpr std::size_t kAlphaOffset = 0;
inline constexpr std::size_t kBetaOffset = kAlphaOffset + kIdentityDim;
inline constexpr std::size_t kDeltaOffset = kBetaOffset + kExpressionDim;
inline constexpr std::size_t kGammaOffset = kDeltaOffset + kTextureDim;
inline constexpr std::size_t kRhoOffset = kGammaOffset + kIlluminationDim;

using Triangle = std::array<std::uint32_t, 3>;

// Mean shape/texture plus PCA-style bases; bases are row-major (3V x K)
// with xyz (or rgb) interleaved per vertex.
struct FaceBasis {
    std::size_t vertex_count = 0;
    std::vector<float> mean_shape;
    std::vector<float> mean_texture;
    std::vector<float> identity_basis;
    std::vector<float> expression_basis;
    std::vector<float> texture_basis;
    std::vector<Triangle> triangles;

    // Throws std::invalid_argument on any broken size or index contract.
    void validate() const;
};

struct BasisOptions {
    std::size_t rings = 20;     // latitude rings between front pole and rim
    std::size_t segments = 24;  // vertices per ring
    std::uint64_t seed = 2024;
    std::array<double, 3> semi_axes{0.45, 0.55, 0.35};
    double shape_column_scale = 0.05;  // column norm as a fraction of mean radius
    double texture_column_rms = 0.01;  // per-entry RMS of a unit texture column
};

// Half-ellipsoid face (front pole toward +z, flat back cap) with smooth
// random orthonormalized deformation bases. V = 2 + rings * segments.
FaceBasis generate_basis(const BasisOptions& options = {});

// Packed coefficient vector with named views.
template <typename T>
struct FaceCoefficients {
    std::vector<T> values = std::vector<T>(kCoefficientDim, T(0));

    FaceCoefficients() = default;
    explicit FaceCoefficients(std::span<const T> packed);

    std::span<T> alpha() { return {values.data() + kAlphaOffset, kIdentityDim}; }
    std::span<T> beta() { return {values.data() + kBetaOffset, kExpressionDim}; }
    std::span<T> delta() { return {values.data() + kDeltaOffset, kTextureDim}; }
    std::span<T> gamma() { return {values.data() + kGammaOffset, kIlluminationDim}; }
    std::span<T> rho() { return {values.data() + kRhoOffset, kPoseDim}; }
    std::span<const T> alpha() const { return {values.data() + kAlphaOffset, kIdentityDim}; }
    std::span<const T> beta() const { return {values.data() + kBetaOffset, kExpressionDim}; }
    std::span<const T> delta() const { return {values.data() + kDeltaOffset, kTextureDim}; }
    std::span<const T> gamma() const { return {values.data() + kGammaOffset, kIlluminationDim}; }
    std::span<const T> rho() const { return {values.data() + kRhoOffset, kPoseDim}; }
};

template <typename T>
using Mat3 = std::array<T, 9>;  // row-major

// S = mean_shape + B_id * alpha + B_exp * beta
template <typename T>
std::vector<T> assemble_shape(const FaceBasis& basis, std::span<const T> alpha, std::span<const T> beta);

// T̄ + B_t * delta before clamping.
template <typename T>
std::vector<T> assemble_texture_raw(const FaceBasis& basis, std::span<const T> delta);

// T̄ + B_t * delta clamped to [0, 1].
template <typename T>
std::vector<T> assemble_texture(const FaceBasis& basis, std::span<const T> delta);

// Intrinsic X-Y-Z Euler rotation: R = Rx(a0) * Ry(a1) * Rz(a2).
template <typename T>
Mat3<T> euler_rotation(std::span<const T> angles);

// v' = R(rho[0..2]) v + rho[3..5] for every xyz triple.
template <typename T>
std::vector<T> pose_transform(std::span<const T> vertices, std::span<const T> rho);

// Per-vertex unit normals: normalized sum of adjacent face cross products
// (an area-weighted average of face normals).
template <typename T>
std::vector<T> vertex_normals(const FaceBasis& basis, std::span<const T> vertices);

// Real orthonormal SH basis, bands 0-2, ordered
// Y00, Y1-1 (y), Y10 (z), Y11 (x), Y2-2 (xy), Y2-1 (yz), Y20, Y21 (xz), Y22.
template <typename T>
std::array<T, 9> sh_basis(const std::array<T, 3>& n);

// sum_b gamma_b * Y_b(n). Normals off unit length by more than 1e-3 are
// renormalized and counted.
template <typename T>
T sh_irradiance(std::array<T, 3> normal, std::span<const T> gamma);

std::uint64_t sh_renormalization_count();

template <typename T>
struct PosedMesh {
    std::vector<T> positions;  // world space, 3V
    std::vector<T> colors;     // shaded rgb in [0, 1], 3V
    std::vector<T> normals;    // world space unit normals, 3V
};

// Intermediates kept by shade_mesh for the vector-Jacobian product.
template <typename T>
struct ShadingTrace {
    std::vector<T> shape;          // model space
    std::vector<T> normal_sums;    // unnormalized model-space normals
    std::vector<T> model_normals;  // unit, model space
    std::vector<T> albedo_raw;     // pre-clamp
    std::vector<T> irradiance;     // per vertex
    std::vector<T> color_raw;      // albedo * max(irradiance, 0), pre-clamp
    Mat3<T> rotation{};
};

// assemble_shape -> pose -> normals -> texture -> SH shading.
template <typename T>
PosedMesh<T> shade_mesh(const FaceBasis& basis, const FaceCoefficients<T>& coeffs,
                        ShadingTrace<T>* trace = nullptr);

// Gradient of sum(color_grad . colors) w.r.t. the packed 239 coefficients.
// Translation does not affect colors, so its entries are always zero.
template <typename T>
std::vector<T> shade_mesh_vjp(const FaceBasis& basis, const FaceCoefficients<T>& coeffs,
                              const ShadingTrace<T>& trace, std::span<const T> color_grad);

}  // namespace facesr
