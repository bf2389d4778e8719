#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "facesr/morphable.hpp"
#include "facesr/tensor.hpp"

namespace facesr {

// Pinhole camera on the +z axis at `eye_z`, looking toward -z. Image x grows
// right and y grows down; pixel centers sit at (x + 0.5, y + 0.5).
struct Camera {
    double focal = 1015.0;
    double cx = 64.0;
    double cy = 64.0;
    int width = 128;
    int height = 128;
    double eye_z = 12.0;
    double near = 1e-3;

    void validate() const;
    static Camera centered(int size, double focal = 1015.0);
};

template <typename T>
struct RenderOutput {
    int width = 0;
    int height = 0;
    std::vector<T> rgb;                  // H x W x 3, background 0
    std::vector<std::uint8_t> mask;      // H x W
    std::vector<T> depth;                // H x W, +inf where uncovered
    std::vector<std::int32_t> triangle;  // winning triangle per pixel, -1 if none
    std::vector<T> barycentric;          // H x W x 3 screen-space weights
    std::size_t degenerate_triangles = 0;
    std::size_t culled_triangles = 0;    // behind the near plane

    std::size_t covered_pixels() const;
};

// Z-buffered rasterization with screen-space barycentric color blending.
// Nearest depth wins; ties keep the lower triangle index; pixel centers on
// an edge belong to the triangle only if the edge is a top or left edge.
template <typename T>
RenderOutput<T> rasterize(std::span<const Triangle> triangles, const PosedMesh<T>& mesh, const Camera& camera);

template <typename T>
struct RenderTrace {
    ShadingTrace<T> shading;
};

template <typename T>
RenderOutput<T> render(const FaceBasis& basis, const FaceCoefficients<T>& coeffs, const Camera& camera,
                       RenderTrace<T>* trace = nullptr);

// Gradient of sum(rgb_grad . rgb) w.r.t. the coefficients, with visibility
// (coverage, winning triangle and barycentric weights) held fixed.
template <typename T>
std::vector<T> render_vjp(const FaceBasis& basis, const FaceCoefficients<T>& coeffs, const RenderTrace<T>& trace,
                          const RenderOutput<T>& output, std::span<const T> rgb_grad);

template <typename T>
struct RenderedBatch {
    BasicTensor<T> images;                        // [N, 3, H, W]
    std::vector<std::vector<std::uint8_t>> masks;  // per sample, H x W
};

// Differentiable batch rendering of packed coefficients [N, 239].
template <typename T>
RenderedBatch<T> render_batch(const FaceBasis& basis, const Camera& camera, const BasicTensor<T>& coefficients);

}  // namespace facesr
