#include "facesr/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace facesr {

void Camera::validate() const {
    if (!(focal > 0)) throw std::invalid_argument("camera: focal must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: image size must be positive");
    if (cx < 0 || cx > width || cy < 0 || cy > height) {
        throw std::invalid_argument("camera: principal point outside the image");
    }
}

Camera Camera::centered(int size, double focal) {
    Camera cam;
    cam.width = cam.height = size;
    cam.cx = cam.cy = size / 2.0;
    cam.focal = focal;
    return cam;
}

template <typename T>
std::size_t RenderOutput<T>::covered_pixels() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

struct ScreenVertex {
    double x, y, depth;
    bool valid;
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// With positive-area orientation in y-down pixel space, these directions are
// the top and left edges.
bool top_left(double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    return dy < 0 || (dy == 0 && dx > 0);
}

}  // namespace

template <typename T>
RenderOutput<T> rasterize(std::span<const Triangle> triangles, const PosedMesh<T>& mesh, const Camera& camera) {
    camera.validate();
    if (mesh.positions.empty() || triangles.empty()) throw std::invalid_argument("rasterize: empty mesh");
    const std::size_t v = mesh.positions.size() / 3;
    if (mesh.colors.size() != 3 * v) throw std::invalid_argument("rasterize: color buffer size mismatch");

    RenderOutput<T> out;
    out.width = camera.width;
    out.height = camera.height;
    const std::size_t pixels = static_cast<std::size_t>(camera.width) * camera.height;
    out.rgb.assign(3 * pixels, T(0));
    out.mask.assign(pixels, 0);
    out.depth.assign(pixels, std::numeric_limits<T>::infinity());
    out.triangle.assign(pixels, -1);
    out.barycentric.assign(3 * pixels, T(0));
    std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());

    std::vector<ScreenVertex> sv(v);
    for (std::size_t i = 0; i < v; ++i) {
        const double x = mesh.positions[3 * i], y = mesh.positions[3 * i + 1], z = mesh.positions[3 * i + 2];
        const double d = camera.eye_z - z;
        if (!(d > camera.near) || !std::isfinite(d)) {
            sv[i] = {0, 0, d, false};
            continue;
        }
        sv[i] = {camera.cx + camera.focal * x / d, camera.cy - camera.focal * y / d, d, true};
    }

    for (std::size_t t = 0; t < triangles.size(); ++t) {
        std::array<std::uint32_t, 3> idx = triangles[t];
        for (auto i : idx)
            if (i >= v) throw std::invalid_argument("rasterize: triangle " + std::to_string(t) + " index out of range");
        if (!sv[idx[0]].valid || !sv[idx[1]].valid || !sv[idx[2]].valid) {
            ++out.culled_triangles;
            continue;
        }
        // Local slots 0..2 keep the triangle's own vertex order for the
        // stored barycentrics; `order` may swap two of them for orientation.
        std::array<int, 3> order{0, 1, 2};
        const ScreenVertex* p[3] = {&sv[idx[0]], &sv[idx[1]], &sv[idx[2]]};
        double area = edge(p[0]->x, p[0]->y, p[1]->x, p[1]->y, p[2]->x, p[2]->y);
        if (!(std::abs(area) > 1e-12)) {
            ++out.degenerate_triangles;
            continue;
        }
        if (area < 0) {
            std::swap(order[1], order[2]);
            area = -area;
        }
        const ScreenVertex& a = *p[order[0]];
        const ScreenVertex& b = *p[order[1]];
        const ScreenVertex& c = *p[order[2]];

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}) - 0.5)));
        const int x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}) - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}) - 0.5)));
        const int y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}) - 0.5)));
        if (x0 > x1 || y0 > y1) continue;

        const bool tl_a = top_left(b.x, b.y, c.x, c.y);  // edge opposite a
        const bool tl_b = top_left(c.x, c.y, a.x, a.y);
        const bool tl_c = top_left(a.x, a.y, b.x, b.y);

        for (int py = y0; py <= y1; ++py) {
            const double sy = py + 0.5;
            for (int px = x0; px <= x1; ++px) {
                const double sx = px + 0.5;
                const double wa = edge(b.x, b.y, c.x, c.y, sx, sy);
                const double wb = edge(c.x, c.y, a.x, a.y, sx, sy);
                const double wc = edge(a.x, a.y, b.x, b.y, sx, sy);
                if (wa < 0 || wb < 0 || wc < 0) continue;
                if ((wa == 0 && !tl_a) || (wb == 0 && !tl_b) || (wc == 0 && !tl_c)) continue;
                std::array<double, 3> bary{};
                bary[order[0]] = wa / area;
                bary[order[1]] = wb / area;
                bary[order[2]] = wc / area;
                double inv_depth = 0;
                for (int k = 0; k < 3; ++k) inv_depth += bary[k] / p[k]->depth;
                const double depth = 1.0 / inv_depth;
                const std::size_t pix = static_cast<std::size_t>(py) * camera.width + px;
                if (!(depth < zbuf[pix])) continue;
                zbuf[pix] = depth;
                out.depth[pix] = static_cast<T>(depth);
                out.mask[pix] = 1;
                out.triangle[pix] = static_cast<std::int32_t>(t);
                for (int ch = 0; ch < 3; ++ch) {
                    T col = 0;
                    for (int k = 0; k < 3; ++k) col += static_cast<T>(bary[k]) * mesh.colors[3 * idx[k] + ch];
                    out.rgb[3 * pix + ch] = col;
                }
                for (int k = 0; k < 3; ++k) out.barycentric[3 * pix + k] = static_cast<T>(bary[k]);
            }
        }
    }
    return out;
}

template <typename T>
RenderOutput<T> render(const FaceBasis& basis, const FaceCoefficients<T>& coeffs, const Camera& camera,
                       RenderTrace<T>* trace) {
    if (coeffs.values.size() != kCoefficientDim) {
        throw std::invalid_argument("render: expected " + std::to_string(kCoefficientDim) + " coefficients");
    }
    const PosedMesh<T> mesh = shade_mesh(basis, coeffs, trace ? &trace->shading : nullptr);
    return rasterize<T>(basis.triangles, mesh, camera);
}

template <typename T>
std::vector<T> render_vjp(const FaceBasis& basis, const FaceCoefficients<T>& coeffs, const RenderTrace<T>& trace,
                          const RenderOutput<T>& output, std::span<const T> rgb_grad) {
    if (rgb_grad.size() != output.rgb.size()) throw std::invalid_argument("render_vjp: gradient size mismatch");
    std::vector<T> color_grad(3 * basis.vertex_count, T(0));
    const std::size_t pixels = output.mask.size();
    for (std::size_t pix = 0; pix < pixels; ++pix) {
        const std::int32_t t = output.triangle[pix];
        if (t < 0) continue;
        const auto& tri = basis.triangles[static_cast<std::size_t>(t)];
        for (int k = 0; k < 3; ++k) {
            const T w = output.barycentric[3 * pix + k];
            for (int ch = 0; ch < 3; ++ch) color_grad[3 * tri[k] + ch] += w * rgb_grad[3 * pix + ch];
        }
    }
    return shade_mesh_vjp<T>(basis, coeffs, trace.shading, color_grad);
}

template <typename T>
RenderedBatch<T> render_batch(const FaceBasis& basis, const Camera& camera, const BasicTensor<T>& coefficients) {
    if (coefficients.rank() != 2 || coefficients.dim(1) != kCoefficientDim) {
        throw DimensionError("render_batch: coefficients must be [N, " + std::to_string(kCoefficientDim) + "], got " +
                             shape_str(coefficients.shape()));
    }
    const std::size_t n = coefficients.dim(0);
    const std::size_t h = static_cast<std::size_t>(camera.height), w = static_cast<std::size_t>(camera.width);
    const std::size_t plane = h * w;

    struct Saved {
        std::vector<FaceCoefficients<T>> coeffs;
        std::vector<RenderTrace<T>> traces;
        std::vector<RenderOutput<T>> outputs;
    };
    auto saved = std::make_shared<Saved>();
    RenderedBatch<T> batch;
    std::vector<T> images(n * 3 * plane);
    for (std::size_t i = 0; i < n; ++i) {
        FaceCoefficients<T> c(coefficients.data().subspan(i * kCoefficientDim, kCoefficientDim));
        RenderTrace<T> trace;
        RenderOutput<T> out = render(basis, c, camera, &trace);
        for (std::size_t pix = 0; pix < plane; ++pix)
            for (std::size_t ch = 0; ch < 3; ++ch) images[(i * 3 + ch) * plane + pix] = out.rgb[3 * pix + ch];
        batch.masks.push_back(out.mask);
        saved->coeffs.push_back(std::move(c));
        saved->traces.push_back(std::move(trace));
        saved->outputs.push_back(std::move(out));
    }

    const FaceBasis* basis_ptr = &basis;
    batch.images = BasicTensor<T>::make_result(
        {n, 3, h, w}, std::move(images), {coefficients},
        [coefficients, saved, basis_ptr, n, plane](TensorNode<T>& self) {
            std::vector<T> grad(n * kCoefficientDim);
            std::vector<T> rgb_grad(3 * plane);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t pix = 0; pix < plane; ++pix)
                    for (std::size_t ch = 0; ch < 3; ++ch) rgb_grad[3 * pix + ch] = self.grad[(i * 3 + ch) * plane + pix];
                const auto g = render_vjp<T>(*basis_ptr, saved->coeffs[i], saved->traces[i], saved->outputs[i], rgb_grad);
                std::copy(g.begin(), g.end(), grad.begin() + i * kCoefficientDim);
            }
            accumulate_grad(coefficients, std::span<const T>(grad));
        });
    return batch;
}

template struct RenderOutput<float>;
template struct RenderOutput<double>;
template RenderOutput<float> rasterize(std::span<const Triangle>, const PosedMesh<float>&, const Camera&);
template RenderOutput<double> rasterize(std::span<const Triangle>, const PosedMesh<double>&, const Camera&);
template RenderOutput<float> render(const FaceBasis&, const FaceCoefficients<float>&, const Camera&, RenderTrace<float>*);
template RenderOutput<double> render(const FaceBasis&, const FaceCoefficients<double>&, const Camera&,
                                     RenderTrace<double>*);
template std::vector<float> render_vjp(const FaceBasis&, const FaceCoefficients<float>&, const RenderTrace<float>&,
                                       const RenderOutput<float>&, std::span<const float>);
template std::vector<double> render_vjp(const FaceBasis&, const FaceCoefficients<double>&, const RenderTrace<double>&,
                                        const RenderOutput<double>&, std::span<const double>);
template RenderedBatch<float> render_batch(const FaceBasis&, const Camera&, const BasicTensor<float>&);
template RenderedBatch<double> render_batch(const FaceBasis&, const Camera&, const BasicTensor<double>&);

}  // namespace facesr
