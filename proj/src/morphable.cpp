#include "facesr/morphable.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace facesr {

namespace {

std::atomic<std::uint64_t> g_sh_renormalizations{0};

constexpr double kSh0 = 0.28209479177387814;   // 1 / (2 sqrt(pi))
constexpr double kSh1 = 0.48860251190291992;   // sqrt(3 / (4 pi))
constexpr double kSh2 = 1.09254843059207907;   // sqrt(15 / (4 pi))
constexpr double kSh20 = 0.31539156525252005;  // sqrt(5 / (16 pi))
constexpr double kSh22 = 0.54627421529603959;  // sqrt(15 / (16 pi))

void check_dim(const char* what, std::size_t got, std::size_t want) {
    if (got != want) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(want) + " values, got " +
                                    std::to_string(got));
    }
}

// out[i] += sum_k basis[i * cols + k] * coeff[k]
template <typename T>
void add_basis_product(std::span<const float> basis, std::size_t cols, std::span<const T> coeff,
                       std::vector<T>& out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* row = basis.data() + i * cols;
        T s = 0;
        for (std::size_t k = 0; k < cols; ++k) s += static_cast<T>(row[k]) * coeff[k];
        out[i] += s;
    }
}

// grad_coeff[k] += sum_i basis[i * cols + k] * grad_out[i]
template <typename T>
void add_basis_transpose_product(std::span<const float> basis, std::size_t cols, std::span<const T> grad_out,
                                 T* grad_coeff) {
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const T g = grad_out[i];
        if (g == T(0)) continue;
        const float* row = basis.data() + i * cols;
        for (std::size_t k = 0; k < cols; ++k) grad_coeff[k] += static_cast<T>(row[k]) * g;
    }
}

template <typename T>
Mat3<T> matmul(const Mat3<T>& a, const Mat3<T>& b) {
    Mat3<T> c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            T s = 0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = s;
        }
    return c;
}

template <typename T>
Mat3<T> rot_x(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}
template <typename T>
Mat3<T> rot_y(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}
template <typename T>
Mat3<T> rot_z(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}
template <typename T>
Mat3<T> drot_x(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {0, 0, 0, 0, -s, -c, 0, c, -s};
}
template <typename T>
Mat3<T> drot_y(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {-s, 0, c, 0, 0, 0, -c, 0, -s};
}
template <typename T>
Mat3<T> drot_z(T a) {
    const T c = std::cos(a), s = std::sin(a);
    return {-s, -c, 0, c, -s, 0, 0, 0, 0};
}

template <typename T>
std::array<T, 3> cross(const std::array<T, 3>& a, const std::array<T, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

template <typename T>
std::array<T, 3> load3(std::span<const T> v, std::size_t i) {
    return {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
}

// d/dn of each SH basis function, used by the shading VJP.
template <typename T>
std::array<std::array<T, 3>, 9> sh_gradients(const std::array<T, 3>& n) {
    const T x = n[0], y = n[1], z = n[2];
    const T c1 = static_cast<T>(kSh1), c2 = static_cast<T>(kSh2);
    const T c20 = static_cast<T>(kSh20), c22 = static_cast<T>(kSh22);
    return {{{0, 0, 0},
             {0, c1, 0},
             {0, 0, c1},
             {c1, 0, 0},
             {c2 * y, c2 * x, 0},
             {0, c2 * z, c2 * y},
             {0, 0, 6 * c20 * z},
             {c2 * z, 0, c2 * x},
             {2 * c22 * x, -2 * c22 * y, 0}}};
}

// Smooth random vector field sampled at the mean-shape vertices: a few
// low-frequency sinusoids per output component.
std::vector<double> smooth_field(const std::vector<double>& points, std::mt19937_64& rng, double frequency) {
    std::normal_distribution<double> freq(0.0, frequency);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> amp(0.0, 1.0);
    const std::size_t v = points.size() / 3;
    std::vector<double> field(points.size(), 0.0);
    for (int comp = 0; comp < 3; ++comp) {
        for (int term = 0; term < 3; ++term) {
            const double kx = freq(rng), ky = freq(rng), kz = freq(rng);
            const double ph = phase(rng), a = amp(rng);
            for (std::size_t i = 0; i < v; ++i) {
                field[3 * i + comp] +=
                    a * std::sin(kx * points[3 * i] + ky * points[3 * i + 1] + kz * points[3 * i + 2] + ph);
            }
        }
    }
    return field;
}

// Modified Gram-Schmidt with one re-orthogonalization pass; columns are
// rescaled to `norm` and written row-major (rows x cols).
std::vector<float> orthonormal_basis(std::vector<std::vector<double>> columns, double norm) {
    const std::size_t cols = columns.size();
    const std::size_t rows = columns.front().size();
    for (std::size_t j = 0; j < cols; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < j; ++i) {
                double dot = 0;
                for (std::size_t r = 0; r < rows; ++r) dot += columns[i][r] * columns[j][r];
                for (std::size_t r = 0; r < rows; ++r) columns[j][r] -= dot * columns[i][r];
            }
        }
        double len = 0;
        for (double x : columns[j]) len += x * x;
        len = std::sqrt(len);
        if (len < 1e-9) throw std::runtime_error("basis generation: degenerate column " + std::to_string(j));
        for (double& x : columns[j]) x /= len;
    }
    std::vector<float> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = static_cast<float>(columns[j][r] * norm);
    return out;
}

double gaussian_bump(double x, double y, double cx, double cy, double sx, double sy) {
    const double dx = (x - cx) / sx, dy = (y - cy) / sy;
    return std::exp(-(dx * dx + dy * dy));
}

}  // namespace

void FaceBasis::validate() const {
    const std::size_t n = 3 * vertex_count;
    if (vertex_count == 0) throw std::invalid_argument("face basis: no vertices");
    check_dim("mean_shape", mean_shape.size(), n);
    check_dim("mean_texture", mean_texture.size(), n);
    check_dim("identity_basis", identity_basis.size(), n * kIdentityDim);
    check_dim("expression_basis", expression_basis.size(), n * kExpressionDim);
    check_dim("texture_basis", texture_basis.size(), n * kTextureDim);
    if (triangles.empty()) throw std::invalid_argument("face basis: no triangles");
    for (std::size_t t = 0; t < triangles.size(); ++t)
        for (auto idx : triangles[t])
            if (idx >= vertex_count) {
                throw std::invalid_argument("face basis: triangle " + std::to_string(t) + " references vertex " +
                                            std::to_string(idx) + " >= " + std::to_string(vertex_count));
            }
}

FaceBasis generate_basis(const BasisOptions& options) {
    if (options.rings < 2 || options.segments < 3) {
        throw std::invalid_argument("basis generation: need rings >= 2 and segments >= 3");
    }
    const auto [ax, ay, az] = options.semi_axes;
    const std::size_t rings = options.rings, segs = options.segments;
    FaceBasis basis;
    basis.vertex_count = 2 + rings * segs;
    const std::size_t v = basis.vertex_count;

    std::vector<double> pts;
    pts.reserve(3 * v);
    pts.insert(pts.end(), {0.0, 0.0, az});
    for (std::size_t r = 1; r <= rings; ++r) {
        const double theta = 0.5 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(rings);
        for (std::size_t s = 0; s < segs; ++s) {
            const double phi = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(segs);
            pts.insert(pts.end(), {ax * std::sin(theta) * std::cos(phi), ay * std::sin(theta) * std::sin(phi),
                                   az * std::cos(theta)});
        }
    }
    pts.insert(pts.end(), {0.0, 0.0, 0.0});

    // Facial relief on the front surface: nose ridge, eye sockets, brow.
    for (std::size_t i = 0; i + 1 < v; ++i) {
        const double x = pts[3 * i], y = pts[3 * i + 1];
        double dz = 0.12 * gaussian_bump(x, y, 0.0, -0.02, 0.06, 0.14);
        dz -= 0.035 * gaussian_bump(x, y, 0.16, 0.12, 0.08, 0.05);
        dz -= 0.035 * gaussian_bump(x, y, -0.16, 0.12, 0.08, 0.05);
        dz += 0.02 * gaussian_bump(x, y, 0.0, -0.27, 0.12, 0.04);
        pts[3 * i + 2] += dz * (pts[3 * i + 2] / az);
    }

    auto ring_vertex = [&](std::size_t r, std::size_t s) {
        return static_cast<std::uint32_t>(1 + (r - 1) * segs + (s % segs));
    };
    for (std::size_t s = 0; s < segs; ++s) basis.triangles.push_back({0, ring_vertex(1, s), ring_vertex(1, s + 1)});
    for (std::size_t r = 1; r < rings; ++r)
        for (std::size_t s = 0; s < segs; ++s) {
            basis.triangles.push_back({ring_vertex(r, s), ring_vertex(r + 1, s), ring_vertex(r + 1, s + 1)});
            basis.triangles.push_back({ring_vertex(r, s), ring_vertex(r + 1, s + 1), ring_vertex(r, s + 1)});
        }
    const auto back = static_cast<std::uint32_t>(v - 1);
    for (std::size_t s = 0; s < segs; ++s)
        basis.triangles.push_back({back, ring_vertex(rings, s + 1), ring_vertex(rings, s)});

    basis.mean_shape.assign(pts.begin(), pts.end());

    basis.mean_texture.resize(3 * v);
    for (std::size_t i = 0; i < v; ++i) {
        const double x = pts[3 * i], y = pts[3 * i + 1];
        std::array<double, 3> rgb{0.80, 0.60, 0.50};
        const double lips = gaussian_bump(x, y, 0.0, -0.27, 0.10, 0.035);
        const double eyes = std::max(gaussian_bump(x, y, 0.16, 0.12, 0.05, 0.03),
                                     gaussian_bump(x, y, -0.16, 0.12, 0.05, 0.03));
        const double brows = std::max(gaussian_bump(x, y, 0.16, 0.22, 0.08, 0.02),
                                      gaussian_bump(x, y, -0.16, 0.22, 0.08, 0.02));
        const std::array<double, 3> lip_rgb{0.70, 0.35, 0.35}, eye_rgb{0.25, 0.20, 0.18}, brow_rgb{0.35, 0.25, 0.20};
        for (int c = 0; c < 3; ++c) {
            rgb[c] += lips * (lip_rgb[c] - rgb[c]);
            rgb[c] += eyes * (eye_rgb[c] - rgb[c]);
            rgb[c] += brows * (brow_rgb[c] - rgb[c]);
            basis.mean_texture[3 * i + c] = static_cast<float>(rgb[c]);
        }
    }

    double radius = 0;
    for (std::size_t i = 0; i < v; ++i)
        radius += std::sqrt(pts[3 * i] * pts[3 * i] + pts[3 * i + 1] * pts[3 * i + 1] + pts[3 * i + 2] * pts[3 * i + 2]);
    radius /= static_cast<double>(v);

    std::mt19937_64 rng(options.seed);
    auto fields = [&](std::size_t count, double freq) {
        std::vector<std::vector<double>> cols;
        for (std::size_t k = 0; k < count; ++k) cols.push_back(smooth_field(pts, rng, freq));
        return cols;
    };
    basis.identity_basis = orthonormal_basis(fields(kIdentityDim, 4.0), options.shape_column_scale * radius);
    basis.expression_basis = orthonormal_basis(fields(kExpressionDim, 5.0), options.shape_column_scale * radius);
    basis.texture_basis = orthonormal_basis(fields(kTextureDim, 6.0),
                                            options.texture_column_rms * std::sqrt(static_cast<double>(3 * v)));
    basis.validate();
    return basis;
}

template <typename T>
FaceCoefficients<T>::FaceCoefficients(std::span<const T> packed) : values(packed.begin(), packed.end()) {
    check_dim("face coefficients", packed.size(), kCoefficientDim);
}

template <typename T>
std::vector<T> assemble_shape(const FaceBasis& basis, std::span<const T> alpha, std::span<const T> beta) {
    check_dim("alpha", alpha.size(), kIdentityDim);
    check_dim("beta", beta.size(), kExpressionDim);
    check_dim("mean_shape", basis.mean_shape.size(), 3 * basis.vertex_count);
    std::vector<T> out(basis.mean_shape.begin(), basis.mean_shape.end());
    add_basis_product<T>(basis.identity_basis, kIdentityDim, alpha, out);
    add_basis_product<T>(basis.expression_basis, kExpressionDim, beta, out);
    return out;
}

template <typename T>
std::vector<T> assemble_texture_raw(const FaceBasis& basis, std::span<const T> delta) {
    check_dim("delta", delta.size(), kTextureDim);
    check_dim("mean_texture", basis.mean_texture.size(), 3 * basis.vertex_count);
    std::vector<T> out(basis.mean_texture.begin(), basis.mean_texture.end());
    add_basis_product<T>(basis.texture_basis, kTextureDim, delta, out);
    return out;
}

template <typename T>
std::vector<T> assemble_texture(const FaceBasis& basis, std::span<const T> delta) {
    auto out = assemble_texture_raw<T>(basis, delta);
    for (auto& x : out) x = std::clamp(x, T(0), T(1));
    return out;
}

template <typename T>
Mat3<T> euler_rotation(std::span<const T> angles) {
    if (angles.size() < 3) throw std::invalid_argument("euler_rotation: need 3 angles");
    return matmul(matmul(rot_x(angles[0]), rot_y(angles[1])), rot_z(angles[2]));
}

template <typename T>
std::vector<T> pose_transform(std::span<const T> vertices, std::span<const T> rho) {
    check_dim("rho", rho.size(), kPoseDim);
    if (vertices.size() % 3 != 0) throw std::invalid_argument("pose_transform: vertex buffer not xyz triples");
    for (T r : rho)
        if (!std::isfinite(r)) throw std::invalid_argument("pose_transform: non-finite pose");
    const Mat3<T> rot = euler_rotation(rho);
    std::vector<T> out(vertices.size());
    for (std::size_t i = 0; i < vertices.size(); i += 3) {
        for (int r = 0; r < 3; ++r) {
            out[i + r] = rot[r * 3] * vertices[i] + rot[r * 3 + 1] * vertices[i + 1] + rot[r * 3 + 2] * vertices[i + 2] +
                         rho[3 + r];
        }
    }
    return out;
}

namespace {

template <typename T>
std::vector<T> normal_sums(const FaceBasis& basis, std::span<const T> vertices) {
    std::vector<T> sums(vertices.size(), T(0));
    for (const auto& tri : basis.triangles) {
        const auto p0 = load3(vertices, tri[0]), p1 = load3(vertices, tri[1]), p2 = load3(vertices, tri[2]);
        const std::array<T, 3> e1{p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
        const std::array<T, 3> e2{p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
        const auto c = cross(e1, e2);
        for (auto idx : tri)
            for (int k = 0; k < 3; ++k) sums[3 * idx + k] += c[k];
    }
    return sums;
}

template <typename T>
std::vector<T> normalize_rows(const std::vector<T>& sums) {
    std::vector<T> out(sums.size());
    for (std::size_t i = 0; i < sums.size(); i += 3) {
        const T len = std::sqrt(sums[i] * sums[i] + sums[i + 1] * sums[i + 1] + sums[i + 2] * sums[i + 2]);
        const T inv = len > T(0) ? T(1) / len : T(0);
        for (int k = 0; k < 3; ++k) out[i + k] = sums[i + k] * inv;
        if (len == T(0)) out[i + 2] = T(1);
    }
    return out;
}

}  // namespace

template <typename T>
std::vector<T> vertex_normals(const FaceBasis& basis, std::span<const T> vertices) {
    return normalize_rows(normal_sums<T>(basis, vertices));
}

template <typename T>
std::array<T, 9> sh_basis(const std::array<T, 3>& n) {
    const T x = n[0], y = n[1], z = n[2];
    return {static_cast<T>(kSh0),
            static_cast<T>(kSh1) * y,
            static_cast<T>(kSh1) * z,
            static_cast<T>(kSh1) * x,
            static_cast<T>(kSh2) * x * y,
            static_cast<T>(kSh2) * y * z,
            static_cast<T>(kSh20) * (3 * z * z - 1),
            static_cast<T>(kSh2) * x * z,
            static_cast<T>(kSh22) * (x * x - y * y)};
}

template <typename T>
T sh_irradiance(std::array<T, 3> normal, std::span<const T> gamma) {
    check_dim("gamma", gamma.size(), kIlluminationDim);
    const T len = std::sqrt(normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]);
    if (std::abs(len - T(1)) > T(1e-3)) {
        g_sh_renormalizations.fetch_add(1, std::memory_order_relaxed);
        if (len > T(0))
            for (auto& c : normal) c /= len;
    }
    const auto y = sh_basis(normal);
    T e = 0;
    for (std::size_t b = 0; b < 9; ++b) e += gamma[b] * y[b];
    return e;
}

std::uint64_t sh_renormalization_count() { return g_sh_renormalizations.load(); }

template <typename T>
PosedMesh<T> shade_mesh(const FaceBasis& basis, const FaceCoefficients<T>& coeffs, ShadingTrace<T>* trace) {
    ShadingTrace<T> local;
    ShadingTrace<T>& tr = trace ? *trace : local;
    const std::size_t v = basis.vertex_count;

    tr.shape = assemble_shape<T>(basis, coeffs.alpha(), coeffs.beta());
    tr.rotation = euler_rotation(coeffs.rho());
    tr.normal_sums = normal_sums<T>(basis, tr.shape);
    tr.model_normals = normalize_rows(tr.normal_sums);
    tr.albedo_raw = assemble_texture_raw<T>(basis, coeffs.delta());

    PosedMesh<T> mesh;
    mesh.positions = pose_transform<T>(tr.shape, coeffs.rho());
    mesh.normals.resize(3 * v);
    mesh.colors.resize(3 * v);
    tr.irradiance.resize(v);
    tr.color_raw.resize(3 * v);
    const auto gamma = coeffs.gamma();
    const auto& rot = tr.rotation;
    for (std::size_t i = 0; i < v; ++i) {
        const auto n = load3<T>(tr.model_normals, i);
        std::array<T, 3> wn{};
        for (int r = 0; r < 3; ++r) wn[r] = rot[r * 3] * n[0] + rot[r * 3 + 1] * n[1] + rot[r * 3 + 2] * n[2];
        for (int r = 0; r < 3; ++r) mesh.normals[3 * i + r] = wn[r];
        const T e = sh_irradiance<T>(wn, gamma);
        tr.irradiance[i] = e;
        const T lit = std::max(e, T(0));
        for (int c = 0; c < 3; ++c) {
            const T albedo = std::clamp(tr.albedo_raw[3 * i + c], T(0), T(1));
            tr.color_raw[3 * i + c] = albedo * lit;
            mesh.colors[3 * i + c] = std::clamp(albedo * lit, T(0), T(1));
        }
    }
    return mesh;
}

template <typename T>
std::vector<T> shade_mesh_vjp(const FaceBasis& basis, const FaceCoefficients<T>& coeffs,
                              const ShadingTrace<T>& trace, std::span<const T> color_grad) {
    const std::size_t v = basis.vertex_count;
    check_dim("color gradient", color_grad.size(), 3 * v);
    std::vector<T> grad(kCoefficientDim, T(0));
    const auto gamma = coeffs.gamma();
    const auto& rot = trace.rotation;

    std::vector<T> g_albedo(3 * v, T(0));
    std::vector<T> g_model_normal(3 * v, T(0));
    Mat3<T> g_rot{};
    for (std::size_t i = 0; i < v; ++i) {
        const T e = trace.irradiance[i];
        const T lit = std::max(e, T(0));
        T g_e = 0;
        for (int c = 0; c < 3; ++c) {
            const T raw = trace.color_raw[3 * i + c];
            if (raw > T(1)) continue;  // saturated by the output clamp
            const T g = color_grad[3 * i + c];
            const T a_raw = trace.albedo_raw[3 * i + c];
            const T albedo = std::clamp(a_raw, T(0), T(1));
            if (a_raw >= T(0) && a_raw <= T(1)) g_albedo[3 * i + c] = g * lit;
            if (e > T(0)) g_e += g * albedo;
        }
        if (g_e == T(0)) continue;
        const auto n = load3<T>(trace.model_normals, i);
        std::array<T, 3> wn{};
        for (int r = 0; r < 3; ++r) wn[r] = rot[r * 3] * n[0] + rot[r * 3 + 1] * n[1] + rot[r * 3 + 2] * n[2];
        const auto y = sh_basis(wn);
        const auto dy = sh_gradients(wn);
        std::array<T, 3> g_wn{0, 0, 0};
        for (std::size_t b = 0; b < 9; ++b) {
            grad[kGammaOffset + b] += g_e * y[b];
            for (int k = 0; k < 3; ++k) g_wn[k] += g_e * gamma[b] * dy[b][k];
        }
        // wn = R n
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                g_rot[r * 3 + c] += g_wn[r] * n[c];
                g_model_normal[3 * i + c] += rot[r * 3 + c] * g_wn[r];
            }
    }

    add_basis_transpose_product<T>(basis.texture_basis, kTextureDim, g_albedo, grad.data() + kDeltaOffset);

    // n = m / |m|
    std::vector<T> g_sum(3 * v, T(0));
    for (std::size_t i = 0; i < v; ++i) {
        const auto m = load3<T>(trace.normal_sums, i);
        const T len = std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
        if (len == T(0)) continue;
        const auto n = load3<T>(trace.model_normals, i);
        const auto gn = load3<T>(g_model_normal, i);
        const T dot = n[0] * gn[0] + n[1] * gn[1] + n[2] * gn[2];
        for (int k = 0; k < 3; ++k) g_sum[3 * i + k] = (gn[k] - n[k] * dot) / len;
    }

    // m_v = sum over adjacent faces of (p1 - p0) x (p2 - p0)
    std::vector<T> g_shape(3 * v, T(0));
    for (const auto& tri : basis.triangles) {
        std::array<T, 3> gc{0, 0, 0};
        for (auto idx : tri)
            for (int k = 0; k < 3; ++k) gc[k] += g_sum[3 * idx + k];
        const auto p0 = load3<T>(trace.shape, tri[0]), p1 = load3<T>(trace.shape, tri[1]),
                   p2 = load3<T>(trace.shape, tri[2]);
        const std::array<T, 3> e1{p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
        const std::array<T, 3> e2{p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
        const auto g_e1 = cross(e2, gc);
        const auto g_e2 = cross(gc, e1);
        for (int k = 0; k < 3; ++k) {
            g_shape[3 * tri[1] + k] += g_e1[k];
            g_shape[3 * tri[2] + k] += g_e2[k];
            g_shape[3 * tri[0] + k] -= g_e1[k] + g_e2[k];
        }
    }
    add_basis_transpose_product<T>(basis.identity_basis, kIdentityDim, g_shape, grad.data() + kAlphaOffset);
    add_basis_transpose_product<T>(basis.expression_basis, kExpressionDim, g_shape, grad.data() + kBetaOffset);

    const auto rho = coeffs.rho();
    const Mat3<T> rx = rot_x(rho[0]), ry = rot_y(rho[1]), rz = rot_z(rho[2]);
    const Mat3<T> d0 = matmul(matmul(drot_x(rho[0]), ry), rz);
    const Mat3<T> d1 = matmul(matmul(rx, drot_y(rho[1])), rz);
    const Mat3<T> d2 = matmul(matmul(rx, ry), drot_z(rho[2]));
    for (int k = 0; k < 9; ++k) {
        grad[kRhoOffset + 0] += g_rot[k] * d0[k];
        grad[kRhoOffset + 1] += g_rot[k] * d1[k];
        grad[kRhoOffset + 2] += g_rot[k] * d2[k];
    }
    return grad;
}

#define FACESR_INSTANTIATE_MORPHABLE(T)                                                                   \
    template struct FaceCoefficients<T>;                                                                 \
    template std::vector<T> assemble_shape(const FaceBasis&, std::span<const T>, std::span<const T>);   \
    template std::vector<T> assemble_texture_raw(const FaceBasis&, std::span<const T>);                  \
    template std::vector<T> assemble_texture(const FaceBasis&, std::span<const T>);                      \
    template Mat3<T> euler_rotation(std::span<const T>);                                                 \
    template std::vector<T> pose_transform(std::span<const T>, std::span<const T>);                      \
    template std::vector<T> vertex_normals(const FaceBasis&, std::span<const T>);                        \
    template std::array<T, 9> sh_basis(const std::array<T, 3>&);                                         \
    template T sh_irradiance(std::array<T, 3>, std::span<const T>);                                      \
    template PosedMesh<T> shade_mesh(const FaceBasis&, const FaceCoefficients<T>&, ShadingTrace<T>*);    \
    template std::vector<T> shade_mesh_vjp(const FaceBasis&, const FaceCoefficients<T>&,                 \
                                           const ShadingTrace<T>&, std::span<const T>);

FACESR_INSTANTIATE_MORPHABLE(float)
FACESR_INSTANTIATE_MORPHABLE(double)

#undef FACESR_INSTANTIATE_MORPHABLE

}  // namespace facesr
