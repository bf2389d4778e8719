#include "facesr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace facesr {

namespace {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A^T * B with A stored [K,M]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[p * m + i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A * B^T with B stored [N,K]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                s0 += arow[p] * brow[p];
                s1 += arow[p + 1] * brow[p + 1];
                s2 += arow[p + 2] * brow[p + 2];
                s3 += arow[p + 3] * brow[p + 3];
            }
            for (; p < k; ++p) s0 += arow[p] * brow[p];
            c[i * n + j] += (s0 + s1) + (s2 + s3);
        }
    }
}

struct ConvGeometry {
    std::size_t channels, height, width;  // the "image" side (conv input)
    std::size_t kernel;
    std::size_t out_h, out_w;             // the "column" side (conv output)
    int stride, pad;
};

// col[(c*k + ky)*k + kx][oy*out_w + ox] = img[c][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                    T* drow = dst + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        std::fill(drow, drow + g.out_w, T(0));
                        continue;
                    }
                    const T* srow = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                        drow[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0)
                                                                                 : srow[ix];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* img) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const T* src = col + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    T* drow = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const T* srow = src + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
                        if (ix >= 0 && ix < static_cast<long>(g.width)) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
    throw DimensionError(op + ": " + what);
}

void require_rank(const std::string& op, const std::string& arg, const Shape& s, std::size_t rank) {
    if (s.size() != rank) {
        dim_error(op, arg + " must have rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

template <typename T>
bool wants(const BasicTensor<T>& t) {
    return t.defined() && t.requires_grad();
}

enum class Broadcast { same, channel };

Broadcast broadcast_kind(const std::string& op, const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::same;
    if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1) {
        return Broadcast::channel;
    }
    dim_error(op, "incompatible shapes " + shape_str(a) + " and " + shape_str(b) +
                      " (allowed: equal, or [N,C,H,W] with [N,C,1,1])");
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad) {
    const std::string op = "conv2d";
    require_rank(op, "input", input.shape(), 4);
    require_rank(op, "weight", weight.shape(), 4);
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t o = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c) {
        dim_error(op, "weight axis 1 (" + std::to_string(weight.dim(1)) + ") != input axis 1 (" +
                          std::to_string(c) + ")");
    }
    if (weight.dim(3) != k) dim_error(op, "kernel must be square, got " + shape_str(weight.shape()));
    if (k % 2 == 0) dim_error(op, "kernel size must be odd, got " + std::to_string(k));
    if (stride < 1 || pad < 0) dim_error(op, "stride must be >= 1 and pad >= 0");
    if (bias.defined() && bias.shape() != Shape{o}) {
        dim_error(op, "bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(o) + "]");
    }
    const long span_h = static_cast<long>(h) + 2 * pad - static_cast<long>(k);
    const long span_w = static_cast<long>(w) + 2 * pad - static_cast<long>(k);
    if (span_h < 0 || span_w < 0) {
        dim_error(op, "axes 2,3: kernel larger than padded input " + shape_str(input.shape()));
    }
    const ConvGeometry g{c, h, w, k, static_cast<std::size_t>(span_h / stride + 1),
                         static_cast<std::size_t>(span_w / stride + 1), stride, pad};
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t ckk = c * k * k;

    std::vector<T> out(n * o * plane, T(0));
    std::vector<T> col(ckk * plane);
    const T* x = input.data().data();
    const T* wt = weight.data().data();
    for (std::size_t b = 0; b < n; ++b) {
        T* ob = out.data() + b * o * plane;
        if (bias.defined()) {
            for (std::size_t oc = 0; oc < o; ++oc) std::fill(ob + oc * plane, ob + (oc + 1) * plane, bias.data()[oc]);
        }
        im2col(g, x + b * c * h * w, col.data());
        gemm_nn(o, plane, ckk, wt, col.data(), ob);
    }

    return BasicTensor<T>::make_result(
        {n, o, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
        [input, weight, bias, g, n, o, plane, ckk](TensorNode<T>& self) mutable {
            const T* gout = self.grad.data();
            std::vector<T> col(ckk * plane);
            std::vector<T> gcol(ckk * plane);
            const std::size_t in_plane = g.channels * g.height * g.width;
            std::vector<T> gw(weight.numel(), T(0));
            std::vector<T> gx;
            if (wants(input)) gx.assign(input.numel(), T(0));
            for (std::size_t b = 0; b < n; ++b) {
                const T* gb = gout + b * o * plane;
                if (wants(weight)) {
                    im2col(g, input.data().data() + b * in_plane, col.data());
                    gemm_nt(o, ckk, plane, gb, col.data(), gw.data());
                }
                if (wants(input)) {
                    std::fill(gcol.begin(), gcol.end(), T(0));
                    gemm_tn(ckk, plane, o, weight.data().data(), gb, gcol.data());
                    col2im(g, gcol.data(), gx.data() + b * in_plane);
                }
            }
            if (wants(weight)) accumulate_grad(weight, std::span<const T>(gw));
            if (wants(input)) accumulate_grad(input, std::span<const T>(gx));
            if (wants(bias)) {
                std::vector<T> gbias(o, T(0));
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t oc = 0; oc < o; ++oc) {
                        const T* p = gout + (b * o + oc) * plane;
                        T s = 0;
                        for (std::size_t i = 0; i < plane; ++i) s += p[i];
                        gbias[oc] += s;
                    }
                accumulate_grad(bias, std::span<const T>(gbias));
            }
        });
}

template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                 const BasicTensor<T>& bias, int stride, int pad) {
    const std::string op = "transposed_conv2d";
    require_rank(op, "input", input.shape(), 4);
    require_rank(op, "weight", weight.shape(), 4);
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != cin) {
        dim_error(op, "weight axis 0 (" + std::to_string(weight.dim(0)) + ") != input axis 1 (" +
                          std::to_string(cin) + ")");
    }
    if (weight.dim(3) != k) dim_error(op, "kernel must be square, got " + shape_str(weight.shape()));
    if (stride < 1 || pad < 0) dim_error(op, "stride must be >= 1 and pad >= 0");
    if (bias.defined() && bias.shape() != Shape{cout}) {
        dim_error(op, "bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(cout) + "]");
    }
    const long oh = (static_cast<long>(h) - 1) * stride - 2 * pad + static_cast<long>(k);
    const long ow = (static_cast<long>(w) - 1) * stride - 2 * pad + static_cast<long>(k);
    if (oh <= 0 || ow <= 0) dim_error(op, "axes 2,3: non-positive output extent for " + shape_str(input.shape()));

    // The output plays the role of a conv2d input whose conv2d output is `input`.
    const ConvGeometry g{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), k, h, w, stride, pad};
    const std::size_t plane = h * w;
    const std::size_t ckk = cout * k * k;
    const std::size_t out_plane = g.height * g.width;

    std::vector<T> out(n * cout * out_plane, T(0));
    std::vector<T> col(ckk * plane);
    for (std::size_t b = 0; b < n; ++b) {
        std::fill(col.begin(), col.end(), T(0));
        gemm_tn(ckk, plane, cin, weight.data().data(), input.data().data() + b * cin * plane, col.data());
        T* ob = out.data() + b * cout * out_plane;
        col2im(g, col.data(), ob);
        if (bias.defined()) {
            for (std::size_t oc = 0; oc < cout; ++oc) {
                const T bv = bias.data()[oc];
                for (std::size_t i = 0; i < out_plane; ++i) ob[oc * out_plane + i] += bv;
            }
        }
    }

    return BasicTensor<T>::make_result(
        {n, cout, g.height, g.width}, std::move(out), {input, weight, bias},
        [input, weight, bias, g, n, cin, cout, plane, ckk, out_plane](TensorNode<T>& self) mutable {
            const T* gout = self.grad.data();
            std::vector<T> gcol(ckk * plane);
            std::vector<T> gx, gw;
            if (wants(input)) gx.assign(input.numel(), T(0));
            if (wants(weight)) gw.assign(weight.numel(), T(0));
            for (std::size_t b = 0; b < n; ++b) {
                im2col(g, gout + b * cout * out_plane, gcol.data());
                if (wants(input)) {
                    gemm_nn(cin, plane, ckk, weight.data().data(), gcol.data(), gx.data() + b * cin * plane);
                }
                if (wants(weight)) {
                    gemm_nt(cin, ckk, plane, input.data().data() + b * cin * plane, gcol.data(), gw.data());
                }
            }
            if (wants(input)) accumulate_grad(input, std::span<const T>(gx));
            if (wants(weight)) accumulate_grad(weight, std::span<const T>(gw));
            if (wants(bias)) {
                std::vector<T> gbias(cout, T(0));
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const T* p = gout + (b * cout + oc) * out_plane;
                        T s = 0;
                        for (std::size_t i = 0; i < out_plane; ++i) s += p[i];
                        gbias[oc] += s;
                    }
                accumulate_grad(bias, std::span<const T>(gbias));
            }
        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Broadcast kind = broadcast_kind("add", a.shape(), b.shape());
    std::vector<T> out(a.data().begin(), a.data().end());
    const std::size_t plane = kind == Broadcast::channel ? a.dim(2) * a.dim(3) : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i / plane];
    return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b},
                                       [a, b, plane](TensorNode<T>& self) mutable {
        if (wants(a)) accumulate_grad(a, std::span<const T>(self.grad));
        if (wants(b)) {
            std::vector<T> gb(b.numel(), T(0));
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i / plane] += self.grad[i];
            accumulate_grad(b, std::span<const T>(gb));
        }
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Broadcast kind = broadcast_kind("mul", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    const std::size_t plane = kind == Broadcast::channel ? a.dim(2) * a.dim(3) : 1;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i / plane];
    return BasicTensor<T>::make_result(a.shape(), std::move(out), {a, b},
                                       [a, b, plane](TensorNode<T>& self) mutable {
        const auto& g = self.grad;
        if (wants(a)) {
            std::vector<T> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * b.data()[i / plane];
            accumulate_grad(a, std::span<const T>(ga));
        }
        if (wants(b)) {
            std::vector<T> gb(b.numel(), T(0));
            for (std::size_t i = 0; i < g.size(); ++i) gb[i / plane] += g[i] * a.data()[i];
            accumulate_grad(b, std::span<const T>(gb));
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
    return BasicTensor<T>::make_result(x.shape(), std::move(out), {x},
                                       [x, factor](TensorNode<T>& self) mutable {
        std::vector<T> gx(self.grad.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = self.grad[i] * factor;
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [x](TensorNode<T>& self) mutable {
        std::vector<T> gx(self.grad.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x.data()[i] > T(0) ? self.grad[i] : T(0);
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    auto y = std::make_shared<std::vector<T>>(out);
    return BasicTensor<T>::make_result(x.shape(), std::move(out), {x}, [x, y](TensorNode<T>& self) mutable {
        std::vector<T> gx(self.grad.size());
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T s = (*y)[i];
            gx[i] = self.grad[i] * s * (T(1) - s);
        }
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
    require_rank("global_avg_pool", "input", x.shape(), 4);
    const std::size_t nc = x.dim(0) * x.dim(1);
    const std::size_t plane = x.dim(2) * x.dim(3);
    std::vector<T> out(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < plane; ++j) s += x.data()[i * plane + j];
        out[i] = s / static_cast<T>(plane);
    }
    return BasicTensor<T>::make_result({x.dim(0), x.dim(1)}, std::move(out), {x},
                                       [x, nc, plane](TensorNode<T>& self) mutable {
        std::vector<T> gx(x.numel());
        for (std::size_t i = 0; i < nc; ++i) {
            const T gi = self.grad[i] / static_cast<T>(plane);
            for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] = gi;
        }
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    const std::string op = "linear";
    require_rank(op, "input", x.shape(), 2);
    require_rank(op, "weight", weight.shape(), 2);
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in) {
        dim_error(op, "weight axis 1 (" + std::to_string(weight.dim(1)) + ") != input axis 1 (" +
                          std::to_string(in) + ")");
    }
    if (bias.defined() && bias.shape() != Shape{out_dim}) {
        dim_error(op, "bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(out_dim) + "]");
    }
    std::vector<T> out(n * out_dim, T(0));
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) out[b * out_dim + o] = bias.defined() ? bias.data()[o] : T(0);
    gemm_nt(n, out_dim, in, x.data().data(), weight.data().data(), out.data());
    return BasicTensor<T>::make_result({n, out_dim}, std::move(out), {x, weight, bias},
                                       [x, weight, bias, n, in, out_dim](TensorNode<T>& self) mutable {
        const T* g = self.grad.data();
        if (wants(x)) {
            std::vector<T> gx(n * in, T(0));
            gemm_nn(n, in, out_dim, g, weight.data().data(), gx.data());
            accumulate_grad(x, std::span<const T>(gx));
        }
        if (wants(weight)) {
            std::vector<T> gw(out_dim * in, T(0));
            gemm_tn(out_dim, in, n, g, x.data().data(), gw.data());
            accumulate_grad(weight, std::span<const T>(gw));
        }
        if (wants(bias)) {
            std::vector<T> gb(out_dim, T(0));
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[b * out_dim + o];
            accumulate_grad(bias, std::span<const T>(gb));
        }
    });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        dim_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return BasicTensor<T>::make_result(std::move(shape), std::move(out), {x}, [x](TensorNode<T>& self) mutable {
        accumulate_grad(x, std::span<const T>(self.grad));
    });
}

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, int factor) {
    require_rank("upsample_nearest", "input", x.shape(), 4);
    if (factor < 1) dim_error("upsample_nearest", "factor must be >= 1");
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h * f, ow = w * f;
    std::vector<T> out(nc * oh * ow);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                out[(p * oh + y) * ow + xx] = x.data()[(p * h + y / f) * w + xx / f];
    return BasicTensor<T>::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                                       [x, nc, h, w, f, oh, ow](TensorNode<T>& self) mutable {
        std::vector<T> gx(x.numel(), T(0));
        for (std::size_t p = 0; p < nc; ++p)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx)
                    gx[(p * h + y / f) * w + xx / f] += self.grad[(p * oh + y) * ow + xx];
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_rank("concat_channels", "a", a.shape(), 4);
    require_rank("concat_channels", "b", b.shape(), 4);
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        dim_error("concat_channels", "axes 0,2,3 must match: " + shape_str(a.shape()) + " vs " +
                                         shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    std::vector<T> out;
    out.reserve(n * (ca + cb) * plane);
    for (std::size_t i = 0; i < n; ++i) {
        out.insert(out.end(), a.data().begin() + i * ca * plane, a.data().begin() + (i + 1) * ca * plane);
        out.insert(out.end(), b.data().begin() + i * cb * plane, b.data().begin() + (i + 1) * cb * plane);
    }
    return BasicTensor<T>::make_result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                                       [a, b, n, ca, cb, plane](TensorNode<T>& self) mutable {
        const auto& g = self.grad;
        if (wants(a)) {
            std::vector<T> ga;
            ga.reserve(a.numel());
            for (std::size_t i = 0; i < n; ++i)
                ga.insert(ga.end(), g.begin() + i * (ca + cb) * plane, g.begin() + (i * (ca + cb) + ca) * plane);
            accumulate_grad(a, std::span<const T>(ga));
        }
        if (wants(b)) {
            std::vector<T> gb;
            gb.reserve(b.numel());
            for (std::size_t i = 0; i < n; ++i)
                gb.insert(gb.end(), g.begin() + (i * (ca + cb) + ca) * plane, g.begin() + (i + 1) * (ca + cb) * plane);
            accumulate_grad(b, std::span<const T>(gb));
        }
    });
}

template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
    if (prediction.shape() != target.shape()) {
        dim_error("l1_loss", shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
    }
    const std::size_t count = prediction.numel();
    T s = 0;
    for (std::size_t i = 0; i < count; ++i) s += std::abs(prediction.data()[i] - target.data()[i]);
    const T value = s / static_cast<T>(count);
    if (!std::isfinite(value)) throw NumericError("l1_loss: non-finite loss");
    return BasicTensor<T>::make_result({1}, {value}, {prediction},
                                       [prediction, target, count](TensorNode<T>& self) mutable {
        const T g = self.grad[0] / static_cast<T>(count);
        std::vector<T> gp(count);
        for (std::size_t i = 0; i < count; ++i) {
            const T d = prediction.data()[i] - target.data()[i];
            gp[i] = d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
        accumulate_grad(prediction, std::span<const T>(gp));
    });
}

template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const BasicTensor<T>& weights) {
    if (x.shape() != weights.shape()) {
        dim_error("weighted_sum", shape_str(x.shape()) + " vs " + shape_str(weights.shape()));
    }
    T s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.data()[i] * weights.data()[i];
    return BasicTensor<T>::make_result({1}, {s}, {x}, [x, weights](TensorNode<T>& self) mutable {
        std::vector<T> gx(x.numel());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = self.grad[0] * weights.data()[i];
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    T s = 0;
    for (auto v : x.data()) s += v;
    const std::size_t count = x.numel();
    return BasicTensor<T>::make_result({1}, {s / static_cast<T>(count)}, {x},
                                       [x, count](TensorNode<T>& self) mutable {
        std::vector<T> gx(count, self.grad[0] / static_cast<T>(count));
        accumulate_grad(x, std::span<const T>(gx));
    });
}

template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.data()[i], T(0), T(1));
    return BasicTensor<T>(x.shape(), std::move(out));
}

#define FACESR_INSTANTIATE_OPS(T)                                                                      \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                   int, int);                                                          \
    template BasicTensor<T> transposed_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                              const BasicTensor<T>&, int, int);                        \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                           \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                               \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                            \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                    \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                     \
    template BasicTensor<T> upsample_nearest(const BasicTensor<T>&, int);                              \
    template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);              \
    template BasicTensor<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                      \
    template BasicTensor<T> weighted_sum(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                               \
    template BasicTensor<T> clamp01(const BasicTensor<T>&);

FACESR_INSTANTIATE_OPS(float)
FACESR_INSTANTIATE_OPS(double)

#undef FACESR_INSTANTIATE_OPS

}  // namespace facesr
