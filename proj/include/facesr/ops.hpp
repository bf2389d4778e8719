#pragma once

#include "facesr/tensor.hpp"

namespace facesr {

// Convolution layouts follow NCHW. conv2d weights are [O, C, k, k] and are
// applied as cross-correlation (no kernel flip); k must be odd.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int pad);

// Adjoint of conv2d with respect to its input. Weights are [C_in, C_out, k, k]
// and the output extent is (H - 1) * stride - 2 * pad + k.
template <typename T>
BasicTensor<T> transposed_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                 const BasicTensor<T>& bias, int stride, int pad);

// Broadcasting rule for add/mul: `b` either has the shape of `a`, or `a` is
// [N, C, H, W] and `b` is [N, C, 1, 1] (one value per channel, expanded
// over the spatial axes). No other broadcasting is performed.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

// [N, C, H, W] -> [N, C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// x: [N, In], weight: [Out, In], bias: [Out] (may be undefined) -> [N, Out]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, int factor);

// [N, Ca, H, W] ++ [N, Cb, H, W] -> [N, Ca + Cb, H, W]
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Mean absolute error; the target carries no gradient.
template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& prediction, const BasicTensor<T>& target);

// sum_i x_i * w_i with constant weights of x's shape.
template <typename T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const BasicTensor<T>& weights);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// Inference-only clamp to [0, 1]; the result has no graph.
template <typename T>
BasicTensor<T> clamp01(const BasicTensor<T>& x);

}  // namespace facesr
