#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace facesr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Raised when operand shapes are incompatible; the message names the axes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised for NaN/Inf at loss evaluation or in optimizer inputs.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
class BasicTensor;

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::vector<BasicTensor<T>> parents;
    // Reads `grad` of this node and accumulates into the parents.
    std::function<void(TensorNode&)> backward_fn;
};

// Reference-semantics handle to a dense row-major array that can record the
// operations producing it. Copies share storage; use clone() for a deep copy.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, bool requires_grad = false);
    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return node_ ? node_->data.size() : 0; }

    std::span<T> data();
    std::span<const T> data() const;
    T item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on);

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    // Gradient buffer; allocated (zero-filled) on first access.
    std::span<T> grad();
    std::span<const T> grad() const;
    void zero_grad();

    // Reverse-mode sweep from this node. Scalar outputs are seeded with 1.
    void backward();
    void backward(std::span<const T> seed);

    BasicTensor detach() const;
    BasicTensor clone() const;

    // Element equality of shape and data, bit-for-bit.
    bool same_values(const BasicTensor& other) const;

    TensorNode<T>* node() const { return node_.get(); }

    // Builds an op result. Parents and the backward closure are kept only if
    // some parent requires a gradient.
    static BasicTensor make_result(Shape shape, std::vector<T> data,
                                   std::vector<BasicTensor> parents,
                                   std::function<void(TensorNode<T>&)> backward_fn);

private:
    std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Accumulate `src` into the gradient of `dst` (allocating it if needed).
template <typename T>
void accumulate_grad(const BasicTensor<T>& dst, std::span<const T> src);

template <typename To, typename From>
BasicTensor<To> cast_tensor(const BasicTensor<From>& src, bool requires_grad = false);

}  // namespace facesr
