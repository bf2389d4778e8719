#include "facesr/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace facesr {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) {
            throw DimensionError("tensor extent must be positive: axis " + std::to_string(i) +
                                 " of " + shape_str(shape));
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    return BasicTensor(std::move(shape), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    BasicTensor t(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
    static const Shape empty;
    return node_ ? node_->shape : empty;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

template <typename T>
std::span<T> BasicTensor<T>::data() {
    return node_ ? std::span<T>(node_->data) : std::span<T>();
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
    return node_ ? std::span<const T>(node_->data) : std::span<const T>();
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
    if (node_) node_->requires_grad = on;
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
    if (!node_) return {};
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
    return node_->grad;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    return node_ ? std::span<const T>(node_->grad) : std::span<const T>();
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::backward() {
    if (numel() != 1) {
        throw DimensionError("backward() without seed requires a scalar, got " + shape_str(shape()));
    }
    const T one = T(1);
    backward(std::span<const T>(&one, 1));
}

template <typename T>
void BasicTensor<T>::backward(std::span<const T> seed) {
    if (!node_) throw std::logic_error("backward on undefined tensor");
    if (seed.size() != numel()) {
        throw DimensionError("backward seed length " + std::to_string(seed.size()) +
                             " does not match " + shape_str(shape()));
    }

    // Post-order DFS gives a topological order; reverse it for the sweep.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].node();
            if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    accumulate_grad(*this, seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    if (!node_) return {};
    return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    if (!node_) return {};
    BasicTensor out(node_->shape, node_->data, node_->requires_grad);
    out.node_->grad = node_->grad;
    return out;
}

template <typename T>
bool BasicTensor<T>::same_values(const BasicTensor& other) const {
    if (shape() != other.shape()) return false;
    if (numel() == 0) return true;
    return std::memcmp(node_->data.data(), other.node_->data.data(), numel() * sizeof(T)) == 0;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> data,
                                           std::vector<BasicTensor> parents,
                                           std::function<void(TensorNode<T>&)> backward_fn) {
    BasicTensor out(std::move(shape), std::move(data), false);
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const BasicTensor& p) { return p.requires_grad(); });
    if (needs) {
        out.node_->requires_grad = true;
        out.node_->parents = std::move(parents);
        out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename T>
void accumulate_grad(const BasicTensor<T>& dst, std::span<const T> src) {
    TensorNode<T>* node = dst.node();
    if (!node) throw std::logic_error("accumulate_grad on undefined tensor");
    if (node->grad.empty()) node->grad.assign(node->data.size(), T(0));
    auto& g = node->grad;
    if (g.size() != src.size()) {
        throw DimensionError("gradient length " + std::to_string(src.size()) + " does not match " +
                             shape_str(dst.shape()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

template <typename To, typename From>
BasicTensor<To> cast_tensor(const BasicTensor<From>& src, bool requires_grad) {
    std::vector<To> data(src.data().begin(), src.data().end());
    return BasicTensor<To>(src.shape(), std::move(data), requires_grad);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void accumulate_grad(const BasicTensor<float>&, std::span<const float>);
template void accumulate_grad(const BasicTensor<double>&, std::span<const double>);
template BasicTensor<double> cast_tensor(const BasicTensor<float>&, bool);
template BasicTensor<float> cast_tensor(const BasicTensor<double>&, bool);
template BasicTensor<float> cast_tensor(const BasicTensor<float>&, bool);
template BasicTensor<double> cast_tensor(const BasicTensor<double>&, bool);

}  // namespace facesr
