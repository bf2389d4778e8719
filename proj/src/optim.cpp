#include "facesr/optim.hpp"

#include <cmath>

namespace facesr {

template <typename T>
BasicTensor<T>& ParameterSet<T>::add(std::string name, BasicTensor<T> tensor) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

template <typename T>
const BasicTensor<T>* ParameterSet<T>::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

template <typename T>
BasicTensor<T>* ParameterSet<T>::find(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

template <typename T>
std::size_t ParameterSet<T>::count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

void Adam::attach(const ParameterSet<float>& params) {
    state_.step = 0;
    state_.first_moment.clear();
    state_.second_moment.clear();
    for (const auto& e : params.entries()) {
        state_.first_moment.emplace_back(e.tensor.numel(), 0.0f);
        state_.second_moment.emplace_back(e.tensor.numel(), 0.0f);
    }
}

void Adam::step(ParameterSet<float>& params) {
    auto& entries = params.entries();
    if (state_.first_moment.size() != entries.size()) {
        throw DimensionError("adam: state holds " + std::to_string(state_.first_moment.size()) +
                             " buffers for " + std::to_string(entries.size()) + " parameters");
    }
    for (std::size_t p = 0; p < entries.size(); ++p) {
        if (state_.first_moment[p].size() != entries[p].tensor.numel() ||
            state_.second_moment[p].size() != entries[p].tensor.numel()) {
            throw DimensionError("adam: moment buffers do not match parameter " + entries[p].name + " " +
                                 shape_str(entries[p].tensor.shape()));
        }
        for (float g : entries[p].tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adam: non-finite gradient in parameter '" + entries[p].name + "'");
            }
        }
    }

    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(options_.beta1, t);
    const double bc2 = 1.0 - std::pow(options_.beta2, t);
    const float b1 = static_cast<float>(options_.beta1);
    const float b2 = static_cast<float>(options_.beta2);
    for (std::size_t p = 0; p < entries.size(); ++p) {
        auto data = entries[p].tensor.data();
        auto grad = entries[p].tensor.grad();
        auto& m = state_.first_moment[p];
        auto& v = state_.second_moment[p];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float g = grad[i];
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            data[i] -= static_cast<float>(options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
        }
    }
}

double step_decay_lr(double initial_lr, int epoch, int period) {
    return initial_lr / std::ldexp(1.0, epoch / period);
}

}  // namespace facesr
