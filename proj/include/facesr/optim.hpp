#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facesr/tensor.hpp"

namespace facesr {

// Named, ordered parameter list. Order defines checkpoint layout and
// optimizer state alignment.
template <typename T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        BasicTensor<T> tensor;
    };

    BasicTensor<T>& add(std::string name, BasicTensor<T> tensor);
    const BasicTensor<T>* find(const std::string& name) const;
    BasicTensor<T>* find(const std::string& name);

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t count() const;  // total scalar parameters
    void zero_grad();

private:
    std::vector<Entry> entries_;
};

struct AdamOptions {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
};

// Bias-corrected ADAM. Moments are kept in float and updated in a fixed
// element order so identical inputs give identical parameters.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    void attach(const ParameterSet<float>& params);
    // Throws NumericError naming the tensor if any gradient is non-finite;
    // parameters are left untouched in that case.
    void step(ParameterSet<float>& params);

    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    const AdamOptions& options() const { return options_; }

    AdamState& state() { return state_; }
    const AdamState& state() const { return state_; }

private:
    AdamOptions options_;
    AdamState state_;
};

// Step decay: initial / 2^floor(epoch / period).
double step_decay_lr(double initial_lr, int epoch, int period = 50);

}  // namespace facesr
