#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "svgen/tensor.hpp"

namespace svgen {

// Per-parameter-list Adam state. Moment buffers are kept in parameter order
// and sized lazily on the first step.
struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    int64_t step_count = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam update. Gradients are zeroed after the step.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.first_moment.empty()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
            state.second_moment[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ValueError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad()) {
            throw ValueError("adam_step: parameter " + std::to_string(i) + " does not require grad");
        }
        if (state.first_moment[i].size() != static_cast<size_t>(params[i].numel())) {
            throw ValueError("adam_step: moment buffer size mismatch on parameter " +
                             std::to_string(i));
        }
    }

    ++state.step_count;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::vector<double>& g = params[i].grad();
        std::vector<double>& vals = params[i].values_mut();
        std::vector<double>& m = state.first_moment[i];
        std::vector<double>& v = state.second_moment[i];
        for (size_t j = 0; j < vals.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            vals[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        params[i].zero_grad();
    }
}

}  // namespace svgen
