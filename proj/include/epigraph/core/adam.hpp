#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "epigraph/core/errors.hpp"
#include "epigraph/core/tensor.hpp"

namespace epigraph {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First/second moments per parameter, zero-initialized on first use.
struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
};

// One bias-corrected Adam update of `params` using their accumulated grads.
// Parameters without a gradient are treated as having a zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = params[i].grad();
        if (state.m[i].size() != params[i].size() || (!g.empty() && g.size() != params[i].size()))
            throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    const auto& c = state.config;
    state.t += 1;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_values();
        const auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

inline void zero_grads(std::span<Tensor> params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace epigraph
