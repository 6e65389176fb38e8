#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "epigraph/core/nn.hpp"

namespace epigraph::graph {

// k = ceil(p M); the small slack keeps 0.1 * 190 from rounding up to 20.
inline std::size_t gate_k(double keep_fraction, std::size_t M) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw ConfigError("keep_fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
    return static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(M) - 1e-9));
}

// Indices of the k largest values, ties resolved toward the lower index,
// returned in ascending index order.
inline std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
    if (k > values.size())
        throw ContractError("top-k: k = " + std::to_string(k) + " exceeds " + std::to_string(values.size()) + " nodes");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

// Trainable sigmoid gate per node with hard top-k masking.
struct GateState {
    Tensor logits;  // [M]
    double keep_fraction = 0.10;
    std::size_t k = 0;
    std::vector<char> last_mask;

    GateState() = default;
    GateState(ParamSet& params, std::size_t M, double p) : keep_fraction(p), k(gate_k(p, M)) {
        logits = params.add("gate.logits", Tensor::zeros({M}, true));
        last_mask.assign(M, 0);
    }

    std::size_t size() const { return logits.size(); }

    std::vector<double> gate_values() const {
        std::vector<double> g(size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        return g;
    }

    // Selected node indices for the current logits; records the mask.
    std::vector<std::size_t> select() {
        if (k > size()) throw ContractError("gate: k = " + std::to_string(k) + " exceeds M = " + std::to_string(size()));
        const auto g = gate_values();
        auto chosen = top_k(g, k);
        last_mask.assign(size(), 0);
        for (auto i : chosen) last_mask[i] = 1;
        return chosen;
    }
};

struct GateOutput {
    Tensor gated;                        // [B, M, d], unselected rows exactly zero
    std::vector<std::size_t> selected;  // ascending
};

// H * g~ where g~_i = sigmoid(w_i) on the top-k nodes and 0 elsewhere.
// Dropped logits receive zero gradient.
inline GateOutput gate_forward(const Tensor& H, GateState& state) {
    if (H.rank() != 3 || H.dim(1) != state.size())
        throw ContractError("gate: input " + to_string(H.shape()) + " does not have " + std::to_string(state.size()) +
                            " nodes on axis 1");
    GateOutput out;
    out.selected = state.select();
    std::vector<double> keep(state.size(), 0.0);
    for (auto i : out.selected) keep[i] = 1.0;
    const Tensor g = mul(sigmoid(state.logits), Tensor::vector(std::move(keep)));
    out.gated = scale_along(H, g, 1);
    return out;
}

}  // namespace epigraph::graph
