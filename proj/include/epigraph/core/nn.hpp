#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "epigraph/core/errors.hpp"
#include "epigraph/core/gradcheck.hpp"
#include "epigraph/core/ops.hpp"
#include "epigraph/core/rng.hpp"

namespace epigraph {

// Ordered registry of trainable tensors. Order is the checkpoint order and
// the optimizer order, so it must only depend on the architecture.
class ParamSet {
public:
    Tensor add(std::string name, Tensor t) {
        for (const auto& e : entries_)
            if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
        entries_.push_back({std::move(name), t});
        return t;
    }

    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& e : entries_) out.push_back(e.tensor);
        return out;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }
    const Tensor& at(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw ContractError("no parameter named '" + name + "'");
    }

private:
    std::vector<NamedTensor> entries_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, Shape shape = {}) {
    if (shape.empty()) shape = {fan_in, fan_out};
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(element_count(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
}

// y = x W + b over the last axis of x.
struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out], absent when constructed without bias

    Linear() = default;
    Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool with_bias = true) {
        weight = params.add(name + ".weight", xavier_uniform(in, out, rng));
        if (with_bias) bias = params.add(name + ".bias", Tensor::zeros({out}, true));
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor operator()(const Tensor& x) const {
        if (x.rank() == 0 || x.dim(x.rank() - 1) != in_features())
            throw ContractError("linear: input " + to_string(x.shape()) + " does not end in " +
                                std::to_string(in_features()));
        if (x.rank() == 1) return reshape((*this)(reshape(x, {1, x.size()})), {out_features()});
        Tensor y = matmul(x, weight);
        return bias.impl() ? add(y, bias) : y;
    }
};

// Sum over `axis`.
inline Tensor sum(const Tensor& x, int axis) {
    const std::size_t ax = axis < 0 ? x.rank() + axis : static_cast<std::size_t>(axis);
    return scale(mean(x, axis), static_cast<double>(x.dim(ax)));
}

}  // namespace epigraph
