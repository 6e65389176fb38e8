#pragma once

#include <string>
#include <vector>

#include "epigraph/core/gradcheck.hpp"
#include "epigraph/model/model.hpp"

namespace epigraph::train {

struct LayerCheck {
    std::string layer;
    GradCheckReport report;
};

namespace detail {

inline Tensor random_input(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(element_count(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Fully connected graph over M named nodes.
inline graph::VariableGraph dense_graph(std::size_t M) {
    std::vector<double> rho(M * M, 0.5);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < M; ++i) {
        rho[i * M + i] = 1.0;
        names.push_back("v" + std::to_string(i));
    }
    return graph::build_graph(rho, names);
}

}  // namespace detail

// Finite-difference checks of every layer type at tiny dimensions:
// gate (with the graph encoder behind it), GATv2, encoder, decoder, head and
// the full model. Inputs are included as checked tensors where they carry a
// gradient.
inline std::vector<LayerCheck> gradcheck_suite(std::uint64_t seed = 1, double epsilon = 1e-5,
                                               double tolerance = 1e-4) {
    std::vector<LayerCheck> out;
    Rng rng(seed);

    {  // gate: distinct logits keep the top-k set fixed under the perturbation
        ParamSet params;
        graph::GraphEncoderConfig cfg{.d_node = 3, .gat_layers = 1, .gat_heads = 2, .gat_head_dim = 2,
                                      .keep_fraction = 0.5, .d_model = 4};
        graph::GraphEncoder enc(params, detail::dense_graph(6), cfg, rng);
        auto logits = enc.gate().logits.mutable_values();
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = 0.4 * static_cast<double>((i * 5) % 6) - 1.0;
        const Tensor x = detail::random_input({2, 3, 6}, rng);
        const Tensor target = detail::random_input({2, 3, 4}, rng);
        out.push_back({"gate", grad_check([&] { return mse_loss(enc(x), target); },
                                          {{"gate.logits", enc.gate().logits}}, epsilon, tolerance)});
    }
    {  // GATv2: 3 nodes, 2 heads, d = 4
        ParamSet params;
        graph::GatLayer layer(params, "gat", 4, 2, 2, rng);
        const auto g = detail::dense_graph(3);
        const auto mask = g.induced_mask({0, 1, 2});
        Tensor x = detail::random_input({2, 3, 4}, rng, true);
        const Tensor target = detail::random_input({2, 3, 4}, rng);
        auto named = params.entries();
        named.push_back({"input", x});
        out.push_back({"gatv2", grad_check([&] { return mse_loss(graph::gatv2_forward(x, mask, layer), target); },
                                           named, epsilon, tolerance)});
    }
    const model::TransformerConfig tcfg{.d_model = 4, .n_heads = 2, .d_ff = 6, .dropout = 0.0};
    {
        ParamSet params;
        model::EncoderLayer layer(params, "encoder", tcfg, rng);
        Tensor x = detail::random_input({2, 3, 4}, rng, true);
        const Tensor target = detail::random_input({2, 3, 4}, rng);
        auto named = params.entries();
        named.push_back({"input", x});
        out.push_back({"encoder", grad_check([&] { return mse_loss(layer(x, {}), target); }, named, epsilon,
                                             tolerance)});
    }
    {
        ParamSet params;
        model::DecoderLayer layer(params, "decoder", tcfg, rng);
        Tensor y = detail::random_input({2, 3, 4}, rng, true);
        Tensor memory = detail::random_input({2, 3, 4}, rng, true);
        const Tensor target = detail::random_input({2, 3, 4}, rng);
        auto named = params.entries();
        named.push_back({"input", y});
        named.push_back({"memory", memory});
        out.push_back({"decoder", grad_check([&] { return mse_loss(layer(y, memory, {}), target); }, named,
                                             epsilon, tolerance)});
    }
    {
        ParamSet params;
        Linear proj(params, "head", 4, 1, rng);
        Tensor states = detail::random_input({2, 5, 4}, rng, true);
        const Tensor target = detail::random_input({2, 2}, rng);
        auto named = params.entries();
        named.push_back({"states", states});
        out.push_back({"head", grad_check([&] { return mse_loss(model::EpiGraphModel::head(states, 2, proj), target); },
                                          named, epsilon, tolerance)});
    }
    {
        model::ModelConfig cfg;
        cfg.graph = {.d_node = 3, .gat_layers = 1, .gat_heads = 2, .gat_head_dim = 2, .keep_fraction = 0.5,
                     .d_model = 4};
        cfg.transformer = {.d_model = 4, .n_heads = 2, .d_ff = 4, .dropout = 0.0, .encoder_layers = 1,
                           .decoder_layers = 1};
        cfg.window = 4;
        cfg.horizon = 2;
        model::EpiGraphModel m(detail::dense_graph(4), cfg, seed);
        auto logits = m.spatial().gate().logits.mutable_values();
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = 0.3 * static_cast<double>((i * 7) % 4);
        const Tensor x = detail::random_input({2, 4, 4}, rng);
        const Tensor y = detail::random_input({2, 4}, rng);
        const Tensor target = detail::random_input({2, 2}, rng);
        out.push_back({"model", grad_check([&] { return mse_loss(m(x, y, {}), target); }, m.params().entries(),
                                           epsilon, tolerance)});
    }
    return out;
}

}  // namespace epigraph::train
