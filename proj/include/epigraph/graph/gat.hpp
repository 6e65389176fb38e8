#pragma once

#include <string>
#include <vector>

#include "epigraph/core/nn.hpp"
#include "epigraph/graph/correlation.hpp"
#include "epigraph/graph/gate.hpp"

namespace epigraph::graph {

// One GATv2 layer; heads are stored side by side:
//   W1, W2: [d_in, heads * d_head]   attention: [heads, d_head]
// e_ij = a . LeakyReLU(W1 h_i + W2 h_j),  h_i' = ReLU(sum_j alpha_ij W2 h_j)
struct GatLayer {
    Tensor w1, w2, attention;
    std::size_t heads = 0, d_head = 0;
    double slope = 0.2;

    GatLayer() = default;
    GatLayer(ParamSet& params, const std::string& name, std::size_t d_in, std::size_t heads_, std::size_t d_head_,
             Rng& rng, double slope_ = 0.2)
        : heads(heads_), d_head(d_head_), slope(slope_) {
        w1 = params.add(name + ".w1", xavier_uniform(d_in, heads * d_head, rng));
        w2 = params.add(name + ".w2", xavier_uniform(d_in, heads * d_head, rng));
        attention = params.add(name + ".attention", xavier_uniform(d_head, 1, rng, {heads, d_head}));
    }

    std::size_t d_in() const { return w1.dim(0); }
    std::size_t d_out() const { return heads * d_head; }
};

namespace detail {

// [N, k, heads * d_head] -> [N, heads, k, d_head]
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
    const std::size_t N = x.dim(0), k = x.dim(1), d = x.dim(2) / heads;
    return permute(reshape(x, {N, k, heads, d}), {0, 2, 1, 3});
}

inline void check_input(const Tensor& x, const GatLayer& layer, const AttentionMask& mask) {
    if (x.rank() != 3 || x.dim(2) != layer.d_in())
        throw ContractError("gat: input " + to_string(x.shape()) + " does not end in " + std::to_string(layer.d_in()));
    if (mask.rows != x.dim(1) || mask.cols != x.dim(1))
        throw ContractError("gat: mask does not match " + std::to_string(x.dim(1)) + " nodes");
}

}  // namespace detail

// Attention coefficients [N, heads, k, k] over the nodes of x: [N, k, d_in].
inline Tensor gatv2_attention(const Tensor& x, const AttentionMask& mask, const GatLayer& layer) {
    detail::check_input(x, layer, mask);
    const std::size_t N = x.dim(0), k = x.dim(1);
    const Tensor target = matmul(x, layer.w1);  // W1 h_i
    const Tensor source = matmul(x, layer.w2);  // W2 h_j
    Tensor e = leaky_relu(pairwise_sum(target, source), layer.slope);  // [N, k, k, heads * d_head]
    e = reshape(e, {N, k, k, layer.heads, layer.d_head});
    e = sum(mul(e, layer.attention), -1);  // [N, k, k, heads]
    e = permute(e, {0, 3, 1, 2});
    return masked_softmax(e, mask);
}

// Layer output [N, k, heads * d_head] on the graph described by `mask`.
inline Tensor gatv2_forward(const Tensor& x, const AttentionMask& mask, const GatLayer& layer) {
    const std::size_t N = x.dim(0), k = x.dim(1);
    const Tensor alpha = gatv2_attention(x, mask, layer);
    const Tensor messages = detail::split_heads(matmul(x, layer.w2), layer.heads);  // [N, heads, k, d_head]
    const Tensor mixed = relu(matmul(alpha, messages));
    return reshape(permute(mixed, {0, 2, 1, 3}), {N, k, layer.d_out()});
}

// Full-width form: runs on the subgraph induced by `selected` and returns
// [N, M, heads * d_head] with zero rows for every other node.
inline Tensor gatv2_layer(const Tensor& h, const VariableGraph& graph, const std::vector<std::size_t>& selected,
                          const GatLayer& layer) {
    if (h.rank() != 3 || h.dim(1) != graph.size())
        throw ContractError("gat: input " + to_string(h.shape()) + " does not match graph of " +
                            std::to_string(graph.size()) + " nodes");
    const Tensor sub = index_select(h, 1, selected);
    const Tensor out = gatv2_forward(sub, graph.induced_mask(selected), layer);
    return index_place(out, 1, selected, graph.size());
}

struct GraphEncoderConfig {
    std::size_t d_node = 16;
    std::size_t gat_layers = 2;
    std::size_t gat_heads = 4;
    std::size_t gat_head_dim = 4;
    double slope = 0.2;
    double keep_fraction = 0.10;
    std::size_t d_model = 256;
    bool node_identity = true;  // learned per-node vector added to the lifted value
};

// Scalar node values -> shared embedding -> gate -> GATv2 stack on the
// selected subgraph -> mean over selected nodes -> linear map to d_model.
class GraphEncoder {
public:
    GraphEncoder() = default;
    GraphEncoder(ParamSet& params, VariableGraph graph, const GraphEncoderConfig& cfg, Rng& rng)
        : graph_(std::move(graph)), cfg_(cfg) {
        const std::size_t M = graph_.size();
        gate_ = GateState(params, M, cfg.keep_fraction);
        node_embed_ = Linear(params, "node_embed", 1, cfg.d_node, rng);
        if (cfg.node_identity) node_ids_ = params.add("node_identity", xavier_uniform(M, cfg.d_node, rng));
        std::size_t d = cfg.d_node;
        for (std::size_t l = 0; l < cfg.gat_layers; ++l) {
            layers_.emplace_back(params, "gat" + std::to_string(l), d, cfg.gat_heads, cfg.gat_head_dim, rng, cfg.slope);
            d = layers_.back().d_out();
        }
        readout_ = Linear(params, "readout", d, cfg.d_model, rng);
    }

    const VariableGraph& graph() const { return graph_; }
    GateState& gate() { return gate_; }
    const GateState& gate() const { return gate_; }
    const GraphEncoderConfig& config() const { return cfg_; }

    // Node features [N, k, d] of the selected nodes after the gate and GAT stack.
    Tensor nodes(const Tensor& x_sel, const std::vector<std::size_t>& selected) {
        const std::size_t N = x_sel.dim(0), k = x_sel.dim(1);
        Tensor h = node_embed_(reshape(x_sel, {N, k, 1}));
        if (node_ids_.defined()) h = add(h, index_select(node_ids_, 0, selected));
        const Tensor g = index_select(sigmoid(gate_.logits), 0, selected);
        h = scale_along(h, g, 1);
        const AttentionMask mask = graph_.induced_mask(selected);
        for (const auto& layer : layers_) h = gatv2_forward(h, mask, layer);
        return h;
    }

    // Per-time-step embeddings z: [B, w, M] -> [B, w, d_model].
    Tensor operator()(const Tensor& x) {
        if (x.rank() != 3 || x.dim(2) != graph_.size())
            throw ContractError("graph encoder: input " + to_string(x.shape()) + " does not have " +
                                std::to_string(graph_.size()) + " variables");
        const std::size_t B = x.dim(0), w = x.dim(1);
        const auto selected = gate_.select();
        const Tensor x_sel = index_select(reshape(x, {B * w, graph_.size()}), 1, selected);
        const Tensor z = readout_(mean(nodes(x_sel, selected), 1));
        return reshape(z, {B, w, cfg_.d_model});
    }

    const std::vector<GatLayer>& layers() const { return layers_; }
    const Linear& node_embed() const { return node_embed_; }
    const Tensor& node_identity() const { return node_ids_; }
    const Linear& readout() const { return readout_; }

private:
    VariableGraph graph_;
    GraphEncoderConfig cfg_;
    GateState gate_;
    Linear node_embed_;
    Tensor node_ids_;
    std::vector<GatLayer> layers_;
    Linear readout_;
};

// z for one step from full-width node features [N, M, d] (zero rows for
// unselected nodes): mean over the selected rows, then `readout`.
inline Tensor embed_step(const Tensor& h, const std::vector<std::size_t>& selected, const Linear& readout) {
    return readout(mean(index_select(h, 1, selected), 1));
}

}  // namespace epigraph::graph
