#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "epigraph/core/errors.hpp"
#include "epigraph/core/ops.hpp"
#include "epigraph/data/preprocess.hpp"

namespace epigraph::graph {

// Row-major M x M Pearson matrix of the columns of a T x M block. A constant
// column has correlation 0 with every other column and 1 with itself.
inline std::vector<double> pearson_matrix(std::span<const double> values, std::size_t T, std::size_t M) {
    if (T < 2) throw ContractError("pearson_matrix needs at least 2 time points, got " + std::to_string(T));
    if (values.size() != T * M) throw DimensionError("pearson_matrix: value count does not match T x M");
    std::vector<double> mean(M, 0.0), centered(T * M), norm(M, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < M; ++m) mean[m] += values[t * M + m];
    for (auto& v : mean) v /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < M; ++m) {
            const double c = values[t * M + m] - mean[m];
            centered[t * M + m] = c;
            norm[m] += c * c;
        }
    for (auto& v : norm) v = std::sqrt(v);
    std::vector<double> rho(M * M, 0.0);
    for (std::size_t u = 0; u < M; ++u) {
        rho[u * M + u] = 1.0;
        for (std::size_t v = u + 1; v < M; ++v) {
            if (norm[u] == 0.0 || norm[v] == 0.0) continue;
            double cov = 0.0;
            for (std::size_t t = 0; t < T; ++t) cov += centered[t * M + u] * centered[t * M + v];
            const double r = std::clamp(cov / (norm[u] * norm[v]), -1.0, 1.0);
            rho[u * M + v] = rho[v * M + u] = r;
        }
    }
    return rho;
}

// Correlations of the frame's features over rows at or before train_end_week.
inline std::vector<double> pearson_matrix(const data::ModelFrame& frame, std::size_t train_end_week) {
    std::size_t T = 0;
    while (T < frame.rows() && frame.index[T] <= train_end_week) ++T;
    const std::size_t M = frame.num_features();
    return pearson_matrix(std::span<const double>(frame.features.data(), T * M), T, M);
}

struct Edge {
    std::size_t u = 0, v = 0;
    double weight = 0.0;
};

// Undirected weighted graph over variables. Weights define topology only.
struct VariableGraph {
    std::vector<std::string> node_names;
    std::vector<double> weights;  // M x M, symmetric, unit diagonal
    std::vector<std::vector<std::size_t>> neighborhoods;

    std::size_t size() const { return node_names.size(); }
    double weight(std::size_t u, std::size_t v) const { return weights[u * size() + v]; }
    bool connected(std::size_t u, std::size_t v) const { return weight(u, v) > 0.0; }

    // Mask of the subgraph induced by `nodes`, rows and columns in that order.
    AttentionMask induced_mask(const std::vector<std::size_t>& nodes) const {
        const std::size_t k = nodes.size();
        AttentionMask mask{k, k, std::vector<char>(k * k, 0)};
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) mask.allowed[i * k + j] = connected(nodes[i], nodes[j]) ? 1 : 0;
        return mask;
    }

    // Edges with u <= v, self-loops included.
    std::vector<Edge> edges() const {
        std::vector<Edge> out;
        for (std::size_t u = 0; u < size(); ++u)
            for (std::size_t v = u; v < size(); ++v)
                if (connected(u, v)) out.push_back({u, v, weight(u, v)});
        return out;
    }
};

inline constexpr double kDefaultEdgeThreshold = 0.05;

// a_uv = |rho_uv| when |rho_uv| >= threshold, else 0.
inline VariableGraph build_graph(const std::vector<double>& rho, std::vector<std::string> names,
                                 double threshold = kDefaultEdgeThreshold) {
    const std::size_t M = names.size();
    if (rho.size() != M * M) throw DimensionError("build_graph: correlation matrix does not match node count");
    VariableGraph g;
    g.node_names = std::move(names);
    g.weights.assign(M * M, 0.0);
    g.neighborhoods.resize(M);
    for (std::size_t u = 0; u < M; ++u)
        for (std::size_t v = 0; v < M; ++v) {
            const double a = std::abs(rho[u * M + v]);
            if (a >= threshold) {
                g.weights[u * M + v] = a;
                g.neighborhoods[u].push_back(v);
            }
        }
    return g;
}

// Rebuilds a graph from its edge list (checkpoint form).
inline VariableGraph graph_from_edges(std::vector<std::string> names, const std::vector<Edge>& edges) {
    const std::size_t M = names.size();
    VariableGraph g;
    g.node_names = std::move(names);
    g.weights.assign(M * M, 0.0);
    g.neighborhoods.resize(M);
    for (const auto& e : edges) {
        if (e.u >= M || e.v >= M) throw ArtifactError("graph edge refers to a missing node");
        g.weights[e.u * M + e.v] = g.weights[e.v * M + e.u] = e.weight;
    }
    for (std::size_t u = 0; u < M; ++u)
        for (std::size_t v = 0; v < M; ++v)
            if (g.weights[u * M + v] > 0.0) g.neighborhoods[u].push_back(v);
    return g;
}

}  // namespace epigraph::graph
