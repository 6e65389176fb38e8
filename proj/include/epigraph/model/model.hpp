#pragma once

#include <string>
#include <vector>

#include "epigraph/data/preprocess.hpp"
#include "epigraph/graph/gat.hpp"
#include "epigraph/model/transformer.hpp"

namespace epigraph::model {

struct ModelConfig {
    graph::GraphEncoderConfig graph;
    TransformerConfig transformer;
    std::size_t window = 6;
    std::size_t horizon = 2;

    void validate() const {
        transformer.validate();
        if (graph.d_model != transformer.d_model) throw ConfigError("graph readout width must equal d_model");
        if (horizon == 0) throw ConfigError("horizon must be positive");
        if (window < horizon)
            throw ContractError("window " + std::to_string(window) + " is shorter than horizon " +
                                std::to_string(horizon));
    }
};

// Gate + GATv2 spatial encoder, transformer encoder-decoder, linear head on
// the last H decoder positions. Outputs scaled first differences.
class EpiGraphModel {
public:
    EpiGraphModel(graph::VariableGraph graph, const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        spatial_ = graph::GraphEncoder(params_, std::move(graph), cfg.graph, rng);
        target_embed_ = Linear(params_, "target_embed", 1, cfg.transformer.d_model, rng);
        transformer_ = Transformer(params_, cfg.transformer, rng);
        head_ = Linear(params_, "head", cfg.transformer.d_model, 1, rng);
    }
    EpiGraphModel(const EpiGraphModel&) = delete;
    EpiGraphModel& operator=(const EpiGraphModel&) = delete;
    EpiGraphModel(EpiGraphModel&&) = default;
    EpiGraphModel& operator=(EpiGraphModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    graph::GraphEncoder& spatial() { return spatial_; }
    const graph::GraphEncoder& spatial() const { return spatial_; }
    const Transformer& transformer() const { return transformer_; }
    const Linear& head_layer() const { return head_; }

    // Decoder states [B, w, d] for inputs [B, w, M] and history [B, w].
    Tensor decoder_states(const Tensor& inputs, const Tensor& history, RunMode mode) {
        if (inputs.rank() != 3 || history.rank() != 2 || history.dim(0) != inputs.dim(0) ||
            history.dim(1) != inputs.dim(1))
            throw ContractError("model: inputs " + to_string(inputs.shape()) + " and decoder history " +
                                to_string(history.shape()) + " do not line up");
        const std::size_t B = history.dim(0), w = history.dim(1);
        const Tensor memory = transformer_.encode(spatial_(inputs), mode);
        const Tensor y = target_embed_(reshape(history, {B, w, 1}));
        return transformer_.decode(y, memory, mode);
    }

    // [B, w, M] x [B, w] -> [B, H]
    Tensor operator()(const Tensor& inputs, const Tensor& history, RunMode mode) {
        return head(decoder_states(inputs, history, mode), cfg_.horizon, head_);
    }

    // Output projection on the last H positions of decoder states [B, w, d].
    static Tensor head(const Tensor& states, std::size_t H, const Linear& proj) {
        const std::size_t B = states.dim(0), w = states.dim(1);
        if (w < H)
            throw ContractError("head: window " + std::to_string(w) + " is shorter than horizon " + std::to_string(H));
        return reshape(proj(slice(states, 1, w - H, H)), {B, H});
    }

private:
    ModelConfig cfg_;
    ParamSet params_;
    graph::GraphEncoder spatial_;
    Linear target_embed_;
    Transformer transformer_;
    Linear head_;
};

struct Batch {
    Tensor inputs;   // [B, w, M]
    Tensor history;  // [B, w]
    Tensor targets;  // [B, H]
};

inline Batch make_batch(const data::WindowedDataset& ds, const std::vector<std::size_t>& samples) {
    if (samples.empty()) throw ContractError("empty batch");
    const std::size_t w = ds.window, H = ds.horizon, M = ds.num_features, B = samples.size();
    std::vector<double> x, h, y;
    x.reserve(B * w * M);
    for (auto n : samples) {
        if (n >= ds.size()) throw ContractError("sample index out of range");
        x.insert(x.end(), ds.inputs.begin() + static_cast<std::ptrdiff_t>(n * w * M),
                 ds.inputs.begin() + static_cast<std::ptrdiff_t>((n + 1) * w * M));
        h.insert(h.end(), ds.decoder_inputs.begin() + static_cast<std::ptrdiff_t>(n * w),
                 ds.decoder_inputs.begin() + static_cast<std::ptrdiff_t>((n + 1) * w));
        y.insert(y.end(), ds.targets.begin() + static_cast<std::ptrdiff_t>(n * H),
                 ds.targets.begin() + static_cast<std::ptrdiff_t>((n + 1) * H));
    }
    return {Tensor({B, w, M}, std::move(x)), Tensor({B, w}, std::move(h)), Tensor({B, H}, std::move(y))};
}

// Levels from predicted differences in original units: y_{t+h} = d_{t+h} + y_{t+h-1}.
inline std::vector<double> reverse_difference(std::span<const double> deltas, double last_observed) {
    if (!std::isfinite(last_observed)) throw ContractError("forecast needs a finite last observed value");
    return data::inverse_difference(deltas, last_observed);
}

// Level forecasts for the listed samples in evaluation mode, one row of H
// values per sample.
inline std::vector<std::vector<double>> forecast(EpiGraphModel& model, const data::WindowedDataset& ds,
                                                 const std::vector<std::size_t>& samples,
                                                 const data::MinMax& target_scaler) {
    NoGradScope no_grad;
    const Batch batch = make_batch(ds, samples);
    const Tensor scaled = model(batch.inputs, batch.history, RunMode{});
    const std::size_t H = ds.horizon;
    std::vector<std::vector<double>> out;
    for (std::size_t b = 0; b < samples.size(); ++b) {
        std::vector<double> deltas(H);
        for (std::size_t h = 0; h < H; ++h) deltas[h] = target_scaler.invert(scaled[b * H + h]);
        out.push_back(reverse_difference(deltas, ds.last_observed[samples[b]]));
    }
    return out;
}

}  // namespace epigraph::model
