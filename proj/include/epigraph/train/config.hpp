#pragma once

#include <string>

#include "epigraph/model/model.hpp"

namespace epigraph::train {

struct TrainConfig {
    std::size_t horizon = 2;
    std::size_t window = 0;  // 0: three times the horizon
    double learning_rate = 1e-4;
    std::size_t max_epochs = 100;
    std::size_t patience = 20;
    double min_delta = 1e-8;
    std::size_t batch_size = 32;
    double validation_fraction = 0.10;
    std::size_t max_steps = 0;  // 0: no cap on optimizer steps
    std::uint64_t seed = 1;

    std::string target = "cases";
    std::size_t max_lag = 6;
    std::size_t train_end_week = 850;
    std::size_t test_start_week = 900;
    std::size_t test_end_week = 991;
    bool truncate_tail = false;  // keep partial forecasts of late origins
    double edge_threshold = 0.05;

    graph::GraphEncoderConfig graph;
    model::TransformerConfig transformer;

    std::size_t effective_window() const { return window == 0 ? 3 * horizon : window; }

    model::ModelConfig model_config() const {
        model::ModelConfig m;
        m.graph = graph;
        m.graph.d_model = transformer.d_model;
        m.transformer = transformer;
        m.window = effective_window();
        m.horizon = horizon;
        return m;
    }

    data::FrameOptions frame_options() const { return {target, max_lag, train_end_week}; }

    void validate() const {
        if (horizon == 0) throw ConfigError("horizon must be positive");
        if (effective_window() < horizon) throw ConfigError("window must be at least the horizon");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw ConfigError("validation_fraction must lie in (0, 1)");
        if (test_start_week <= train_end_week)
            throw ConfigError("test range must start after train_end_week (" + std::to_string(train_end_week) + ")");
        if (test_end_week < test_start_week) throw ConfigError("test range is empty");
        if (!(edge_threshold >= 0.0 && edge_threshold <= 1.0)) throw ConfigError("edge_threshold must lie in [0, 1]");
        model_config().validate();
    }
};

}  // namespace epigraph::train
