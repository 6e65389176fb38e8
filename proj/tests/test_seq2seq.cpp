#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "epigraph/data/synth.hpp"
#include "epigraph/model/checkpoint.hpp"
#include "test_support.hpp"

using namespace epigraph;
using namespace epigraph::model;

namespace {

graph::VariableGraph random_graph(std::size_t M, Rng& rng) {
    std::vector<double> x(30 * M);
    for (auto& v : x) v = rng.uniform(-1, 1);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < M; ++i) names.push_back("f" + std::to_string(i) + " (0)");
    return graph::build_graph(graph::pearson_matrix(x, 30, M), names);
}

ModelConfig tiny_config(std::size_t w = 4, std::size_t H = 2) {
    ModelConfig cfg;
    cfg.graph = {.d_node = 2, .gat_layers = 1, .gat_heads = 2, .gat_head_dim = 2, .keep_fraction = 0.5, .d_model = 4};
    cfg.transformer = {.d_model = 4, .n_heads = 2, .d_ff = 6, .dropout = 0.0, .encoder_layers = 1,
                       .decoder_layers = 1};
    cfg.window = w;
    cfg.horizon = H;
    return cfg;
}

EpiGraphModel tiny_model(std::uint64_t seed, std::size_t M = 4, ModelConfig cfg = tiny_config()) {
    Rng rng(seed + 1000);
    EpiGraphModel m(random_graph(M, rng), cfg, seed);
    // distinct logits keep the top-k selection stable under small perturbations
    auto logits = m.spatial().gate().logits.mutable_values();
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = 0.3 * static_cast<double>((i * 7) % logits.size());
    return m;
}

Tensor random_input(Shape s, Rng& rng) { return epigraph::testing::random_tensor(std::move(s), rng, false); }

}  // namespace

TEST(PositionalEncoding, KnownEntriesAndReproducible) {
    const auto P = positional_encoding(5, 8);
    EXPECT_EQ(P[0], 0.0);
    EXPECT_EQ(P[1], 1.0);
    EXPECT_EQ(P[1 * 8 + 0], std::sin(1.0));
    EXPECT_EQ(P[1 * 8 + 1], std::cos(1.0));
    EXPECT_EQ(P[3 * 8 + 2], std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0)));
    EXPECT_EQ(positional_encoding(5, 8).vec(), P.vec());
}

TEST(Attention, RowsNormalizedAndScaledLogits) {
    ParamSet params;
    Rng rng(1);
    MultiHeadAttention mha(params, "a", 8, 2, rng);
    const Tensor x = random_input({3, 5, 8}, rng);
    Tensor weights;
    mha(x, x, AttentionMask::full(5, 5), 0.0, {}, &weights);
    ASSERT_EQ(weights.shape(), (Shape{3, 2, 5, 5}));
    // oracle: softmax of unscaled Q.K / sqrt(4) computed entry by entry
    const Tensor Q = mha.query()(x);
    const auto& kp = params.at("a.k.weight");
    const auto& kb = params.at("a.k.bias");
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < 5; ++i) {
                std::vector<double> logit(5);
                for (std::size_t j = 0; j < 5; ++j) {
                    double s = 0;
                    for (std::size_t c = 0; c < 4; ++c) {
                        double kval = kb[h * 4 + c];
                        for (std::size_t e = 0; e < 8; ++e) kval += x[(b * 5 + j) * 8 + e] * kp[e * 8 + h * 4 + c];
                        s += Q[(b * 5 + i) * 8 + h * 4 + c] * kval;
                    }
                    logit[j] = s / 2.0;
                }
                double mx = *std::max_element(logit.begin(), logit.end()), total = 0;
                for (double v : logit) total += std::exp(v - mx);
                double row = 0;
                for (std::size_t j = 0; j < 5; ++j) {
                    const double a = weights[((b * 2 + h) * 5 + i) * 5 + j];
                    EXPECT_NEAR(a, std::exp(logit[j] - mx) / total, 1e-12);
                    row += a;
                }
                EXPECT_NEAR(row, 1.0, 1e-12);
            }
}

TEST(Attention, SinglePositionHasUnitWeight) {
    ParamSet params;
    Rng rng(2);
    TransformerConfig cfg{.d_model = 4, .n_heads = 2, .d_ff = 4, .dropout = 0.0};
    EncoderLayer layer(params, "e", cfg, rng);
    Tensor weights;
    layer(random_input({2, 1, 4}, rng), {}, &weights);
    for (double v : weights.vec()) EXPECT_EQ(v, 1.0);
}

TEST(Attention, MaskLengthMismatchIsContractError) {
    ParamSet params;
    Rng rng(3);
    MultiHeadAttention mha(params, "a", 4, 2, rng);
    const Tensor x = random_input({1, 3, 4}, rng);
    EXPECT_THROW(mha(x, x, AttentionMask::causal(4), 0.0, {}), ContractError);
    EXPECT_THROW(mha(x, random_input({1, 3, 6}, rng), AttentionMask::full(3, 3), 0.0, {}), ContractError);
    EXPECT_THROW(Tensor::zeros({1, 0, 4}), DimensionError);
}

TEST(Decoder, CrossAttentionRowsSumToOne) {
    ParamSet params;
    Rng rng(4);
    TransformerConfig cfg{.d_model = 4, .n_heads = 2, .d_ff = 4, .dropout = 0.0};
    DecoderLayer layer(params, "d", cfg, rng);
    Tensor self_w, cross_w;
    layer(random_input({2, 4, 4}, rng), random_input({2, 7, 4}, rng), {}, &self_w, &cross_w);
    ASSERT_EQ(cross_w.shape(), (Shape{2, 2, 4, 7}));
    for (std::size_t r = 0; r < 16; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 7; ++j) s += cross_w[r * 7 + j];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t j = r % 4 + 1; j < 4; ++j) EXPECT_EQ(self_w[r * 4 + j], 0.0);
}

TEST(Decoder, FutureHistoryDoesNotReachEarlierPositions) {
    auto model = tiny_model(5, 4, tiny_config(6, 2));
    Rng rng(5);
    const Tensor x = random_input({2, 6, 4}, rng);
    const Tensor y = random_input({2, 6}, rng);
    const auto base = model.decoder_states(x, y, {});
    for (std::size_t j = 1; j < 6; ++j) {
        auto yv = y.vec();
        yv[j] += 3.0;
        yv[6 + j] -= 2.0;
        const auto pert = model.decoder_states(x, Tensor(y.shape(), yv), {});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < j; ++i)
                for (std::size_t c = 0; c < 4; ++c)
                    ASSERT_EQ(pert[(b * 6 + i) * 4 + c], base[(b * 6 + i) * 4 + c]) << "i=" << i << " j=" << j;
        EXPECT_NE(pert[(0 * 6 + j) * 4], base[(0 * 6 + j) * 4]);
    }
}

TEST(Head, UsesLastHPositionsAndRejectsShortWindows) {
    auto model = tiny_model(6, 4, tiny_config(6, 2));
    Rng rng(6);
    const Tensor x = random_input({3, 6, 4}, rng);
    const Tensor y = random_input({3, 6}, rng);
    const auto states = model.decoder_states(x, y, {});
    const auto out = model(x, y, {});
    ASSERT_EQ(out.shape(), (Shape{3, 2}));
    const auto& W = model.head_layer().weight;
    const auto& b = model.head_layer().bias;
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t h = 0; h < 2; ++h) {
            double s = b[0];
            for (std::size_t c = 0; c < 4; ++c) s += states[(n * 6 + 4 + h) * 4 + c] * W[c];
            EXPECT_NEAR(out[n * 2 + h], s, 1e-14);
        }
    EXPECT_THROW(EpiGraphModel::head(states, 7, model.head_layer()), ContractError);
    Rng grng(1);
    EXPECT_THROW(EpiGraphModel(random_graph(4, grng), tiny_config(3, 4), 1), ContractError);
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
    auto model = tiny_model(7);
    Rng rng(7);
    const Tensor x = random_input({2, 4, 4}, rng);
    const Tensor y = random_input({2, 4}, rng);
    const Tensor target = random_input({2, 2}, rng);
    auto loss = [&] { return mse_loss(model(x, y, {}), target); };
    const auto report = grad_check(loss, model.params().entries());
    for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
    EXPECT_LT(report.max_rel_error(), 1e-4);
    bool has_wq = false;
    for (const auto& e : report.entries) has_wq |= e.name == "encoder0.self_attn.q.weight";
    EXPECT_TRUE(has_wq);
}

TEST(Model, DropoutOnlyInTraining) {
    auto cfg = tiny_config();
    cfg.transformer.dropout = 0.3;
    auto model = tiny_model(8, 4, cfg);
    Rng rng(8);
    const Tensor x = random_input({2, 4, 4}, rng);
    const Tensor y = random_input({2, 4}, rng);
    const auto a = model(x, y, {});
    EXPECT_EQ(model(x, y, {}).vec(), a.vec());
    Rng drop(1);
    EXPECT_NE(model(x, y, {true, &drop}).vec(), a.vec());
}

TEST(Forecast, ReverseDifferencingAnchors) {
    EXPECT_EQ(reverse_difference(std::vector<double>{3, -1}, 100), (std::vector<double>{103, 102}));
    EXPECT_EQ(reverse_difference(std::vector<double>{0, 0, 0}, 42), (std::vector<double>{42, 42, 42}));
    EXPECT_THROW(reverse_difference(std::vector<double>{1}, std::nan("")), ContractError);
}

TEST(Forecast, LevelsFromScaledDeltasAreDeterministic) {
    auto syn = data::synth_generate({.weeks = 60, .predictors = 2}, 3);
    const auto frame = data::prepare_frame(syn.table, {"cases", 1, 40});
    const auto ds = data::window(frame, 4, 2);
    Rng grng(3);
    EpiGraphModel model(graph::build_graph(graph::pearson_matrix(frame, 40), frame.feature_names), tiny_config(), 3);
    const std::vector<std::size_t> samples{0, 5, 10};
    const auto a = forecast(model, ds, samples, frame.target_scaler);
    EXPECT_EQ(forecast(model, ds, samples, frame.target_scaler), a);
    const auto batch = make_batch(ds, samples);
    const auto scaled = model(batch.inputs, batch.history, {});
    for (std::size_t b = 0; b < 3; ++b) {
        const double d0 = frame.target_scaler.invert(scaled[b * 2]);
        const double d1 = frame.target_scaler.invert(scaled[b * 2 + 1]);
        EXPECT_EQ(a[b][0], ds.last_observed[samples[b]] + d0);
        EXPECT_EQ(a[b][1], a[b][0] + d1);
    }
}

TEST(Checkpoint, RoundTripIsExact) {
    auto model = tiny_model(9);
    Rng rng(9);
    for (const auto& e : model.params().entries()) {
        Tensor t = e.tensor;
        for (auto& v : t.mutable_values()) v += rng.normal() * 1e-3;
    }
    data::ScalerState fs;
    fs.names = model.spatial().graph().node_names;
    for (std::size_t i = 0; i < fs.names.size(); ++i) fs.ranges.push_back({-0.1 * i, 1.0 / 3.0 + i});
    auto c = capture(model, {"cases", 2, 40}, 9, fs, {-2.5, 1.0 / 7.0});
    c.metadata["best_epoch"] = "3";
    std::ostringstream out;
    save_checkpoint(out, c);
    std::istringstream in(out.str());
    const auto back = load_checkpoint(in);
    EXPECT_EQ(back.metadata.at("best_epoch"), "3");
    EXPECT_EQ(back.feature_scaler.ranges[2].max, 1.0 / 3.0 + 2);
    EXPECT_EQ(back.target_scaler.max, 1.0 / 7.0);
    auto restored = restore(back);
    const Tensor x = random_input({2, 4, 4}, rng);
    const Tensor y = random_input({2, 4}, rng);
    EXPECT_EQ(restored(x, y, {}).vec(), model(x, y, {}).vec());
    std::ostringstream again;
    save_checkpoint(again, back);
    EXPECT_EQ(again.str(), out.str());
}

TEST(Checkpoint, MalformedInputIsArtifactError) {
    std::istringstream bad("something else\n");
    EXPECT_THROW(load_checkpoint(bad), ArtifactError);
    auto model = tiny_model(10);
    data::ScalerState fs;
    fs.names = model.spatial().graph().node_names;
    fs.ranges.assign(fs.names.size(), {});
    std::ostringstream out;
    save_checkpoint(out, capture(model, {}, 10, fs, {}));
    std::string text = out.str();
    std::istringstream truncated(text.substr(0, text.size() / 2));
    EXPECT_THROW(load_checkpoint(truncated), ArtifactError);
    EXPECT_THROW(load_checkpoint_file("/nonexistent/ckpt.txt"), ArtifactError);
}
