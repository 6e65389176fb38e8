#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "epigraph/core/gradcheck.hpp"
#include "epigraph/data/synth.hpp"
#include "epigraph/graph/gat.hpp"
#include "test_support.hpp"

using namespace epigraph;
using namespace epigraph::graph;

namespace {

// Per-pair two-pass covariance in long double.
double oracle_pearson(const std::vector<double>& X, std::size_t T, std::size_t M, std::size_t u, std::size_t v) {
    long double mu = 0, mv = 0;
    for (std::size_t t = 0; t < T; ++t) {
        mu += X[t * M + u];
        mv += X[t * M + v];
    }
    mu /= T;
    mv /= T;
    long double suv = 0, suu = 0, svv = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const long double a = X[t * M + u] - mu, b = X[t * M + v] - mv;
        suv += a * b;
        suu += a * a;
        svv += b * b;
    }
    return static_cast<double>(suv / std::sqrt(suu * svv));
}

std::vector<double> random_values(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

VariableGraph path_graph(std::size_t n) {
    std::vector<double> rho(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        rho[i * n + i] = 1.0;
        if (i + 1 < n) rho[i * n + i + 1] = rho[(i + 1) * n + i] = 0.5;
    }
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("n" + std::to_string(i));
    return build_graph(rho, names);
}

// Direct per-node, per-head GATv2 message passing.
std::vector<double> oracle_gat(const std::vector<double>& x, std::size_t N, std::size_t k, const AttentionMask& mask,
                               const GatLayer& L) {
    const std::size_t din = L.d_in(), H = L.heads, dh = L.d_head;
    std::vector<double> out(N * k * H * dh, 0.0);
    auto proj = [&](const Tensor& W, std::size_t n, std::size_t node, std::size_t h, std::size_t c) {
        double s = 0;
        for (std::size_t i = 0; i < din; ++i) s += x[(n * k + node) * din + i] * W[i * H * dh + h * dh + c];
        return s;
    };
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < k; ++i) {
                std::vector<double> e(k, 0.0);
                double mx = -1e300;
                for (std::size_t j = 0; j < k; ++j) {
                    if (!mask(i, j)) continue;
                    double s = 0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        const double z = proj(L.w1, n, i, h, c) + proj(L.w2, n, j, h, c);
                        s += L.attention[h * dh + c] * (z > 0 ? z : L.slope * z);
                    }
                    e[j] = s;
                    mx = std::max(mx, s);
                }
                double total = 0;
                for (std::size_t j = 0; j < k; ++j)
                    if (mask(i, j)) total += std::exp(e[j] - mx);
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0;
                    for (std::size_t j = 0; j < k; ++j)
                        if (mask(i, j)) acc += std::exp(e[j] - mx) / total * proj(L.w2, n, j, h, c);
                    out[(n * k + i) * H * dh + h * dh + c] = std::max(acc, 0.0);
                }
            }
    return out;
}

void set_values(Tensor t, const std::vector<double>& v) {
    auto dst = t.mutable_values();
    std::copy(v.begin(), v.end(), dst.begin());
}

std::vector<double> identity(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return v;
}

}  // namespace

TEST(Pearson, AffineAndNegation) {
    std::vector<double> X;
    for (int t = 0; t < 8; ++t) {
        const double x = std::sin(t) + t * 0.1;
        X.insert(X.end(), {x, 2 * x + 3, -x});
    }
    const auto rho = pearson_matrix(X, 8, 3);
    EXPECT_NEAR(rho[0 * 3 + 1], 1.0, 1e-15);
    EXPECT_NEAR(rho[0 * 3 + 2], -1.0, 1e-15);
}

TEST(Pearson, MatchesTwoPassOracleOnRandomTables) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t T = 10, M = 6;
        const auto X = random_values(T * M, rng);
        const auto rho = pearson_matrix(X, T, M);
        for (std::size_t u = 0; u < M; ++u)
            for (std::size_t v = 0; v < M; ++v) {
                const double expect = u == v ? 1.0 : oracle_pearson(X, T, M, u, v);
                ASSERT_NEAR(rho[u * M + v], expect, 1e-12);
                ASSERT_EQ(rho[u * M + v], rho[v * M + u]);
            }
    }
}

TEST(Pearson, ConstantSeriesAndShortInput) {
    const std::vector<double> X{1, 5, 2, 5, 3, 5};
    const auto rho = pearson_matrix(X, 3, 2);
    EXPECT_EQ(rho, (std::vector<double>{1, 0, 0, 1}));
    EXPECT_THROW(pearson_matrix(std::vector<double>{1, 2}, 1, 2), ContractError);
}

TEST(Pearson, FrameUsesTrainingRowsOnly) {
    auto syn = data::synth_generate({.weeks = 80, .predictors = 2}, 2);
    const auto frame = data::prepare_frame(syn.table, {"cases", 1, 50});
    auto altered = frame;
    for (std::size_t r = 0; r < altered.rows(); ++r)
        if (altered.index[r] > 50) altered.features[r * altered.num_features()] = 1e6 * static_cast<double>(r % 3);
    EXPECT_EQ(pearson_matrix(frame, 50), pearson_matrix(altered, 50));
    EXPECT_NE(pearson_matrix(frame, 80), pearson_matrix(altered, 80));
}

TEST(BuildGraph, ThresholdAbsoluteValueAndBoundary) {
    const std::vector<double> rho{1.0, -0.30, 0.04, 0.05,  //
                                  -0.30, 1.0, 0.0, 0.0,    //
                                  0.04, 0.0, 1.0, 0.0,     //
                                  0.05, 0.0, 0.0, 1.0};
    const auto g = build_graph(rho, {"a", "b", "c", "d"});
    EXPECT_EQ(g.weight(0, 1), 0.30);
    EXPECT_EQ(g.weight(0, 2), 0.0);
    EXPECT_EQ(g.weight(0, 3), 0.05);
    EXPECT_EQ(g.neighborhoods[0], (std::vector<std::size_t>{0, 1, 3}));
    EXPECT_EQ(g.neighborhoods[2], (std::vector<std::size_t>{2}));
}

TEST(BuildGraph, PropertySymmetricWithSelfLoops) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 30, M = 9;
        const auto rho = pearson_matrix(random_values(T * M, rng), T, M);
        std::vector<std::string> names(M, "v");
        const auto g = build_graph(rho, names);
        for (std::size_t u = 0; u < M; ++u) {
            EXPECT_EQ(g.weight(u, u), 1.0);
            for (std::size_t v = 0; v < M; ++v) {
                EXPECT_EQ(g.weight(u, v), g.weight(v, u));
                EXPECT_EQ(g.weight(u, v) == 0.0, std::abs(rho[u * M + v]) < 0.05);
            }
        }
        const auto rebuilt = graph_from_edges(names, g.edges());
        EXPECT_EQ(rebuilt.weights, g.weights);
        EXPECT_EQ(rebuilt.neighborhoods, g.neighborhoods);
    }
}

TEST(Gate, CardinalityForSeveralSizes) {
    for (auto [M, k] : std::vector<std::pair<std::size_t, std::size_t>>{{10, 1}, {50, 5}, {133, 14}, {190, 19}}) {
        ParamSet params;
        GateState gate(params, M, 0.10);
        EXPECT_EQ(gate.k, k);
        Rng rng(M);
        for (auto& v : gate.logits.mutable_values()) v = rng.normal();
        const auto out = gate_forward(Tensor::full({2, M, 3}, 1.0), gate);
        EXPECT_EQ(out.selected.size(), k);
        EXPECT_EQ(std::count(gate.last_mask.begin(), gate.last_mask.end(), 1), static_cast<long>(k));
    }
}

TEST(Gate, TiesGoToLowerIndices) {
    ParamSet params;
    GateState gate(params, 30, 0.10);
    EXPECT_EQ(gate.select(), (std::vector<std::size_t>{0, 1, 2}));
    gate.logits.mutable_values()[17] = 0.5;
    EXPECT_EQ(gate.select(), (std::vector<std::size_t>{0, 1, 17}));
}

TEST(Gate, DroppedRowsZeroAndReceiveNoGradient) {
    ParamSet params;
    GateState gate(params, 5, 0.4);
    set_values(gate.logits, {0.1, -1.0, 2.0, 0.3, -0.5});
    Rng rng(5);
    Tensor H = epigraph::testing::random_tensor({2, 5, 3}, rng);
    Tape tape;
    const auto out = gate_forward(H, gate);
    EXPECT_EQ(out.selected, (std::vector<std::size_t>{2, 3}));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t m : {0, 1, 4})
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.gated[(b * 5 + m) * 3 + c], 0.0);
    tape.backward(sum(out.gated));
    EXPECT_EQ(gate.logits.grad()[0], 0.0);
    EXPECT_EQ(gate.logits.grad()[1], 0.0);
    EXPECT_EQ(gate.logits.grad()[4], 0.0);
    EXPECT_NE(gate.logits.grad()[2], 0.0);
}

TEST(Gate, KLargerThanMIsContractError) {
    ParamSet params;
    GateState gate(params, 4, 0.5);
    gate.k = 5;
    EXPECT_THROW(gate.select(), ContractError);
    EXPECT_THROW(top_k(std::vector<double>{1, 2}, 3), ContractError);
}

TEST(GatAttention, SelfLoopOnlyAndNormalization) {
    ParamSet params;
    Rng rng(21);
    GatLayer layer(params, "g", 3, 2, 4, rng);
    Tensor x = epigraph::testing::random_tensor({4, 1, 3}, rng, false);
    const auto alpha1 = gatv2_attention(x, AttentionMask::full(1, 1), layer);
    for (double v : alpha1.vec()) EXPECT_EQ(v, 1.0);

    const auto g = path_graph(5);
    std::vector<std::size_t> all{0, 1, 2, 3, 4};
    Tensor x5 = epigraph::testing::random_tensor({3, 5, 3}, rng, false);
    const auto alpha = gatv2_attention(x5, g.induced_mask(all), layer);
    ASSERT_EQ(alpha.shape(), (Shape{3, 2, 5, 5}));
    for (std::size_t r = 0; r < 3 * 2 * 5; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) {
            const double a = alpha[r * 5 + j];
            EXPECT_GE(a, 0.0);
            if (!g.connected(r % 5, j)) EXPECT_EQ(a, 0.0);
            s += a;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(GatAttention, IdentityWeightsZeroVectorGiveUniformRows) {
    ParamSet params;
    Rng rng(22);
    GatLayer layer(params, "g", 4, 1, 4, rng);
    set_values(layer.w1, identity(4));
    set_values(layer.w2, identity(4));
    set_values(layer.attention, std::vector<double>(4, 0.0));
    const auto g = path_graph(4);
    const auto alpha = gatv2_attention(epigraph::testing::random_tensor({1, 4, 4}, rng, false),
                                       g.induced_mask({0, 1, 2, 3}), layer);
    EXPECT_DOUBLE_EQ(alpha[0 * 4 + 0], 0.5);
    EXPECT_DOUBLE_EQ(alpha[0 * 4 + 1], 0.5);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(alpha[1 * 4 + j], 1.0 / 3.0);
}

TEST(GatLayer, SingleNodeIdentityPassesInputThrough) {
    ParamSet params;
    Rng rng(23);
    GatLayer layer(params, "g", 3, 1, 3, rng);
    set_values(layer.w1, identity(3));
    set_values(layer.w2, identity(3));
    const Tensor x({1, 1, 3}, {0.5, 1.5, 2.5});
    EXPECT_EQ(gatv2_forward(x, AttentionMask::full(1, 1), layer).vec(), x.vec());
}

TEST(GatLayer, MatchesBruteForceOnPathGraph) {
    ParamSet params;
    Rng rng(24);
    GatLayer layer(params, "g", 3, 2, 4, rng);
    for (auto& v : layer.attention.mutable_values()) v = rng.uniform(-2, 2);
    const auto g = path_graph(3);
    const std::vector<std::size_t> all{0, 1, 2};
    Tensor x = epigraph::testing::random_tensor({5, 3, 3}, rng, false, 2.0);
    const auto out = gatv2_forward(x, g.induced_mask(all), layer);
    const auto expect = oracle_gat(x.vec(), 5, 3, g.induced_mask(all), layer);
    ASSERT_EQ(out.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(GatLayer, FullWidthFormKeepsUnselectedRowsZero) {
    ParamSet params;
    Rng rng(25);
    GatLayer layer(params, "g", 2, 2, 3, rng);
    const auto g = path_graph(6);
    const std::vector<std::size_t> sel{1, 2, 4};
    Tensor h = epigraph::testing::random_tensor({2, 6, 2}, rng, false);
    const auto out = gatv2_layer(h, g, sel, layer);
    ASSERT_EQ(out.shape(), (Shape{2, 6, 6}));
    const auto sub = gatv2_forward(index_select(h, 1, sel), g.induced_mask(sel), layer);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t m = 0; m < 6; ++m)
            for (std::size_t c = 0; c < 6; ++c) {
                const auto pos = std::find(sel.begin(), sel.end(), m);
                const double expect =
                    pos == sel.end() ? 0.0 : sub[(b * 3 + static_cast<std::size_t>(pos - sel.begin())) * 6 + c];
                EXPECT_EQ(out[(b * 6 + m) * 6 + c], expect);
            }
    EXPECT_THROW(gatv2_layer(epigraph::testing::random_tensor({2, 5, 2}, rng, false), g, sel, layer), ContractError);
}

TEST(GatLayer, GradientMatchesFiniteDifferences) {
    ParamSet params;
    Rng rng(26);
    GatLayer layer(params, "g", 4, 2, 4, rng);
    const auto g = path_graph(4);
    const auto mask = g.induced_mask({0, 1, 2, 3});
    Tensor x = epigraph::testing::random_tensor({2, 4, 4}, rng, true);
    const Tensor target = epigraph::testing::random_tensor({2, 4, 8}, rng, false);
    auto loss = [&] { return mse_loss(gatv2_forward(x, mask, layer), target); };
    auto named = params.entries();
    named.push_back({"x", x});
    const auto report = grad_check(loss, named);
    EXPECT_TRUE(report.passed()) << report.max_rel_error();
    EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(GatLayer, PermutationEquivariance) {
    Rng rng(27);
    const std::size_t M = 6;
    const auto rho = pearson_matrix(random_values(20 * M, rng), 20, M);
    const auto g = build_graph(rho, std::vector<std::string>(M, "v"));
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<double> rho_p(M * M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) rho_p[i * M + j] = rho[perm[i] * M + perm[j]];
    const auto gp = build_graph(rho_p, std::vector<std::string>(M, "v"));
    ParamSet params;
    GatLayer layer(params, "g", 3, 2, 2, rng);
    Tensor x = epigraph::testing::random_tensor({2, M, 3}, rng, false);
    std::vector<std::size_t> all(M);
    std::iota(all.begin(), all.end(), 0);
    const auto out = gatv2_forward(x, g.induced_mask(all), layer);
    const auto out_p = gatv2_forward(index_select(x, 1, perm), gp.induced_mask(all), layer);
    std::vector<std::size_t> inverse(M);
    for (std::size_t i = 0; i < M; ++i) inverse[perm[i]] = i;
    const auto restored = index_select(out_p, 1, inverse);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(restored[i], out[i], 1e-12);
}

TEST(EmbedStep, IdenticalNodeVectorsGiveProjection) {
    ParamSet params;
    Rng rng(28);
    Linear readout(params, "r", 3, 5, rng);
    for (auto& v : readout.bias.mutable_values()) v = rng.normal();
    const std::vector<double> v{0.2, -1.0, 3.0};
    std::vector<double> h;
    for (int m = 0; m < 4; ++m) h.insert(h.end(), v.begin(), v.end());
    const auto z = embed_step(Tensor({1, 4, 3}, h), {0, 2, 3}, readout);
    const auto expect = readout(Tensor({1, 3}, v));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(z[i], expect[i], 1e-15);
}

TEST(GraphEncoder, ShapeUnselectedInvarianceAndFullPathAgreement) {
    Rng rng(29);
    const std::size_t M = 20;
    const auto rho = pearson_matrix(random_values(40 * M, rng), 40, M);
    std::vector<std::string> names;
    for (std::size_t i = 0; i < M; ++i) names.push_back("f" + std::to_string(i));
    ParamSet params;
    GraphEncoderConfig cfg{.d_node = 4, .gat_layers = 2, .gat_heads = 2, .gat_head_dim = 3, .keep_fraction = 0.2,
                           .d_model = 8};
    GraphEncoder enc(params, build_graph(rho, names), cfg, rng);
    for (auto& v : enc.gate().logits.mutable_values()) v = rng.normal();
    Tensor x = epigraph::testing::random_tensor({2, 12, M}, rng, false);
    const auto z = enc(x);
    EXPECT_EQ(z.shape(), (Shape{2, 12, 8}));

    const auto sel = enc.gate().select();
    ASSERT_EQ(sel.size(), 4u);
    std::size_t unselected = 0;
    while (std::find(sel.begin(), sel.end(), unselected) != sel.end()) ++unselected;
    auto xv = x.vec();
    for (std::size_t r = 0; r < 24; ++r) xv[r * M + unselected] *= 2.0;
    EXPECT_EQ(enc(Tensor(x.shape(), xv)).vec(), z.vec());

    // same result through the full-width gate and layer forms
    Tensor h = enc.node_embed()(reshape(x, {24, M, 1}));
    if (enc.node_identity().defined()) h = add(h, enc.node_identity());
    auto gated = gate_forward(h, enc.gate());
    Tensor cur = gated.gated;
    for (const auto& layer : enc.layers()) cur = gatv2_layer(cur, enc.graph(), gated.selected, layer);
    const auto z_full = embed_step(cur, gated.selected, enc.readout());
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z_full[i], z[i], 1e-12);
}
