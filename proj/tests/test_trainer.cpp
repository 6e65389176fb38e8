#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>

#include "epigraph/data/synth.hpp"
#include "epigraph/train/reports.hpp"

using namespace epigraph;
using namespace epigraph::train;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.horizon = 2;
    cfg.max_lag = 2;
    cfg.train_end_week = 80;
    cfg.test_start_week = 90;
    cfg.test_end_week = 120;
    cfg.max_epochs = 4;
    cfg.batch_size = 8;
    cfg.graph = {.d_node = 4, .gat_layers = 1, .gat_heads = 2, .gat_head_dim = 2, .keep_fraction = 0.3};
    cfg.transformer = {.d_model = 8, .n_heads = 2, .d_ff = 8, .dropout = 0.05, .encoder_layers = 1, .decoder_layers = 1};
    return cfg;
}

data::SeriesTable tiny_table(std::size_t weeks = 120) {
    return data::synth_generate({.weeks = weeks, .predictors = 2, .driver = 1, .driver_lag = 2}, 5).table;
}

}  // namespace

TEST(Metrics, WorkedExample) {
    const std::vector<double> y{100, 200}, p{110, 180};
    const auto m = compute_metrics(p, y);
    EXPECT_NEAR(m.mape, 0.10, 1e-15);
    EXPECT_DOUBLE_EQ(m.mae, 15.0);
    EXPECT_DOUBLE_EQ(m.mse, 250.0);
    EXPECT_DOUBLE_EQ(m.rse_numerator, 500.0);
    EXPECT_DOUBLE_EQ(m.rse_denominator, 5000.0);
    EXPECT_NEAR(m.rse, std::sqrt(0.1), 1e-15);
}

TEST(Metrics, PerfectForecastIsZero) {
    const std::vector<double> y{3, 1, 4, 1, 5};
    const auto m = compute_metrics(y, y);
    EXPECT_EQ(m.mape, 0.0);
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.mse, 0.0);
    EXPECT_EQ(m.rse, 0.0);
}

TEST(Metrics, RandomVectorsMatchReferenceFormulas) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng.below(40));
        std::vector<double> y(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.uniform(1.0, 500.0);
            p[i] = y[i] + rng.normal() * 30.0;
        }
        const auto m = compute_metrics(p, y);
        const double N = static_cast<double>(n);
        const double mae = std::transform_reduce(p.begin(), p.end(), y.begin(), 0.0, std::plus<>(),
                                                 [](double a, double b) { return std::fabs(a - b); }) / N;
        const double sse = std::transform_reduce(p.begin(), p.end(), y.begin(), 0.0, std::plus<>(),
                                                 [](double a, double b) { return (a - b) * (a - b); });
        const double mape = std::transform_reduce(p.begin(), p.end(), y.begin(), 0.0, std::plus<>(),
                                                  [](double a, double b) { return std::fabs((a - b) / b); }) / N;
        const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / N;
        double sst = 0;
        for (double v : y) sst += (v - ybar) * (v - ybar);
        EXPECT_NEAR(m.mae, mae, 1e-12 * std::max(1.0, mae));
        EXPECT_NEAR(m.mse, sse / N, 1e-12 * std::max(1.0, sse / N));
        EXPECT_NEAR(m.mape, mape, 1e-12);
        if (sst > 0) EXPECT_NEAR(m.rse, std::sqrt(sse / sst), 1e-12 * std::max(1.0, std::sqrt(sse / sst)));
        EXPECT_LE(m.mae * m.mae, m.mse * (1 + 1e-12));
    }
}

TEST(Metrics, ZeroActualsAreLeftOutOfMape) {
    const std::vector<double> y{0, 10, 20}, p{5, 11, 18};
    const auto m = compute_metrics(p, y);
    EXPECT_EQ(m.zero_actuals, 1u);
    EXPECT_EQ(m.mape_count, 2u);
    EXPECT_NEAR(m.mape, (0.1 + 0.1) / 2, 1e-15);
    EXPECT_NEAR(m.mae, (5 + 1 + 2) / 3.0, 1e-15);
}

TEST(Metrics, ShapeErrors) {
    const std::vector<double> a{1, 2}, b{1};
    EXPECT_THROW(compute_metrics(a, b), ContractError);
    EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST(Split, ChronologicalWithTrailingValidation) {
    const auto cfg = tiny_config();
    const auto p = prepare(tiny_table(), cfg);
    const auto all = data::window(p.frame, cfg.effective_window(), cfg.horizon);
    const auto split = split_training(all, cfg.train_end_week, 0.1);
    std::size_t usable = 0;
    for (auto idx : all.origin_index) usable += idx + cfg.horizon - 1 <= cfg.train_end_week;
    EXPECT_EQ(split.validation.size(), usable / 10);
    EXPECT_EQ(split.train.size() + split.validation.size(), usable);
    EXPECT_LT(split.train.origin_index.back(), split.validation.origin_index.front());
    EXPECT_EQ(split.validation.origin_index.back() + cfg.horizon - 1, cfg.train_end_week);
}

TEST(Split, EmptyValidationIsAnError) {
    const auto cfg = tiny_config();
    const auto p = prepare(tiny_table(), cfg);
    const auto all = data::window(p.frame, cfg.effective_window(), cfg.horizon);
    // only a handful of windows end by week 14
    EXPECT_THROW(split_training(all, 14, 0.1), ContractError);
}

TEST(Config, TestRangeMustFollowTraining) {
    auto cfg = tiny_config();
    cfg.test_start_week = cfg.train_end_week;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.window = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Fit, DeterministicGivenSeed) {
    const auto cfg = tiny_config();
    const auto table = tiny_table();
    auto a = train_model(table, cfg);
    auto b = train_model(table, cfg);
    ASSERT_EQ(a.result.log.size(), b.result.log.size());
    for (std::size_t e = 0; e < a.result.log.size(); ++e) {
        EXPECT_EQ(a.result.log[e].train_loss, b.result.log[e].train_loss);
        EXPECT_EQ(a.result.log[e].validation_loss, b.result.log[e].validation_loss);
    }
    const auto pa = a.model.params().tensors(), pb = b.model.params().tensors();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].vec(), pb[i].vec());

    auto other = cfg;
    other.seed = 2;
    auto c = train_model(table, other);
    EXPECT_NE(c.result.log.front().train_loss, a.result.log.front().train_loss);
}

TEST(Fit, ReturnsBestCheckpoint) {
    const auto cfg = tiny_config();
    auto t = train_model(tiny_table(), cfg);
    EXPECT_LE(t.result.best_validation_loss, t.result.final_validation_loss);
    double lowest = INFINITY;
    for (const auto& e : t.result.log) lowest = std::min(lowest, e.validation_loss);
    EXPECT_EQ(t.result.best_validation_loss, lowest);

    // the restored parameters reproduce the best validation loss
    const auto all = data::window(t.frame, cfg.effective_window(), cfg.horizon);
    const auto split = split_training(all, cfg.train_end_week, cfg.validation_fraction);
    EXPECT_EQ(evaluate_loss(t.model, split.validation, cfg.batch_size), t.result.best_validation_loss);
}

TEST(Fit, EarlyStoppingAndStepCap) {
    auto cfg = tiny_config();
    cfg.max_epochs = 30;
    cfg.patience = 1;
    cfg.learning_rate = 0.5;  // large steps make a non-improving epoch near certain
    auto t = train_model(tiny_table(), cfg);
    EXPECT_TRUE(t.result.stopped_early);
    EXPECT_EQ(t.result.log.size(), t.result.best_epoch + 1);

    cfg = tiny_config();
    cfg.max_steps = 5;
    auto capped = train_model(tiny_table(), cfg);
    EXPECT_EQ(capped.result.steps, 5u);
}

TEST(WalkForward, OriginCountsForLongHorizon) {
    auto cfg = tiny_config();
    cfg.horizon = 16;
    cfg.train_end_week = 850;
    cfg.test_start_week = 900;
    cfg.test_end_week = 991;
    const auto p = prepare(tiny_table(1000), cfg);
    model::EpiGraphModel m(p.graph, cfg.model_config(), 1);
    EXPECT_EQ(m.config().window, 48u);

    const auto strict = walk_forward(m, p.frame, 900, 991);
    std::set<std::size_t> origins;
    for (const auto& r : strict.rows) origins.insert(r.origin_index);
    EXPECT_EQ(origins.size(), 77u);
    EXPECT_EQ(*origins.rbegin(), 976u);
    EXPECT_EQ(strict.skipped_origins.size(), 15u);
    EXPECT_EQ(strict.rows.size(), 77u * 16);

    const auto partial = walk_forward(m, p.frame, 900, 991, true);
    origins.clear();
    for (const auto& r : partial.rows) {
        origins.insert(r.origin_index);
        EXPECT_LE(r.origin_index + r.step - 1, 991u);
    }
    EXPECT_EQ(origins.size(), 92u);
    EXPECT_TRUE(partial.skipped_origins.empty());
}

TEST(WalkForward, FutureValuesDoNotLeakIntoForecasts) {
    const auto cfg = tiny_config();
    const auto table = tiny_table();
    auto trained = train_model(table, cfg);
    const auto base = walk_forward(trained.model, trained.frame, cfg.test_start_week, cfg.test_end_week);

    const std::size_t origin = 100;
    auto perturbed = table;
    for (std::size_t r = origin - 1; r < perturbed.rows(); ++r)  // rows hold epi-week indices r + 1
        for (std::size_t c = 0; c < perturbed.cols(); ++c) perturbed.at(r, c) += 1000.0 * static_cast<double>(c + 1);
    const auto frame = data::prepare_frame(perturbed, cfg.frame_options());
    const auto after = walk_forward(trained.model, frame, cfg.test_start_week, cfg.test_end_week);

    ASSERT_EQ(base.rows.size(), after.rows.size());
    std::size_t checked = 0;
    for (std::size_t i = 0; i < base.rows.size(); ++i)
        if (base.rows[i].origin_index <= origin) {
            EXPECT_EQ(base.rows[i].y_pred, after.rows[i].y_pred) << "origin " << base.rows[i].origin_index;
            ++checked;
        }
    EXPECT_GT(checked, 0u);
}

TEST(WalkForward, RepeatableAndAnchored) {
    const auto cfg = tiny_config();
    auto trained = train_model(tiny_table(), cfg);
    const auto a = walk_forward(trained.model, trained.frame, 90, 120);
    const auto b = walk_forward(trained.model, trained.frame, 90, 120);
    const auto c = walk_forward(trained.model, trained.frame, 90, 120, false, 5);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    ASSERT_EQ(a.rows.size(), c.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].y_pred, b.rows[i].y_pred);
        EXPECT_NEAR(a.rows[i].y_pred, c.rows[i].y_pred, 1e-9);  // batch size only changes rounding
    }
    for (const auto& r : a.rows)
        EXPECT_EQ(r.y_true, trained.frame.raw_target[*trained.frame.row_of(r.origin_index + r.step - 1)]);
}

TEST(Importance, AggregatesFrequencyAndRank) {
    std::vector<SeedSelection> runs(3);
    runs[0].ranked = {2, 0};
    runs[1].ranked = {2, 1};
    runs[2].ranked = {0, 2};
    for (auto& r : runs) r.gates = {0.6, 0.5, 0.7, 0.1};
    const auto h = aggregate_runs(4, 4, runs);
    EXPECT_DOUBLE_EQ(h.frequency[2], 1.0);
    EXPECT_DOUBLE_EQ(h.frequency[0], 2.0 / 3);
    EXPECT_DOUBLE_EQ(h.frequency[3], 0.0);
    EXPECT_DOUBLE_EQ(h.mean_rank[2], 4.0 / 3);
    EXPECT_DOUBLE_EQ(h.mean_rank[0], 1.5);
    EXPECT_TRUE(std::isnan(h.mean_rank[3]));
    EXPECT_EQ(h.consensus, (std::vector<std::size_t>{2, 0}));
    EXPECT_EQ(h.rank_of(0), 2u);
    EXPECT_EQ(h.rank_of(1), 0u);
}

TEST(Importance, SingleSeedIsItsOwnSelection) {
    auto cfg = tiny_config();
    cfg.max_epochs = 2;
    const auto rep = run_importance(tiny_table(), cfg, {2}, 1, 1);
    ASSERT_EQ(rep.horizons.size(), 1u);
    const auto& h = rep.horizons[0];
    EXPECT_EQ(h.consensus, h.runs[0].ranked);
    EXPECT_EQ(h.k, graph::gate_k(cfg.graph.keep_fraction, rep.feature_names.size()));
    for (auto f : h.consensus) EXPECT_DOUBLE_EQ(h.frequency[f], 1.0);
}

TEST(Importance, ThreadCountDoesNotChangeResults) {
    auto cfg = tiny_config();
    cfg.max_epochs = 2;
    const auto serial = run_importance(tiny_table(), cfg, {2}, 3, 1);
    const auto threaded = run_importance(tiny_table(), cfg, {2}, 3, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(serial.horizons[0].runs[i].gates, threaded.horizons[0].runs[i].gates);
        EXPECT_EQ(serial.horizons[0].runs[i].seed, cfg.seed + i);
    }
}

TEST(Importance, WorkerThreadsHonorEnvironmentCap) {
    ::setenv("EPIGRAPH_THREADS", "1", 1);
    EXPECT_EQ(worker_threads(8), 1u);
    ::setenv("EPIGRAPH_THREADS", "zero", 1);
    EXPECT_THROW(worker_threads(8), ConfigError);
    ::unsetenv("EPIGRAPH_THREADS");
    EXPECT_GE(worker_threads(8), 1u);
    EXPECT_EQ(worker_threads(1), 1u);
}

TEST(Importance, ParallelForRunsEveryJobAndRethrows) {
    std::vector<int> hits(50, 0);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
    EXPECT_EQ(std::accumulate(hits.begin(), hits.end(), 0), 50);
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw ContractError("boom"); }), ContractError);
}

TEST(Reports, ImportanceTableMarksAbsentRanks) {
    ImportanceReport rep;
    rep.feature_names = {"a", "b", "c"};
    HorizonImportance h2, h4;
    h2.horizon = 2;
    h2.consensus = {0, 1};
    h4.horizon = 4;
    h4.consensus = {0, 2};
    rep.horizons = {h2, h4};
    std::ostringstream out;
    write_importance_table(out, rep);
    EXPECT_EQ(out.str(), "feature,2 weeks,4 weeks\na,1,1\nb,2,-\nc,-,2\n");
}

TEST(Reports, ChartsAndTablesAreDeterministic) {
    const auto cfg = tiny_config();
    auto trained = train_model(tiny_table(), cfg);
    const std::vector<ForecastReport> reps{walk_forward(trained.model, trained.frame, 90, 120)};
    const auto svg = overview_chart(trained.frame, reps, 90, 120);
    EXPECT_EQ(svg, overview_chart(trained.frame, reps, 90, 120));
    EXPECT_NE(svg.find("stroke=\"#000000\""), std::string::npos);
    EXPECT_NE(svg.find(horizon_color(2)), std::string::npos);
    const auto one = origin_chart(trained.frame, reps, 95, 10);
    EXPECT_EQ(one, origin_chart(trained.frame, reps, 95, 10));

    std::ostringstream a, b;
    write_forecast_csv(a, reps);
    write_forecast_csv(b, reps);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "origin_week,origin_date,step,horizon,y_true,y_pred");
    const auto doc = metrics_document(reps, {{"seed", cfg.seed}});
    EXPECT_EQ(doc["horizons"][0]["overall"]["count"], reps[0].rows.size());
}

TEST(Reports, FixedTwoDecimals) {
    EXPECT_EQ(fixed2(1.005), "1.00");
    EXPECT_EQ(fixed2(-0.001), "0.00");
    EXPECT_EQ(fixed2(12.345678), "12.35");
    EXPECT_EQ(svg_escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
}
