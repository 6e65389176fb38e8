#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "epigraph/train/pipeline.hpp"

namespace epigraph::train {

// Worker count: hardware concurrency, capped by EPIGRAPH_THREADS when set.
inline std::size_t worker_threads(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("EPIGRAPH_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1) throw ConfigError("EPIGRAPH_THREADS must be a positive integer");
        n = std::min(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs job(i) for i in [0, count) on up to `threads` workers. The first
// exception thrown by any job is rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

struct SeedSelection {
    std::uint64_t seed = 0;
    std::vector<std::size_t> ranked;  // selected features, largest gate first
    std::vector<double> gates;        // gate value of every feature
    double best_validation_loss = 0.0;
};

struct HorizonImportance {
    std::size_t horizon = 0;
    std::size_t k = 0;
    std::vector<SeedSelection> runs;
    std::vector<double> frequency;  // share of seeds selecting each feature
    std::vector<double> mean_rank;  // over the seeds that selected it; NaN if none
    std::vector<double> mean_gate;  // over all seeds
    std::vector<std::size_t> consensus;  // top-k features, best first

    // 1-based consensus rank of a feature, 0 when outside the top k.
    std::size_t rank_of(std::size_t feature) const {
        const auto it = std::find(consensus.begin(), consensus.end(), feature);
        return it == consensus.end() ? 0 : static_cast<std::size_t>(it - consensus.begin()) + 1;
    }
};

struct ImportanceReport {
    std::vector<std::string> feature_names;
    std::vector<std::uint64_t> seeds;
    std::vector<HorizonImportance> horizons;
};

// Ranks features by selection frequency, then mean rank, then index.
inline HorizonImportance aggregate_runs(std::size_t horizon, std::size_t M, std::vector<SeedSelection> runs) {
    HorizonImportance h;
    h.horizon = horizon;
    h.k = runs.empty() ? 0 : runs.front().ranked.size();
    h.frequency.assign(M, 0.0);
    h.mean_gate.assign(M, 0.0);
    std::vector<double> rank_sum(M, 0.0);
    for (const auto& r : runs) {
        if (r.ranked.size() != h.k) throw ContractError("importance: runs selected different numbers of features");
        for (std::size_t pos = 0; pos < r.ranked.size(); ++pos) {
            h.frequency[r.ranked[pos]] += 1.0;
            rank_sum[r.ranked[pos]] += static_cast<double>(pos + 1);
        }
        for (std::size_t m = 0; m < M; ++m) h.mean_gate[m] += r.gates[m];
    }
    const auto n = static_cast<double>(runs.size());
    h.mean_rank.assign(M, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t m = 0; m < M; ++m) {
        if (h.frequency[m] > 0) h.mean_rank[m] = rank_sum[m] / h.frequency[m];
        h.frequency[m] /= n;
        h.mean_gate[m] /= n;
    }
    std::vector<std::size_t> order;
    for (std::size_t m = 0; m < M; ++m)
        if (h.frequency[m] > 0) order.push_back(m);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (h.frequency[a] != h.frequency[b]) return h.frequency[a] > h.frequency[b];
        return h.mean_rank[a] < h.mean_rank[b];
    });
    order.resize(std::min(order.size(), h.k));
    h.consensus = std::move(order);
    h.runs = std::move(runs);
    return h;
}

inline SeedSelection selection_of(const model::EpiGraphModel& model, std::uint64_t seed, double best_loss) {
    SeedSelection s;
    s.seed = seed;
    s.gates = model.spatial().gate().gate_values();
    s.ranked = graph::top_k(s.gates, model.spatial().gate().k);
    std::stable_sort(s.ranked.begin(), s.ranked.end(),
                     [&](std::size_t a, std::size_t b) { return s.gates[a] > s.gates[b]; });
    s.best_validation_loss = best_loss;
    return s;
}

// Trains n_seeds independent models per horizon (seeds base.seed, base.seed+1, ...)
// and aggregates their gate selections. `progress` is called after each run.
inline ImportanceReport run_importance(const data::SeriesTable& table, const TrainConfig& base,
                                       const std::vector<std::size_t>& horizons, std::size_t n_seeds,
                                       std::size_t threads,
                                       const std::function<void(std::size_t, std::uint64_t)>& progress = {}) {
    if (n_seeds < 1) throw ConfigError("importance needs at least one seed");
    if (horizons.empty()) throw ConfigError("importance needs at least one horizon");
    ImportanceReport report;
    for (std::size_t i = 0; i < n_seeds; ++i) report.seeds.push_back(base.seed + i);
    report.feature_names = prepare(table, base).frame.feature_names;
    const std::size_t M = report.feature_names.size();
    std::vector<SeedSelection> runs(horizons.size() * n_seeds);
    std::mutex progress_mutex;
    parallel_for(runs.size(), threads, [&](std::size_t job) {
        TrainConfig cfg = base;
        cfg.horizon = horizons[job / n_seeds];
        cfg.seed = report.seeds[job % n_seeds];
        auto trained = train_model(table, cfg);
        runs[job] = selection_of(trained.model, cfg.seed, trained.result.best_validation_loss);
        if (progress) {
            std::lock_guard lock(progress_mutex);
            progress(cfg.horizon, cfg.seed);
        }
    });
    for (std::size_t h = 0; h < horizons.size(); ++h) {
        std::vector<SeedSelection> per(runs.begin() + static_cast<std::ptrdiff_t>(h * n_seeds),
                                       runs.begin() + static_cast<std::ptrdiff_t>((h + 1) * n_seeds));
        report.horizons.push_back(aggregate_runs(horizons[h], M, std::move(per)));
    }
    return report;
}

}  // namespace epigraph::train
