#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "epigraph/core/tensor.hpp"

namespace epigraph {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool passed() const {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
    double max_rel_error() const {
        double worst = 0.0;
        for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
        return worst;
    }
};

// Relative error with an absolute floor so that vanishing gradients compare
// against roundoff rather than against zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares tape gradients of `loss_fn` against central finite differences for
// every element of every parameter. `loss_fn` must rebuild the loss from the
// parameters' current values and be deterministic.
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                                  double epsilon = 1e-5, double tolerance = 1e-4) {
    for (auto& p : params) p.tensor.zero_grad();
    {
        Tape tape;
        const Tensor loss = loss_fn();
        tape.backward(loss);
    }
    GradCheckReport report;
    report.tolerance = tolerance;
    NoGradScope no_grad;
    for (auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        const std::vector<double> analytic =
            p.tensor.has_grad() ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                : std::vector<double>(p.tensor.size(), 0.0);
        auto values = p.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + epsilon;
            const double up = loss_fn().item();
            values[i] = saved - epsilon;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double rel = relative_error(analytic[i], numeric);
            if (rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
            }
            entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic[i] - numeric));
        }
        entry.passed = entry.max_rel_error < tolerance;
        report.entries.push_back(entry);
        p.tensor.zero_grad();
    }
    return report;
}

}  // namespace epigraph
