#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "flobc/error.hpp"
#include "flobc/params.hpp"

namespace flobc {

struct WeightedUpdate {
    GradientUpdate update;
    double weight = 0.0;
    bool accepted = true;
};

struct AggregationInput {
    FlatParams base;
    std::vector<WeightedUpdate> updates;
};

// base + sum_i w_i * delta_i / sum_j w_j over accepted updates with positive
// weight, summed in ascending trainer id. Returns nullopt when no such update
// exists: the round produces no new model.
inline std::optional<FlatParams> aggregate(const AggregationInput& input) {
    std::vector<const WeightedUpdate*> used;
    for (const auto& wu : input.updates) {
        if (wu.update.dim() != input.base.dim())
            throw Error(ErrorCode::dimension_mismatch, "aggregate: update dim " + std::to_string(wu.update.dim()) +
                                                           " vs base " + std::to_string(input.base.dim()));
        if (!(wu.weight >= 0.0) || !std::isfinite(wu.weight))
            throw Error(ErrorCode::invalid_argument, "aggregate: weights must be finite and non-negative");
        if (wu.accepted && wu.weight > 0.0) used.push_back(&wu);
    }
    if (used.empty()) return std::nullopt;
    std::stable_sort(used.begin(), used.end(),
                     [](auto* a, auto* b) { return a->update.trainer_id < b->update.trainer_id; });

    double total = 0.0;
    for (auto* wu : used) total += wu->weight;

    std::vector<double> out(input.base.values().begin(), input.base.values().end());
    std::vector<double> step(out.size(), 0.0);
    for (auto* wu : used) {
        const double w = wu->weight / total;
        for (std::size_t i = 0; i < step.size(); ++i) step[i] += w * wu->update.delta[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += step[i];
    return FlatParams(std::move(out));
}

inline std::vector<double> uniform_weights(std::size_t k) {
    if (k == 0) throw Error(ErrorCode::invalid_argument, "uniform_weights: need at least one update");
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

}  // namespace flobc
