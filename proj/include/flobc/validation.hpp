#pragma once

#include <optional>
#include <string>

#include "flobc/learner.hpp"
#include "flobc/params.hpp"
#include "flobc/reputation.hpp"

namespace flobc {

struct ValidatorConfig {
    Dataset validation_data;
    ModelArch arch;
    double tolerance = 0.0;  // accuracy units
};

struct ValidationOutcome {
    ValidationReport report;
    std::optional<std::string> reject_reason;  // set when rejected without scoring
};

// Accepts when accuracy after applying the delta is no worse than before by
// more than the tolerance. Stale updates are rejected unscored.
inline ValidationOutcome validate_update(const ModelVersion& base, const GradientUpdate& update,
                                         const ValidatorConfig& cfg, std::uint64_t round = 0) {
    ValidationOutcome out;
    out.report.trainer_id = update.trainer_id;
    out.report.round = round;
    if (update.base_version != base.version()) {
        out.report.accepted = false;
        out.reject_reason = "stale update: base version " + std::to_string(update.base_version) +
                            ", current " + std::to_string(base.version());
        return out;
    }
    if (update.dim() != base.params().dim())
        throw Error(ErrorCode::dimension_mismatch, "validate_update: update dim " + std::to_string(update.dim()) +
                                                       " vs model " + std::to_string(base.params().dim()));
    const auto after = apply_delta(base.params(), update.delta);
    out.report.metric_before = evaluate(base.params(), cfg.arch, cfg.validation_data);
    out.report.metric_after = evaluate(after, cfg.arch, cfg.validation_data);
    out.report.accepted = out.report.metric_after >= out.report.metric_before - cfg.tolerance;
    return out;
}

}  // namespace flobc
