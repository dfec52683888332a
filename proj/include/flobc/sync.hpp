#pragma once

// Round lifecycle under BSP, SSP and BAP.
//
//   BSP: close at opened_at + T.
//   SSP: at opened_at + T, if a fraction u of trainers has not submitted,
//        extend once by T * u; close at the (extended) deadline. Trainers that
//        had finished may run at most N extra steps during the extension and
//        resubmit.
//   BAP: no deadline; close once submitted / total >= theta. Each trainer's
//        latest submission supersedes its earlier ones.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "flobc/error.hpp"
#include "flobc/params.hpp"

namespace flobc {

enum class SyncScheme { bsp, ssp, bap };

inline const char* to_string(SyncScheme s) {
    switch (s) {
        case SyncScheme::bsp: return "BSP";
        case SyncScheme::ssp: return "SSP";
        case SyncScheme::bap: return "BAP";
    }
    return "?";
}

inline SyncScheme parse_scheme(const std::string& s) {
    if (s == "BSP" || s == "bsp") return SyncScheme::bsp;
    if (s == "SSP" || s == "ssp") return SyncScheme::ssp;
    if (s == "BAP" || s == "bap") return SyncScheme::bap;
    throw Error(ErrorCode::config, "unknown sync scheme '" + s + "'");
}

using VirtualTime = double;

struct SyncPolicy {
    SyncScheme scheme = SyncScheme::bsp;
    VirtualTime period = 60.0;
    std::uint64_t max_extension_steps = 0;
    double majority_ratio = 1.0;
    double slack_ratio_threshold = 0.0;

    void check() const {
        if ((scheme == SyncScheme::bsp || scheme == SyncScheme::ssp) && !(period > 0.0))
            throw Error(ErrorCode::config, "sync: period must be positive for BSP/SSP");
        if (!(majority_ratio > 0.0 && majority_ratio <= 1.0))
            throw Error(ErrorCode::config, "sync: majority ratio must be in (0, 1]");
        if (!(slack_ratio_threshold >= 0.0 && slack_ratio_threshold <= 1.0))
            throw Error(ErrorCode::config, "sync: slack ratio threshold must be in [0, 1]");
    }

    // e.g. BAP_0.6
    std::string label() const {
        if (scheme != SyncScheme::bap) return to_string(scheme);
        char buf[32];
        std::snprintf(buf, sizeof buf, "BAP_%g", majority_ratio);
        return buf;
    }
};

struct RoundState {
    std::uint64_t round_id = 0;
    VirtualTime opened_at = 0.0;
    std::optional<VirtualTime> deadline;
    bool extension_granted = false;
    bool closed = false;
    std::set<TrainerId> submitted;
    std::size_t total_trainers = 0;

    static RoundState open(const SyncPolicy& policy, std::uint64_t round_id, VirtualTime at, std::size_t total) {
        RoundState rs;
        rs.round_id = round_id;
        rs.opened_at = at;
        rs.total_trainers = total;
        if (policy.scheme != SyncScheme::bap) rs.deadline = at + policy.period;
        return rs;
    }

    double submitted_ratio() const {
        return total_trainers == 0 ? 0.0 : static_cast<double>(submitted.size()) / static_cast<double>(total_trainers);
    }

    friend bool operator==(const RoundState&, const RoundState&) = default;
};

struct CloseDecision {
    enum class Kind { keep_open, extend, close } kind = Kind::keep_open;
    VirtualTime extend_by = 0.0;

    static CloseDecision keep_open() { return {}; }
    static CloseDecision close() { return {Kind::close, 0.0}; }
    static CloseDecision extend(VirtualTime by) { return {Kind::extend, by}; }
};

// Smallest submitted count meeting the BAP threshold.
inline std::size_t bap_required(const SyncPolicy& policy, std::size_t total) {
    const auto need = static_cast<std::size_t>(std::ceil(policy.majority_ratio * static_cast<double>(total) - 1e-9));
    return std::max<std::size_t>(need, 1);
}

inline CloseDecision should_close(const SyncPolicy& policy, const RoundState& rs, VirtualTime now) {
    if (rs.closed) return CloseDecision::close();
    switch (policy.scheme) {
        case SyncScheme::bsp:
            return now >= *rs.deadline ? CloseDecision::close() : CloseDecision::keep_open();
        case SyncScheme::ssp: {
            if (now < *rs.deadline) return CloseDecision::keep_open();
            if (rs.extension_granted) return CloseDecision::close();
            const double unfinished = 1.0 - rs.submitted_ratio();
            if (unfinished > 0.0) return CloseDecision::extend(policy.period * unfinished);
            return CloseDecision::close();
        }
        case SyncScheme::bap:
            return rs.submitted.size() >= bap_required(policy, rs.total_trainers) ? CloseDecision::close()
                                                                                  : CloseDecision::keep_open();
    }
    return CloseDecision::keep_open();
}

// Records an extension decided by should_close.
inline RoundState grant_extension(RoundState rs, VirtualTime by) {
    if (rs.extension_granted) throw Error(ErrorCode::invalid_argument, "SSP grants at most one extension per round");
    rs.extension_granted = true;
    rs.deadline = *rs.deadline + by;
    return rs;
}

enum class SubmissionResult { recorded, superseded, rejected_duplicate };

struct SubmissionOutcome {
    RoundState state;
    SubmissionResult result;
};

// BSP/SSP keep the first submission per trainer (SSP additionally lets a
// trainer supersede it once the extension is active); BAP always keeps the
// latest.
inline SubmissionOutcome on_submission(const SyncPolicy& policy, RoundState rs, TrainerId trainer) {
    if (rs.closed) throw Error(ErrorCode::round_closed, "round " + std::to_string(rs.round_id) + " closed");
    const bool seen = rs.submitted.contains(trainer);
    if (!seen) {
        rs.submitted.insert(trainer);
        return {std::move(rs), SubmissionResult::recorded};
    }
    const bool may_supersede =
        policy.scheme == SyncScheme::bap || (policy.scheme == SyncScheme::ssp && rs.extension_granted);
    return {std::move(rs), may_supersede ? SubmissionResult::superseded : SubmissionResult::rejected_duplicate};
}

inline std::uint64_t extra_steps_allowed(const SyncPolicy& policy, bool trainer_finished, bool in_extension) {
    if (policy.scheme != SyncScheme::ssp)
        throw Error(ErrorCode::invalid_argument, "extra_steps_allowed applies to SSP only");
    return trainer_finished && in_extension ? policy.max_extension_steps : 0;
}

}  // namespace flobc
