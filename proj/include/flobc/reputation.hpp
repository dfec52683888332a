#pragma once

// Reward-penalty trust scores. Raw scores move additively by
// eta * (metric_after - metric_before) and are clamped at zero; the
// normalized score phi_i = raw_i / sum(raw). When every raw score is zero phi
// falls back to uniform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flobc/error.hpp"
#include "flobc/params.hpp"

namespace flobc {

struct ValidationReport {
    TrainerId trainer_id = 0;
    std::uint64_t round = 0;
    double metric_before = 0.0;
    double metric_after = 0.0;
    bool accepted = false;

    double delta() const noexcept { return metric_after - metric_before; }
};

class TrustVector {
public:
    TrustVector() = default;

    static TrustVector uniform(std::span<const TrainerId> ids) {
        if (ids.empty()) throw Error(ErrorCode::invalid_argument, "trust: need at least one trainer");
        TrustVector tv;
        for (auto id : ids) tv.raw_[id] = 1.0;
        tv.renormalize();
        return tv;
    }

    bool contains(TrainerId id) const { return raw_.contains(id); }
    bool empty() const noexcept { return raw_.empty(); }
    std::size_t size() const noexcept { return raw_.size(); }

    double raw(TrainerId id) const { return at(raw_, id); }
    double phi(TrainerId id) const { return at(phi_, id); }

    const std::map<TrainerId, double>& raw_scores() const noexcept { return raw_; }
    const std::map<TrainerId, double>& phi_scores() const noexcept { return phi_; }

    std::vector<double> phi_vector() const {
        std::vector<double> out;
        for (const auto& [id, v] : phi_) out.push_back(v);
        return out;
    }

    void set_raw(TrainerId id, double value) {
        if (!(value >= 0.0) || !std::isfinite(value))
            throw Error(ErrorCode::invalid_argument, "trust: raw score must be finite and non-negative");
        raw_[id] = value;
        renormalize();
    }

    friend bool operator==(const TrustVector&, const TrustVector&) = default;

private:
    static double at(const std::map<TrainerId, double>& m, TrainerId id) {
        auto it = m.find(id);
        if (it == m.end()) throw Error(ErrorCode::unknown_trainer, "unknown trainer " + std::to_string(id));
        return it->second;
    }

    void renormalize() {
        double total = 0.0;
        for (const auto& [id, v] : raw_) total += v;
        phi_.clear();
        for (const auto& [id, v] : raw_)
            phi_[id] = total > 0.0 ? v / total : 1.0 / static_cast<double>(raw_.size());
    }

    std::map<TrainerId, double> raw_;
    std::map<TrainerId, double> phi_;
};

inline TrustVector init_uniform(std::span<const TrainerId> ids) { return TrustVector::uniform(ids); }

inline double updated_raw(const TrustVector& tv, const ValidationReport& report, double eta) {
    if (!(eta > 0.0)) throw Error(ErrorCode::invalid_argument, "trust: eta must be positive");
    return std::max(0.0, tv.raw(report.trainer_id) + eta * report.delta());
}

inline TrustVector apply_report(TrustVector tv, const ValidationReport& report, double eta) {
    tv.set_raw(report.trainer_id, updated_raw(tv, report, eta));
    return tv;
}

// Trust restricted to the accepted trainers and renormalized; uniform when
// all of them sit at zero. Order follows accepted_ids.
inline std::vector<double> weights_for_round(const TrustVector& tv, std::span<const TrainerId> accepted_ids) {
    if (accepted_ids.empty()) throw Error(ErrorCode::invalid_argument, "weights_for_round: empty accepted set");
    std::vector<double> w;
    double total = 0.0;
    for (auto id : accepted_ids) {
        w.push_back(tv.phi(id));
        total += w.back();
    }
    for (auto& v : w) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(accepted_ids.size());
    return w;
}

// One report per (trainer, round): deltas from several validators are averaged.
inline ValidationReport merge_reports(std::span<const ValidationReport> reports, double tolerance) {
    if (reports.empty()) throw Error(ErrorCode::invalid_argument, "merge_reports: no reports");
    ValidationReport out = reports.front();
    double before = 0.0, after = 0.0;
    for (const auto& r : reports) {
        before += r.metric_before;
        after += r.metric_after;
    }
    out.metric_before = before / static_cast<double>(reports.size());
    out.metric_after = after / static_cast<double>(reports.size());
    out.accepted = out.metric_after >= out.metric_before - tolerance;
    return out;
}

}  // namespace flobc
