#pragma once

// Per-run metrics. CSV layout, one row per completed round plus a round-0 row
// for the initial model:
//   # scheme=<label> trainers=<t> validators=<v> seed=<s>
//   round,virtual_time,version,accuracy,phi_0,...,phi_{t-1},msgs_sent
// Reals are printed with 17 significant digits so reruns compare byte-equal.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "flobc/params.hpp"
#include "flobc/reputation.hpp"
#include "flobc/sync.hpp"

namespace flobc {

struct MetricsRow {
    std::uint64_t round = 0;
    VirtualTime virtual_time = 0.0;
    Version version = 0;
    double accuracy = 0.0;
    std::vector<double> phi;
    std::uint64_t msgs_sent = 0;
};

struct ReportRecord {
    ValidatorId validator = 0;
    ValidationReport report;
};

struct MetricsLog {
    std::string scheme;
    std::size_t trainers = 0;
    std::size_t validators = 0;
    std::uint64_t seed = 0;
    std::vector<MetricsRow> rows;
    std::vector<ReportRecord> reports;

    std::uint64_t rounds_completed() const { return rows.empty() ? 0 : rows.back().round; }
    double final_accuracy() const { return rows.empty() ? 0.0 : rows.back().accuracy; }

    double max_accuracy() const {
        double best = 0.0;
        for (const auto& r : rows) best = std::max(best, r.accuracy);
        return best;
    }

    // First round reaching max_accuracy().
    std::uint64_t argmax_round() const {
        const double best = max_accuracy();
        for (const auto& r : rows)
            if (r.accuracy == best) return r.round;
        return 0;
    }

    // Row for a given round, or the latest row before it.
    const MetricsRow* at_round(std::uint64_t round) const {
        const MetricsRow* hit = nullptr;
        for (const auto& r : rows)
            if (r.round <= round) hit = &r;
        return hit;
    }
};

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_metrics_csv(std::ostream& os, const MetricsLog& log) {
    os << "# scheme=" << log.scheme << " trainers=" << log.trainers << " validators=" << log.validators
       << " seed=" << log.seed << '\n';
    os << "round,virtual_time,version,accuracy";
    for (std::size_t i = 0; i < log.trainers; ++i) os << ",phi_" << i;
    os << ",msgs_sent\n";
    for (const auto& r : log.rows) {
        os << r.round << ',' << fmt_real(r.virtual_time) << ',' << r.version << ',' << fmt_real(r.accuracy);
        for (double p : r.phi) os << ',' << fmt_real(p);
        os << ',' << r.msgs_sent << '\n';
    }
}

// Long-format trust history: round,trainer_id,phi
inline void write_trust_csv(std::ostream& os, const MetricsLog& log) {
    os << "round,trainer_id,phi\n";
    for (const auto& r : log.rows)
        for (std::size_t i = 0; i < r.phi.size(); ++i) os << r.round << ',' << i << ',' << fmt_real(r.phi[i]) << '\n';
}

inline void write_reports_csv(std::ostream& os, const MetricsLog& log) {
    os << "round,trainer_id,validator_id,metric_before,metric_after,accepted\n";
    for (const auto& rec : log.reports)
        os << rec.report.round << ',' << rec.report.trainer_id << ',' << rec.validator << ','
           << fmt_real(rec.report.metric_before) << ',' << fmt_real(rec.report.metric_after) << ','
           << (rec.report.accepted ? 1 : 0) << '\n';
}

}  // namespace flobc
