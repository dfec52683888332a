#pragma once

// Scripted experiments over the simulator. An ExperimentSpec is a base config,
// a list of seeds and a list of named overrides; every (override, seed) pair
// is one run. Reports are computed after the fact from the runs' metrics.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flobc/config.hpp"
#include "flobc/ledger.hpp"
#include "flobc/metrics.hpp"
#include "flobc/node.hpp"

namespace flobc {

struct RunOverride {
    std::string label;
    std::function<void(SimConfig&)> apply;
};

struct ExperimentSpec {
    std::string name;
    SimConfig base;
    std::vector<std::uint64_t> seeds;
    std::vector<RunOverride> runs;

    void check() const {
        if (seeds.empty()) throw Error(ErrorCode::config, "experiment " + name + ": no seeds");
        if (runs.empty()) throw Error(ErrorCode::config, "experiment " + name + ": no runs");
    }

    SimConfig config_for(const RunOverride& run, std::uint64_t seed) const {
        SimConfig c = base;
        if (run.apply) run.apply(c);
        c.seed = seed;
        return c;
    }
};

struct RunRecord {
    std::string label;
    std::uint64_t seed = 0;
    SimConfig config;
    SimResult result;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw Error(ErrorCode::invalid_argument, "median of nothing");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string run_name(const std::string& label, std::uint64_t seed) {
    return label + "_seed" + std::to_string(seed);
}

// Invariant violations found in one finished run; empty when the run is sound.
inline std::vector<std::string> check_invariants(const SimResult& r) {
    std::vector<std::string> bad;
    for (const auto& row : r.log.rows) {
        double sum = 0.0;
        for (double p : row.phi) {
            if (!(p >= 0.0 && p <= 1.0))
                bad.push_back("round " + std::to_string(row.round) + ": trust score " + fmt_real(p) + " outside [0, 1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            bad.push_back("round " + std::to_string(row.round) + ": trust scores sum to " + fmt_real(sum));
    }
    for (std::size_t i = 0; i < r.chains.size(); ++i) {
        if (!r.honest[i]) continue;
        auto v = verify_chain(r.chains[i]);
        if (!v.ok)
            bad.push_back("validator " + std::to_string(i) + " chain fails at height " +
                          std::to_string(v.failed_height.value_or(0)) + ": " + v.reason);
    }
    if (!r.chains_consistent()) bad.push_back("honest validators hold diverging chains");
    return bad;
}

inline std::string metrics_csv(const MetricsLog& log) {
    std::ostringstream os;
    write_metrics_csv(os, log);
    return os.str();
}

// Sink for per-run and summary files; disabled when dir is empty.
class OutputDir {
public:
    OutputDir() = default;
    explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }

    bool enabled() const { return !dir_.empty(); }
    const std::filesystem::path& path() const { return dir_; }

    void write(const std::string& name, const std::string& content) const {
        if (!enabled()) return;
        std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io, "cannot write " + (dir_ / name).string());
        out << content;
    }

    void write_run(const RunRecord& rec) const {
        if (!enabled()) return;
        const auto base = run_name(rec.label, rec.seed);
        write(base + ".csv", metrics_csv(rec.result.log));
        std::ostringstream trust, reports;
        write_trust_csv(trust, rec.result.log);
        write_reports_csv(reports, rec.result.log);
        write(base + "_trust.csv", trust.str());
        write(base + "_reports.csv", reports.str());
        write(base + ".json", config_json(rec.config).dump(2) + "\n");
        write_chain(dir_ / (base + ".chain"), rec.result.chain());
    }

private:
    std::filesystem::path dir_;
};

inline std::vector<RunRecord> run_all(const ExperimentSpec& spec, const OutputDir& out = {}) {
    spec.check();
    std::vector<RunRecord> records;
    for (const auto& run : spec.runs)
        for (auto seed : spec.seeds) {
            RunRecord rec;
            rec.label = run.label;
            rec.seed = seed;
            rec.config = spec.config_for(run, seed);
            rec.result = simulate(rec.config);
            out.write_run(rec);
            records.push_back(std::move(rec));
        }
    return records;
}

inline const RunRecord& find_run(const std::vector<RunRecord>& runs, const std::string& label, std::uint64_t seed) {
    for (const auto& r : runs)
        if (r.label == label && r.seed == seed) return r;
    throw Error(ErrorCode::invalid_argument, "no run " + run_name(label, seed));
}

inline std::vector<std::string> violations(const std::vector<RunRecord>& runs) {
    std::vector<std::string> bad;
    for (const auto& r : runs)
        for (auto& v : check_invariants(r.result)) bad.push_back(run_name(r.label, r.seed) + ": " + v);
    return bad;
}

// Experiment configurations

// Pace-1 trainers finish one local epoch in this much virtual time.
inline constexpr VirtualTime epoch_seconds = 40.0;

inline void set_epoch_pace(SimConfig& c) {
    const auto shard_n = static_cast<std::size_t>(c.dataset.trainer_fraction * static_cast<double>(c.dataset.train_pool));
    c.timing.step_time = epoch_seconds / static_cast<double>(steps_per_epoch(std::max<std::size_t>(shard_n, 1),
                                                                              c.learner.batch_size));
}

inline SimConfig experiment_base() {
    SimConfig c;
    c.dataset.train_pool = 1200;
    c.dataset.validation_pool = 600;
    c.dataset.test = 1000;
    c.dataset.features = 60;
    c.dataset.classes = 5;
    c.dataset.synthetic = {0.3, 1.0, 0.0};
    c.dataset.trainer_fraction = 0.3;
    c.dataset.validator_fraction = 0.5;
    c.learner.arch = ModelArch::softmax();
    c.learner.learning_rate = 0.05;
    c.learner.batch_size = 16;
    c.latency = LatencyModel{0.02, 0.01, 0.0, std::nullopt, std::nullopt};
    c.stop = StopCondition::after_rounds(30);
    c.sync.scheme = SyncScheme::bap;
    c.sync.majority_ratio = 1.0;
    set_epoch_pace(c);
    return c;
}

inline std::vector<std::uint64_t> default_seeds() { return {1, 2, 3, 4, 5}; }

struct BenchmarkSettings {
    std::size_t iterations = 30;
    std::size_t epochs_per_iteration = 7;
    std::size_t trainers = 7;
    std::size_t validators = 3;
};

inline ExperimentSpec benchmark_spec(std::vector<std::uint64_t> seeds = default_seeds(), BenchmarkSettings bs = {}) {
    ExperimentSpec s{"benchmark", experiment_base(), std::move(seeds), {}};
    s.base.trainers = bs.trainers;
    s.base.validators = bs.validators;
    s.base.dataset.train_pool = 2400;
    set_epoch_pace(s.base);
    s.base.scoring = false;
    s.base.stop = StopCondition::after_rounds(bs.iterations);
    s.runs.push_back({"decentralized", {}});
    return s;
}

inline ExperimentSpec ratio_sweep_spec(std::vector<std::uint64_t> seeds = default_seeds(), std::size_t agents = 10) {
    if (agents < 2) throw Error(ErrorCode::config, "ratio sweep needs at least 2 agents");
    ExperimentSpec s{"ratio_sweep", experiment_base(), std::move(seeds), {}};
    s.base.dataset.train_pool = 600;
    s.base.sync.scheme = SyncScheme::bap;
    s.base.sync.majority_ratio = 1.0;
    set_epoch_pace(s.base);
    for (std::size_t t = 1; t < agents; ++t) {
        const std::size_t v = agents - t;
        s.runs.push_back({"t" + std::to_string(t) + "_v" + std::to_string(v), [t, v](SimConfig& c) {
                              c.trainers = t;
                              c.validators = v;
                          }});
    }
    return s;
}

inline constexpr double noise_constant = 0.0545;

inline ExperimentSpec scoring_spec(std::vector<std::uint64_t> seeds = default_seeds()) {
    ExperimentSpec s{"scoring", experiment_base(), std::move(seeds), {}};
    s.base.trainers = 6;
    s.base.validators = 3;
    s.base.sync.scheme = SyncScheme::bsp;
    s.base.sync.period = 2.5 * epoch_seconds;
    s.base.eta = 20.0;
    s.base.trainer_behaviors.clear();
    for (std::size_t i = 0; i < 6; ++i)
        s.base.trainer_behaviors.push_back(NodeBehavior::noisy(indexed_noise_sigma(noise_constant, i)));
    s.runs.push_back({"scoring", [](SimConfig& c) { c.scoring = true; }});
    s.runs.push_back({"uniform", [](SimConfig& c) { c.scoring = false; }});
    return s;
}

struct SyncSettings {
    std::vector<double> paces{1.0, 1.2, 1.4, 1.6, 2.5, 3.0};
    VirtualTime period = 2.2 * epoch_seconds;
    std::uint64_t max_extension_steps = 5;
    std::uint64_t rounds = 30;
    VirtualTime duration = 1200.0;
};

inline ExperimentSpec sync_schemes_spec(std::vector<std::uint64_t> seeds = default_seeds(), SyncSettings ss = {}) {
    ExperimentSpec s{"sync_schemes", experiment_base(), std::move(seeds), {}};
    s.base.trainers = ss.paces.size();
    s.base.validators = 3;
    s.base.scoring = false;
    s.base.dataset.synthetic.scale_spread = 1.5;
    s.base.learner.learning_rate = 0.01;
    s.base.trainer_behaviors.clear();
    for (double p : ss.paces) s.base.trainer_behaviors.push_back(NodeBehavior::honest(p));
    s.base.sync.period = ss.period;
    s.base.sync.max_extension_steps = ss.max_extension_steps;

    struct Scheme {
        const char* label;
        SyncScheme scheme;
        double theta;
    };
    const Scheme schemes[] = {{"BSP", SyncScheme::bsp, 1.0},
                              {"SSP", SyncScheme::ssp, 1.0},
                              {"BAP_1.0", SyncScheme::bap, 1.0},
                              {"BAP_0.6", SyncScheme::bap, 0.6}};
    for (const auto& mode : {"rounds", "time"})
        for (const auto& sc : schemes) {
            const bool timed = std::string(mode) == "time";
            s.runs.push_back({std::string(mode) + "_" + sc.label, [sc, timed, ss](SimConfig& c) {
                                  c.sync.scheme = sc.scheme;
                                  c.sync.majority_ratio = sc.theta;
                                  c.stop = timed ? StopCondition::after_time(ss.duration)
                                                 : StopCondition::after_rounds(ss.rounds);
                              }});
        }
    return s;
}

// Reports

struct CentralizedSeries {
    std::vector<double> accuracy;  // after each iteration
    std::vector<double> loss;      // training loss after each iteration
};

// One learner on the whole trainer pool, epochs_per_iteration local epochs per
// iteration, starting from the same initial model as the simulation.
inline CentralizedSeries run_centralized(const SimConfig& cfg, const SimData& data, const BenchmarkSettings& bs) {
    CentralizedSeries out;
    LearnerConfig lc = cfg.learner;
    lc.seed = derive_seed(cfg.seed, 0xCE7u);
    FlatParams p = initial_params(cfg, data.train_pool);
    const auto steps = bs.epochs_per_iteration * steps_per_epoch(data.train_pool.n, lc.batch_size);
    for (std::size_t it = 0; it < bs.iterations; ++it) {
        auto u = compute_gradient_steps(p, data.train_pool, lc, steps, it);
        p = apply_delta(p, u.delta);
        out.accuracy.push_back(evaluate(p, lc.arch, data.test));
        out.loss.push_back(loss(p, lc.arch, data.train_pool, lc.l2));
    }
    return out;
}

struct BenchmarkSeed {
    std::uint64_t seed = 0;
    CentralizedSeries centralized;
    std::vector<double> decentralized;  // accuracy after each round
    double gap() const { return centralized.accuracy.back() - decentralized.back(); }
};

struct BenchmarkReport {
    std::vector<BenchmarkSeed> seeds;
    std::vector<std::string> violations;
    double median_gap() const {
        std::vector<double> g;
        for (const auto& s : seeds) g.push_back(s.gap());
        return median(g);
    }
    double median_abs_gap() const {
        std::vector<double> g;
        for (const auto& s : seeds) g.push_back(std::abs(s.gap()));
        return median(g);
    }
};

inline BenchmarkReport run_benchmark(const ExperimentSpec& spec, const OutputDir& out = {}, BenchmarkSettings bs = {}) {
    auto runs = run_all(spec, out);
    BenchmarkReport rep;
    rep.violations = violations(runs);
    std::ostringstream summary;
    summary << "seed,iteration,centralized_accuracy,centralized_loss,decentralized_accuracy\n";
    for (const auto& r : runs) {
        BenchmarkSeed bsd;
        bsd.seed = r.seed;
        bsd.centralized = run_centralized(r.config, build_data(r.config), bs);
        for (const auto& row : r.result.log.rows)
            if (row.round > 0) bsd.decentralized.push_back(row.accuracy);
        for (std::size_t i = 0; i < bsd.centralized.accuracy.size(); ++i)
            summary << r.seed << ',' << i + 1 << ',' << fmt_real(bsd.centralized.accuracy[i]) << ','
                    << fmt_real(bsd.centralized.loss[i]) << ','
                    << (i < bsd.decentralized.size() ? fmt_real(bsd.decentralized[i]) : "") << '\n';
        rep.seeds.push_back(std::move(bsd));
    }
    out.write("summary.csv", summary.str());
    return rep;
}

struct SplitResult {
    std::size_t trainers = 0;
    std::size_t validators = 0;
    std::vector<double> max_accuracy;          // per seed
    std::vector<std::uint64_t> argmax_round;  // per seed
    double median_max() const { return median(max_accuracy); }
};

struct RatioReport {
    std::vector<SplitResult> splits;  // ascending trainer count
    std::vector<std::string> violations;

    const SplitResult& best() const {
        return *std::max_element(splits.begin(), splits.end(),
                                 [](const auto& a, const auto& b) { return a.median_max() < b.median_max(); });
    }
};

inline RatioReport run_ratio_sweep(const ExperimentSpec& spec, const OutputDir& out = {}) {
    auto runs = run_all(spec, out);
    RatioReport rep;
    rep.violations = violations(runs);
    std::ostringstream summary;
    summary << "trainers,validators,seed,max_accuracy,argmax_iteration\n";
    for (const auto& o : spec.runs) {
        SplitResult sr;
        for (auto seed : spec.seeds) {
            const auto& r = find_run(runs, o.label, seed);
            sr.trainers = r.config.trainers;
            sr.validators = r.config.validators;
            sr.max_accuracy.push_back(r.result.log.max_accuracy());
            sr.argmax_round.push_back(r.result.log.argmax_round());
            summary << sr.trainers << ',' << sr.validators << ',' << seed << ',' << fmt_real(sr.max_accuracy.back())
                    << ',' << sr.argmax_round.back() << '\n';
        }
        rep.splits.push_back(std::move(sr));
    }
    for (const auto& sr : rep.splits)
        summary << sr.trainers << ',' << sr.validators << ",median," << fmt_real(sr.median_max()) << ",\n";
    out.write("summary.csv", summary.str());
    return rep;
}

struct ScoringSeed {
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> phi;  // per round, scoring run
    double scoring_final = 0.0;
    double uniform_final = 0.0;
};

struct ScoringReport {
    std::vector<ScoringSeed> seeds;
    std::vector<std::string> violations;
};

inline ScoringReport run_scoring(const ExperimentSpec& spec, const OutputDir& out = {}) {
    auto runs = run_all(spec, out);
    ScoringReport rep;
    rep.violations = violations(runs);
    std::ostringstream summary;
    summary << "seed,scoring_final_accuracy,uniform_final_accuracy\n";
    for (auto seed : spec.seeds) {
        ScoringSeed s;
        s.seed = seed;
        const auto& sc = find_run(runs, "scoring", seed);
        const auto& un = find_run(runs, "uniform", seed);
        for (const auto& row : sc.result.log.rows) s.phi.push_back(row.phi);
        s.scoring_final = sc.result.log.final_accuracy();
        s.uniform_final = un.result.log.final_accuracy();
        summary << seed << ',' << fmt_real(s.scoring_final) << ',' << fmt_real(s.uniform_final) << '\n';
        rep.seeds.push_back(std::move(s));
    }
    out.write("summary.csv", summary.str());
    return rep;
}

struct SchemeResult {
    std::string scheme;
    std::vector<std::uint64_t> rounds_in_time;  // per seed, fixed-time run
    std::vector<double> accuracy_at_rounds;     // per seed, fixed-rounds run
    double median_rounds() const {
        std::vector<double> v(rounds_in_time.begin(), rounds_in_time.end());
        return median(v);
    }
    double median_accuracy() const { return median(accuracy_at_rounds); }
};

struct SyncReport {
    std::vector<SchemeResult> schemes;  // BSP, SSP, BAP_1.0, BAP_0.6
    std::vector<std::string> violations;

    const SchemeResult& at(const std::string& name) const {
        for (const auto& s : schemes)
            if (s.scheme == name) return s;
        throw Error(ErrorCode::invalid_argument, "no scheme " + name);
    }
};

inline SyncReport run_sync_schemes(const ExperimentSpec& spec, const OutputDir& out = {}, SyncSettings ss = {}) {
    auto runs = run_all(spec, out);
    SyncReport rep;
    rep.violations = violations(runs);
    std::ostringstream summary;
    summary << "scheme,seed,rounds_in_fixed_time,accuracy_at_round_" << ss.rounds << '\n';
    for (const char* name : {"BSP", "SSP", "BAP_1.0", "BAP_0.6"}) {
        SchemeResult sr;
        sr.scheme = name;
        for (auto seed : spec.seeds) {
            const auto& timed = find_run(runs, std::string("time_") + name, seed);
            const auto& fixed = find_run(runs, std::string("rounds_") + name, seed);
            sr.rounds_in_time.push_back(timed.result.log.rounds_completed());
            const auto* row = fixed.result.log.at_round(ss.rounds);
            sr.accuracy_at_rounds.push_back(row ? row->accuracy : 0.0);
            summary << name << ',' << seed << ',' << sr.rounds_in_time.back() << ','
                    << fmt_real(sr.accuracy_at_rounds.back()) << '\n';
        }
        summary << name << ",median," << fmt_real(sr.median_rounds()) << ',' << fmt_real(sr.median_accuracy())
                << '\n';
        rep.schemes.push_back(std::move(sr));
    }
    out.write("summary.csv", summary.str());
    return rep;
}

}  // namespace flobc
