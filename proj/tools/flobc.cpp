// flobc command line: run simulations and experiments, inspect and verify
// chain files.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flobc/config.hpp"
#include "flobc/experiments.hpp"
#include "flobc/ledger.hpp"
#include "flobc/node.hpp"

namespace fs = std::filesystem;
using namespace flobc;

namespace {

int report_violations(const std::vector<std::string>& bad) {
    for (const auto& v : bad) std::cerr << "invariant violation: " << v << '\n';
    return bad.empty() ? 0 : 1;
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
    const auto cfg = load_config(config_path);
    const auto res = simulate(cfg);
    OutputDir out(out_dir);
    out.write("metrics.csv", metrics_csv(res.log));
    std::ostringstream trust, reports;
    write_trust_csv(trust, res.log);
    write_reports_csv(reports, res.log);
    out.write("trust.csv", trust.str());
    out.write("reports.csv", reports.str());
    out.write("config.json", config_json(cfg).dump(2) + "\n");
    write_chain(out.path() / "chain.flbc", res.chain());

    std::printf("scheme %s, %zu trainers, %zu validators, seed %llu\n", res.log.scheme.c_str(), cfg.trainers,
                cfg.validators, static_cast<unsigned long long>(cfg.seed));
    std::printf("rounds %llu, model version %llu, final accuracy %.4f, virtual time %.3f\n",
                static_cast<unsigned long long>(res.log.rounds_completed()),
                static_cast<unsigned long long>(res.log.rows.back().version), res.log.final_accuracy(),
                res.stats.end_time);
    std::printf("messages %llu, events %llu, chain height %zu, written to %s\n",
                static_cast<unsigned long long>(res.stats.messages), static_cast<unsigned long long>(res.stats.events),
                res.chain().size(), out.path().string().c_str());
    return report_violations(check_invariants(res));
}

int cmd_experiment(const std::string& name, std::vector<std::uint64_t> seeds, const std::string& out_dir,
                   const std::string& config_path) {
    if (seeds.empty()) seeds = default_seeds();
    OutputDir out(fs::path(out_dir) / name);
    if (name == "benchmark") {
        auto rep = run_benchmark(benchmark_spec(seeds), out);
        std::printf("seed  centralized  decentralized  gap\n");
        for (const auto& s : rep.seeds)
            std::printf("%4llu  %11.4f  %13.4f  %+.4f\n", static_cast<unsigned long long>(s.seed),
                        s.centralized.accuracy.back(), s.decentralized.back(), s.gap());
        std::printf("median gap %+.4f\n", rep.median_gap());
        return report_violations(rep.violations);
    }
    if (name == "ratio_sweep") {
        auto rep = run_ratio_sweep(ratio_sweep_spec(seeds), out);
        std::printf("trainers validators  median max accuracy\n");
        for (const auto& s : rep.splits) std::printf("%8zu %10zu  %.4f\n", s.trainers, s.validators, s.median_max());
        std::printf("best split %zu:%zu\n", rep.best().trainers, rep.best().validators);
        return report_violations(rep.violations);
    }
    if (name == "scoring") {
        auto rep = run_scoring(scoring_spec(seeds), out);
        for (const auto& s : rep.seeds) {
            std::printf("seed %llu: accuracy scoring %.4f uniform %.4f; final phi", static_cast<unsigned long long>(s.seed),
                        s.scoring_final, s.uniform_final);
            for (double p : s.phi.back()) std::printf(" %.3f", p);
            std::printf("\n");
        }
        return report_violations(rep.violations);
    }
    if (name == "sync_schemes") {
        auto rep = run_sync_schemes(sync_schemes_spec(seeds), out);
        std::printf("scheme    rounds in fixed time  accuracy at round 30 (medians)\n");
        for (const auto& s : rep.schemes)
            std::printf("%-8s  %20.1f  %.4f\n", s.scheme.c_str(), s.median_rounds(), s.median_accuracy());
        return report_violations(rep.violations);
    }
    if (name == "custom") {
        if (config_path.empty()) throw Error(ErrorCode::config, "experiment custom needs --config");
        ExperimentSpec spec{"custom", load_config(config_path), seeds, {{"custom", {}}}};
        auto runs = run_all(spec, out);
        for (const auto& r : runs)
            std::printf("seed %llu: rounds %llu, final accuracy %.4f\n", static_cast<unsigned long long>(r.seed),
                        static_cast<unsigned long long>(r.result.log.rounds_completed()),
                        r.result.log.final_accuracy());
        return report_violations(violations(runs));
    }
    throw Error(ErrorCode::config, "unknown experiment '" + name +
                                       "' (expected benchmark, ratio_sweep, scoring, sync_schemes or custom)");
}

void print_tx(const Transaction& tx) {
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            std::printf("  %-13s author %u nonce %llu: ", to_string(tx.kind()), tx.author,
                        static_cast<unsigned long long>(tx.nonce));
            if constexpr (std::is_same_v<T, ShareGradient>) {
                std::printf("round %llu trainer %u base v%llu steps %llu digest %s\n",
                            static_cast<unsigned long long>(p.round), p.update.trainer_id,
                            static_cast<unsigned long long>(p.update.base_version),
                            static_cast<unsigned long long>(p.update.steps), digest(p.update).short_hex().c_str());
            } else if constexpr (std::is_same_v<T, ReleaseModel>) {
                std::printf("v%llu dim %zu digest %s weights", static_cast<unsigned long long>(p.model.version()),
                            p.model.params().dim(), p.model.digest().short_hex().c_str());
                for (const auto& [id, w] : p.applied_weights) std::printf(" %u:%.4f", id, w);
                std::printf("\n");
            } else if constexpr (std::is_same_v<T, TrustAdjust>) {
                std::printf("trainer %u raw %.6f\n", p.trainer, p.new_raw);
            } else {
                std::printf("round %llu %s at %.3f span %.3f\n", static_cast<unsigned long long>(p.round_id),
                            to_string(p.action), p.at, p.span);
            }
        },
        tx.payload);
}

int cmd_inspect(const std::string& path, std::optional<std::uint64_t> height) {
    auto loaded = read_chain(path);
    auto res = verify_chain(loaded.blocks);
    StateStore state;
    for (const auto& b : loaded.blocks) {
        if (height && b.height != *height) {
            if (b.height < *height) state = apply_block_body(state, b);
            continue;
        }
        std::printf("block %llu hash %s prev %s proposer %u txs %zu\n", static_cast<unsigned long long>(b.height),
                    b.hash().short_hex().c_str(), b.prev_hash.short_hex().c_str(), b.proposer, b.txs.size());
        if (height) {
            for (const auto& tx : b.txs) print_tx(tx);
            state = apply_block_body(state, b);
            std::printf("state after: hash %s version %llu round %llu%s\n", state.state_hash().short_hex().c_str(),
                        static_cast<unsigned long long>(state.latest_version().value_or(0)),
                        static_cast<unsigned long long>(state.round ? state.round->round_id : 0),
                        state.round && state.round->closed ? " (closed)" : "");
            std::printf("trust phi:");
            for (const auto& [id, phi] : state.trust.phi_scores()) std::printf(" %u:%.4f", id, phi);
            std::printf("\n");
        }
    }
    if (height && *height >= loaded.blocks.size()) {
        std::cerr << "no block at height " << *height << " (chain has " << loaded.blocks.size() << ")\n";
        return 1;
    }
    if (loaded.failed_index) {
        std::cerr << "unreadable record " << *loaded.failed_index << ": " << loaded.error << '\n';
        return 1;
    }
    if (!res.ok) {
        std::cerr << "chain invalid at height " << res.failed_height.value_or(0) << ": " << res.reason << '\n';
        return 1;
    }
    return 0;
}

int cmd_verify(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path);
    const Bytes bytes((std::istreambuf_iterator<char>(in)), {});
    auto res = verify_chain_bytes(bytes);
    if (!res.ok) {
        std::printf("FAIL at height %llu: %s\n", static_cast<unsigned long long>(res.failed_height.value_or(0)),
                    res.reason.c_str());
        return 1;
    }
    std::printf("ok: %llu blocks, model version %llu, state %s\n", static_cast<unsigned long long>(res.state.height),
                static_cast<unsigned long long>(res.state.latest_version().value_or(0)),
                res.state.state_hash().short_hex().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized federated learning over a voting-consensus ledger, simulated deterministically"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "flobc-out", chain_path, exp_name, exp_config;
    std::vector<std::uint64_t> seeds;
    std::optional<std::uint64_t> height;

    auto* run = app.add_subcommand("run", "Run one simulation from a JSON config");
    run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory")->capture_default_str();

    auto* exp = app.add_subcommand("experiment", "Run a scripted experiment over several seeds");
    exp->add_option("name", exp_name, "benchmark | ratio_sweep | scoring | sync_schemes | custom")->required();
    exp->add_option("--seeds", seeds, "Seeds (default 1 2 3 4 5)")->delimiter(',');
    exp->add_option("--out", out_dir, "Output directory")->capture_default_str();
    exp->add_option("--config", exp_config, "Base config for the custom experiment")->check(CLI::ExistingFile);

    auto* inspect = app.add_subcommand("inspect", "Print the blocks of a chain file");
    inspect->add_option("chain", chain_path, "Chain file")->required()->check(CLI::ExistingFile);
    inspect->add_option("--height", height, "Show one block in detail");

    auto* verify = app.add_subcommand("verify", "Re-execute a chain file and check every block");
    verify->add_option("chain", chain_path, "Chain file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir);
        if (exp->parsed()) return cmd_experiment(exp_name, seeds, out_dir, exp_config);
        if (inspect->parsed()) return cmd_inspect(chain_path, height);
        if (verify->parsed()) return cmd_verify(chain_path);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
