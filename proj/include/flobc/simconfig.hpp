#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "flobc/consensus.hpp"
#include "flobc/learner.hpp"
#include "flobc/netsim.hpp"
#include "flobc/sync.hpp"

namespace flobc {

struct DatasetConfig {
    enum class Kind { synthetic, idx } kind = Kind::synthetic;
    std::size_t train_pool = 1200;
    std::size_t validation_pool = 600;
    std::size_t test = 1000;
    std::size_t features = 20;
    std::size_t classes = 5;
    SyntheticOptions synthetic;
    double trainer_fraction = 0.3;
    double validator_fraction = 0.5;
    std::string images_path;
    std::string labels_path;
};

struct TimingConfig {
    VirtualTime step_time = 1.0;  // per SGD step at pace 1
    std::size_t epochs_per_job = 1;
    VirtualTime resync_interval = 30.0;  // a trainer with no model yet asks again this often; 0 never
};

struct StopCondition {
    enum class Kind { rounds, virtual_time } kind = Kind::rounds;
    std::uint64_t rounds = 30;
    VirtualTime duration = 0.0;

    static StopCondition after_rounds(std::uint64_t k) { return {Kind::rounds, k, 0.0}; }
    static StopCondition after_time(VirtualTime d) { return {Kind::virtual_time, 0, d}; }
};

struct SimConfig {
    std::uint64_t seed = 1;
    std::size_t trainers = 6;
    std::size_t validators = 3;
    DatasetConfig dataset;
    LearnerConfig learner;
    SyncPolicy sync;
    bool scoring = true;
    double eta = 10.0;
    double tolerance = 0.0;
    TimingConfig timing;
    LatencyModel latency{0.01, 0.0, 0.0, std::nullopt, std::nullopt};
    consensus::EngineConfig consensus{1.0, 1.0, 1.0, 2.0, 16, true};
    std::vector<NodeBehavior> trainer_behaviors;    // empty or one per trainer
    std::vector<NodeBehavior> validator_behaviors;  // empty or one per validator
    StopCondition stop;
    std::uint64_t max_events = 5'000'000;
    VirtualTime max_stall = 10'000.0;  // this long without a new block is a deadlock; 0 disables

    NodeBehavior trainer_behavior(std::size_t i) const {
        return i < trainer_behaviors.size() ? trainer_behaviors[i] : NodeBehavior{};
    }
    NodeBehavior validator_behavior(std::size_t i) const {
        return i < validator_behaviors.size() ? validator_behaviors[i] : NodeBehavior{};
    }

    void check() const {
        if (trainers < 1) throw Error(ErrorCode::config, "need at least one trainer");
        if (validators < 1) throw Error(ErrorCode::config, "need at least one validator");
        if (!trainer_behaviors.empty() && trainer_behaviors.size() != trainers)
            throw Error(ErrorCode::config, "trainer behaviors must list every trainer");
        if (!validator_behaviors.empty() && validator_behaviors.size() != validators)
            throw Error(ErrorCode::config, "validator behaviors must list every validator");
        for (const auto& b : trainer_behaviors) {
            b.check();
            if (b.profile == NodeBehavior::Profile::equivocator)
                throw Error(ErrorCode::config, "equivocator applies to validators only");
        }
        for (const auto& b : validator_behaviors) b.check();
        bool any_honest = false;
        for (std::size_t i = 0; i < validators; ++i)
            any_honest |= validator_behavior(i).profile != NodeBehavior::Profile::equivocator;
        if (!any_honest) throw Error(ErrorCode::config, "need at least one honest validator");
        if (!(eta > 0.0)) throw Error(ErrorCode::config, "eta must be positive");
        if (!(tolerance >= 0.0)) throw Error(ErrorCode::config, "tolerance must be >= 0");
        if (!(timing.step_time > 0.0) || timing.epochs_per_job == 0)
            throw Error(ErrorCode::config, "timing: step_time and epochs_per_job must be positive");
        if (!(timing.resync_interval >= 0.0)) throw Error(ErrorCode::config, "timing: resync_interval must be >= 0");
        if (!(max_stall >= 0.0)) throw Error(ErrorCode::config, "max_stall must be >= 0");
        if (stop.kind == StopCondition::Kind::virtual_time && !(stop.duration > 0.0))
            throw Error(ErrorCode::config, "stop: duration must be positive");
        sync.check();
        learner.check();
        latency.check();
    }
};

// Data split shared by the simulation and the centralized baseline: a test set
// for reporting, a pool validators shard from, and a pool trainers shard from.
struct SimData {
    Dataset train_pool;
    Dataset validation_pool;
    Dataset test;
    std::vector<Dataset> trainer_shards;
    std::vector<Dataset> validator_shards;
};

inline SimData build_data(const SimConfig& cfg) {
    const auto& dc = cfg.dataset;
    Dataset all;
    const std::size_t wanted = dc.train_pool + dc.validation_pool + dc.test;
    if (dc.kind == DatasetConfig::Kind::synthetic) {
        all = generate_synthetic(derive_seed(cfg.seed, 0xDA7Au), wanted, dc.features, dc.classes, dc.synthetic);
    } else {
        all = load_idx(dc.images_path, dc.labels_path);
        if (all.n < wanted)
            throw Error(ErrorCode::config, "IDX data has " + std::to_string(all.n) + " samples, config needs " +
                                               std::to_string(wanted));
    }
    std::vector<std::size_t> idx(all.n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x5917u));
    rng.shuffle(idx);
    auto slice = [&](std::size_t from, std::size_t count) {
        return subset(all, std::span<const std::size_t>(idx.data() + from, count));
    };
    SimData data;
    data.test = slice(0, dc.test);
    data.validation_pool = slice(dc.test, dc.validation_pool);
    data.train_pool = slice(dc.test + dc.validation_pool, dc.train_pool);
    for (std::size_t i = 0; i < cfg.trainers; ++i)
        data.trainer_shards.push_back(shard(data.train_pool, dc.trainer_fraction, derive_seed(cfg.seed, 0x7A1u, i)));
    for (std::size_t i = 0; i < cfg.validators; ++i)
        data.validator_shards.push_back(
            shard(data.validation_pool, dc.validator_fraction, derive_seed(cfg.seed, 0x7A2u, i)));
    return data;
}

// Per-trainer learner settings: the shared config with a trainer-specific
// minibatch seed.
inline LearnerConfig trainer_learner(const SimConfig& cfg, std::size_t trainer_index) {
    LearnerConfig lc = cfg.learner;
    lc.seed = derive_seed(cfg.seed, 0x7EA1u, trainer_index);
    return lc;
}

inline FlatParams initial_params(const SimConfig& cfg, const Dataset& any) {
    return init_params(cfg.learner.arch, any.d, any.num_classes, derive_seed(cfg.seed, 0x1A17u));
}

}  // namespace flobc
