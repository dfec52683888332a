#pragma once

// JSON simulation configs. Every key is optional and unknown keys are
// rejected, so a typo fails loudly instead of silently using a default.
//
// {
//   "seed": 1, "trainers": 6, "validators": 3,
//   "dataset": {"kind": "synthetic", "train_pool": 1200, "validation_pool": 600, "test": 1000,
//               "features": 20, "classes": 5, "center_scale": 1.0, "cluster_std": 1.0, "scale_spread": 0.0,
//               "trainer_fraction": 0.3, "validator_fraction": 0.5,
//               "images": "train-images-idx3-ubyte", "labels": "train-labels-idx1-ubyte"},
//   "learner": {"model": "softmax", "hidden": 0, "learning_rate": 0.1, "batch_size": 16, "l2": 0.0},
//   "sync": {"scheme": "SSP", "period": 60, "max_extension_steps": 5, "majority_ratio": 1.0},
//   "scoring": true, "eta": 10.0, "tolerance": 0.0,
//   "timing": {"step_time": 1.0, "epochs_per_job": 1, "resync_interval": 30.0},
//   "latency": {"base": 0.01, "jitter": 0.0, "drop_prob": 0.0, "gst": 5.0, "post_gst_jitter": 0.1},
//   "consensus": {"timeout_propose": 1.0, "timeout_prevote": 1.0, "timeout_precommit": 1.0, "backoff": 2.0},
//   "noise_k": 0.0545,
//   "trainer_behaviors": [{"profile": "honest", "pace": 1.0}, {"profile": "lazy", "skip_prob": 0.2}],
//   "validator_behaviors": [{"profile": "equivocator"}],
//   "stop": {"rounds": 30}            or  {"virtual_time": 1200}
// }
//
// "noise_k" makes trainer i noisy with sigma = noise_k * i (keeping any pace
// given in trainer_behaviors).

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "flobc/error.hpp"
#include "flobc/simconfig.hpp"

namespace flobc {

namespace detail {

using json = nlohmann::json;

inline void allow_keys(const json& j, const char* where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw Error(ErrorCode::config, std::string(where) + ": expected an object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!ok.contains(k)) throw Error(ErrorCode::config, std::string(where) + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config, std::string(where) + "." + key + ": " + e.what());
    }
}

inline NodeBehavior parse_behavior(const json& j) {
    allow_keys(j, "behavior", {"profile", "sigma", "skip_prob", "pace"});
    NodeBehavior b;
    std::string profile = "honest";
    read(j, "profile", profile, "behavior");
    if (profile == "honest")
        b.profile = NodeBehavior::Profile::honest;
    else if (profile == "noisy")
        b.profile = NodeBehavior::Profile::noisy;
    else if (profile == "lazy")
        b.profile = NodeBehavior::Profile::lazy;
    else if (profile == "equivocator")
        b.profile = NodeBehavior::Profile::equivocator;
    else
        throw Error(ErrorCode::config, "behavior: unknown profile '" + profile + "'");
    read(j, "sigma", b.sigma, "behavior");
    read(j, "skip_prob", b.skip_prob, "behavior");
    read(j, "pace", b.pace_multiplier, "behavior");
    return b;
}

inline json behavior_json(const NodeBehavior& b) {
    json j{{"profile", to_string(b.profile)}, {"pace", b.pace_multiplier}};
    if (b.profile == NodeBehavior::Profile::noisy) j["sigma"] = b.sigma;
    if (b.profile == NodeBehavior::Profile::lazy) j["skip_prob"] = b.skip_prob;
    return j;
}

}  // namespace detail

inline SimConfig parse_config(const nlohmann::json& j) {
    using detail::read;
    detail::allow_keys(j, "config",
                       {"seed", "trainers", "validators", "dataset", "learner", "sync", "scoring", "eta", "tolerance",
                        "timing", "latency", "consensus", "noise_k", "trainer_behaviors", "validator_behaviors",
                        "stop", "max_events", "max_stall"});
    SimConfig c;
    read(j, "seed", c.seed, "config");
    read(j, "trainers", c.trainers, "config");
    read(j, "validators", c.validators, "config");
    read(j, "scoring", c.scoring, "config");
    read(j, "eta", c.eta, "config");
    read(j, "tolerance", c.tolerance, "config");
    read(j, "max_events", c.max_events, "config");
    read(j, "max_stall", c.max_stall, "config");

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        detail::allow_keys(d, "dataset",
                           {"kind", "train_pool", "validation_pool", "test", "features", "classes", "center_scale",
                            "cluster_std", "scale_spread", "trainer_fraction", "validator_fraction", "images", "labels"});
        std::string kind = "synthetic";
        read(d, "kind", kind, "dataset");
        if (kind == "synthetic")
            c.dataset.kind = DatasetConfig::Kind::synthetic;
        else if (kind == "idx")
            c.dataset.kind = DatasetConfig::Kind::idx;
        else
            throw Error(ErrorCode::config, "dataset.kind: expected synthetic or idx");
        read(d, "train_pool", c.dataset.train_pool, "dataset");
        read(d, "validation_pool", c.dataset.validation_pool, "dataset");
        read(d, "test", c.dataset.test, "dataset");
        read(d, "features", c.dataset.features, "dataset");
        read(d, "classes", c.dataset.classes, "dataset");
        read(d, "center_scale", c.dataset.synthetic.center_scale, "dataset");
        read(d, "cluster_std", c.dataset.synthetic.cluster_std, "dataset");
        read(d, "scale_spread", c.dataset.synthetic.scale_spread, "dataset");
        read(d, "trainer_fraction", c.dataset.trainer_fraction, "dataset");
        read(d, "validator_fraction", c.dataset.validator_fraction, "dataset");
        read(d, "images", c.dataset.images_path, "dataset");
        read(d, "labels", c.dataset.labels_path, "dataset");
    }

    if (j.contains("learner")) {
        const auto& l = j["learner"];
        detail::allow_keys(l, "learner", {"model", "hidden", "learning_rate", "batch_size", "l2"});
        std::string model = "softmax";
        read(l, "model", model, "learner");
        if (model == "softmax")
            c.learner.arch = ModelArch::softmax();
        else if (model == "mlp")
            c.learner.arch.kind = ModelArch::Kind::mlp;
        else
            throw Error(ErrorCode::config, "learner.model: expected softmax or mlp");
        read(l, "hidden", c.learner.arch.hidden, "learner");
        read(l, "learning_rate", c.learner.learning_rate, "learner");
        read(l, "batch_size", c.learner.batch_size, "learner");
        read(l, "l2", c.learner.l2, "learner");
    }

    if (j.contains("sync")) {
        const auto& s = j["sync"];
        detail::allow_keys(s, "sync", {"scheme", "period", "max_extension_steps", "majority_ratio",
                                       "slack_ratio_threshold"});
        std::string scheme = "BSP";
        read(s, "scheme", scheme, "sync");
        c.sync.scheme = parse_scheme(scheme);
        read(s, "period", c.sync.period, "sync");
        read(s, "max_extension_steps", c.sync.max_extension_steps, "sync");
        read(s, "majority_ratio", c.sync.majority_ratio, "sync");
        read(s, "slack_ratio_threshold", c.sync.slack_ratio_threshold, "sync");
    }

    if (j.contains("timing")) {
        const auto& t = j["timing"];
        detail::allow_keys(t, "timing", {"step_time", "epochs_per_job", "resync_interval"});
        read(t, "step_time", c.timing.step_time, "timing");
        read(t, "epochs_per_job", c.timing.epochs_per_job, "timing");
        read(t, "resync_interval", c.timing.resync_interval, "timing");
    }

    if (j.contains("latency")) {
        const auto& l = j["latency"];
        detail::allow_keys(l, "latency", {"base", "jitter", "drop_prob", "gst", "post_gst_jitter"});
        read(l, "base", c.latency.base, "latency");
        read(l, "jitter", c.latency.jitter, "latency");
        read(l, "drop_prob", c.latency.drop_prob, "latency");
        if (l.contains("gst")) {
            double g = 0;
            read(l, "gst", g, "latency");
            c.latency.gst = g;
        }
        if (l.contains("post_gst_jitter")) {
            double g = 0;
            read(l, "post_gst_jitter", g, "latency");
            c.latency.post_gst_jitter = g;
        }
    }

    if (j.contains("consensus")) {
        const auto& e = j["consensus"];
        detail::allow_keys(e, "consensus", {"timeout_propose", "timeout_prevote", "timeout_precommit", "backoff",
                                            "max_backoff_rounds", "relay_on_round_change",
                                            "relay_when_stalled"});
        read(e, "timeout_propose", c.consensus.timeout_propose, "consensus");
        read(e, "timeout_prevote", c.consensus.timeout_prevote, "consensus");
        read(e, "timeout_precommit", c.consensus.timeout_precommit, "consensus");
        read(e, "backoff", c.consensus.backoff, "consensus");
        read(e, "max_backoff_rounds", c.consensus.max_backoff_rounds, "consensus");
        read(e, "relay_on_round_change", c.consensus.relay_on_round_change, "consensus");
        read(e, "relay_when_stalled", c.consensus.relay_when_stalled, "consensus");
    }

    if (j.contains("trainer_behaviors")) {
        if (!j["trainer_behaviors"].is_array()) throw Error(ErrorCode::config, "trainer_behaviors: expected a list");
        for (const auto& b : j["trainer_behaviors"]) c.trainer_behaviors.push_back(detail::parse_behavior(b));
    }
    if (j.contains("validator_behaviors")) {
        if (!j["validator_behaviors"].is_array()) throw Error(ErrorCode::config, "validator_behaviors: expected a list");
        for (const auto& b : j["validator_behaviors"]) c.validator_behaviors.push_back(detail::parse_behavior(b));
    }
    if (j.contains("noise_k")) {
        double k = 0;
        read(j, "noise_k", k, "config");
        if (c.trainer_behaviors.empty()) c.trainer_behaviors.resize(c.trainers);
        for (std::size_t i = 0; i < c.trainer_behaviors.size(); ++i) {
            c.trainer_behaviors[i].profile = NodeBehavior::Profile::noisy;
            c.trainer_behaviors[i].sigma = indexed_noise_sigma(k, i);
        }
    }

    if (j.contains("stop")) {
        const auto& s = j["stop"];
        detail::allow_keys(s, "stop", {"rounds", "virtual_time"});
        if (s.contains("rounds") == s.contains("virtual_time"))
            throw Error(ErrorCode::config, "stop: give exactly one of rounds or virtual_time");
        if (s.contains("rounds")) {
            std::uint64_t k = 0;
            read(s, "rounds", k, "stop");
            c.stop = StopCondition::after_rounds(k);
        } else {
            double d = 0;
            read(s, "virtual_time", d, "stop");
            c.stop = StopCondition::after_time(d);
        }
    }
    c.check();
    return c;
}

inline SimConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config, path.string() + ": " + e.what());
    }
    auto cfg = parse_config(j);
    // relative IDX paths are taken relative to the config file
    auto rebase = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).string();
    };
    rebase(cfg.dataset.images_path);
    rebase(cfg.dataset.labels_path);
    return cfg;
}

// Full effective config, accepted back by parse_config.
inline nlohmann::json config_json(const SimConfig& c) {
    using nlohmann::json;
    json j;
    j["seed"] = c.seed;
    j["trainers"] = c.trainers;
    j["validators"] = c.validators;
    json d{{"kind", c.dataset.kind == DatasetConfig::Kind::synthetic ? "synthetic" : "idx"},
           {"train_pool", c.dataset.train_pool},
           {"validation_pool", c.dataset.validation_pool},
           {"test", c.dataset.test},
           {"features", c.dataset.features},
           {"classes", c.dataset.classes},
           {"center_scale", c.dataset.synthetic.center_scale},
           {"cluster_std", c.dataset.synthetic.cluster_std},
           {"scale_spread", c.dataset.synthetic.scale_spread},
           {"trainer_fraction", c.dataset.trainer_fraction},
           {"validator_fraction", c.dataset.validator_fraction}};
    if (c.dataset.kind == DatasetConfig::Kind::idx) {
        d["images"] = c.dataset.images_path;
        d["labels"] = c.dataset.labels_path;
    }
    j["dataset"] = d;
    j["learner"] = {{"model", c.learner.arch.kind == ModelArch::Kind::softmax ? "softmax" : "mlp"},
                    {"hidden", c.learner.arch.hidden},
                    {"learning_rate", c.learner.learning_rate},
                    {"batch_size", c.learner.batch_size},
                    {"l2", c.learner.l2}};
    j["sync"] = {{"scheme", to_string(c.sync.scheme)},
                 {"period", c.sync.period},
                 {"max_extension_steps", c.sync.max_extension_steps},
                 {"majority_ratio", c.sync.majority_ratio},
                 {"slack_ratio_threshold", c.sync.slack_ratio_threshold}};
    j["scoring"] = c.scoring;
    j["eta"] = c.eta;
    j["tolerance"] = c.tolerance;
    j["timing"] = {{"step_time", c.timing.step_time},
                   {"epochs_per_job", c.timing.epochs_per_job},
                   {"resync_interval", c.timing.resync_interval}};
    json lat{{"base", c.latency.base}, {"jitter", c.latency.jitter}, {"drop_prob", c.latency.drop_prob}};
    if (c.latency.gst) lat["gst"] = *c.latency.gst;
    if (c.latency.post_gst_jitter) lat["post_gst_jitter"] = *c.latency.post_gst_jitter;
    j["latency"] = lat;
    j["consensus"] = {{"timeout_propose", c.consensus.timeout_propose},
                      {"timeout_prevote", c.consensus.timeout_prevote},
                      {"timeout_precommit", c.consensus.timeout_precommit},
                      {"backoff", c.consensus.backoff},
                      {"max_backoff_rounds", c.consensus.max_backoff_rounds},
                      {"relay_on_round_change", c.consensus.relay_on_round_change},
                      {"relay_when_stalled", c.consensus.relay_when_stalled}};
    if (!c.trainer_behaviors.empty()) {
        j["trainer_behaviors"] = json::array();
        for (const auto& b : c.trainer_behaviors) j["trainer_behaviors"].push_back(detail::behavior_json(b));
    }
    if (!c.validator_behaviors.empty()) {
        j["validator_behaviors"] = json::array();
        for (const auto& b : c.validator_behaviors) j["validator_behaviors"].push_back(detail::behavior_json(b));
    }
    if (c.stop.kind == StopCondition::Kind::rounds)
        j["stop"] = {{"rounds", c.stop.rounds}};
    else
        j["stop"] = {{"virtual_time", c.stop.duration}};
    j["max_events"] = c.max_events;
    j["max_stall"] = c.max_stall;
    return j;
}

}  // namespace flobc
