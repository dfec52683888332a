#pragma once

// Deterministic discrete-event substrate: a virtual clock, an event queue
// ordered by (fire_at, seq), a latency/loss model with a global stabilization
// time, and trainer behavior profiles.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "flobc/error.hpp"
#include "flobc/params.hpp"
#include "flobc/rng.hpp"
#include "flobc/sync.hpp"

namespace flobc {

template <typename Payload>
struct SimEvent {
    VirtualTime fire_at = 0.0;
    std::uint64_t seq = 0;
    NodeId target = 0;
    Payload payload;
};

template <typename Payload>
class EventQueue {
public:
    std::uint64_t push(VirtualTime at, NodeId target, Payload payload) {
        if (at < now_) at = now_;
        const auto seq = next_seq_++;
        heap_.push(SimEvent<Payload>{at, seq, target, std::move(payload)});
        return seq;
    }

    bool empty() const noexcept { return heap_.empty(); }
    std::size_t size() const noexcept { return heap_.size(); }
    VirtualTime now() const noexcept { return now_; }
    VirtualTime next_time() const { return heap_.top().fire_at; }

    SimEvent<Payload> pop() {
        auto ev = heap_.top();
        heap_.pop();
        now_ = ev.fire_at;
        return ev;
    }

private:
    struct Later {
        bool operator()(const SimEvent<Payload>& a, const SimEvent<Payload>& b) const {
            if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
            return a.seq > b.seq;
        }
    };

    std::priority_queue<SimEvent<Payload>, std::vector<SimEvent<Payload>>, Later> heap_;
    VirtualTime now_ = 0.0;
    std::uint64_t next_seq_ = 0;
};

struct LatencyModel {
    VirtualTime base = 0.0;
    VirtualTime jitter = 0.0;
    double drop_prob = 0.0;
    std::optional<VirtualTime> gst;
    // jitter bound after gst; nullopt keeps `jitter`
    std::optional<VirtualTime> post_gst_jitter;

    void check() const {
        if (!(base >= 0.0) || !(jitter >= 0.0)) throw Error(ErrorCode::config, "latency: base and jitter must be >= 0");
        if (!(drop_prob >= 0.0 && drop_prob <= 1.0))
            throw Error(ErrorCode::config, "latency: drop_prob must be in [0, 1]");
    }
};

// Arrival time now + base + U(0, jitter), or nullopt when dropped. Drops only
// happen before gst.
inline std::optional<VirtualTime> deliver(const LatencyModel& lm, Rng& rng, VirtualTime now) {
    const bool stable = lm.gst && now >= *lm.gst;
    if (!stable && lm.drop_prob > 0.0 && rng.bernoulli(lm.drop_prob)) return std::nullopt;
    const VirtualTime jitter = stable && lm.post_gst_jitter ? *lm.post_gst_jitter : lm.jitter;
    const VirtualTime extra = jitter > 0.0 ? rng.uniform(0.0, jitter) : 0.0;
    return now + lm.base + extra;
}

struct NodeBehavior {
    enum class Profile { honest, noisy, lazy, equivocator } profile = Profile::honest;
    double sigma = 0.0;      // noisy
    double skip_prob = 0.0;  // lazy
    double pace_multiplier = 1.0;

    static NodeBehavior honest(double pace = 1.0) { return {Profile::honest, 0.0, 0.0, pace}; }
    static NodeBehavior noisy(double sigma, double pace = 1.0) { return {Profile::noisy, sigma, 0.0, pace}; }
    static NodeBehavior lazy(double skip, double pace = 1.0) { return {Profile::lazy, 0.0, skip, pace}; }
    static NodeBehavior equivocator() { return {Profile::equivocator, 0.0, 0.0, 1.0}; }

    void check() const {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::config, "behavior: sigma must be >= 0");
        if (!(skip_prob >= 0.0 && skip_prob <= 1.0)) throw Error(ErrorCode::config, "behavior: skip_prob in [0, 1]");
        if (!(pace_multiplier > 0.0) || !std::isfinite(pace_multiplier))
            throw Error(ErrorCode::config, "behavior: pace must be positive");
    }
};

inline const char* to_string(NodeBehavior::Profile p) {
    switch (p) {
        case NodeBehavior::Profile::honest: return "honest";
        case NodeBehavior::Profile::noisy: return "noisy";
        case NodeBehavior::Profile::lazy: return "lazy";
        case NodeBehavior::Profile::equivocator: return "equivocator";
    }
    return "?";
}

// Noise standard deviation proportional to trainer index.
inline double indexed_noise_sigma(double k, std::size_t trainer_index) { return k * static_cast<double>(trainer_index); }

// delta + N(0, sigma^2 I) for noisy profiles; identity otherwise.
inline GradientUpdate apply_noise(GradientUpdate update, const NodeBehavior& behavior, Rng& rng) {
    if (behavior.profile != NodeBehavior::Profile::noisy || behavior.sigma == 0.0) return update;
    for (auto& v : update.delta) v += rng.normal(0.0, behavior.sigma);
    return update;
}

}  // namespace flobc
