#pragma once

// Fault-injection harness for the consensus engine alone: n validators, some
// of them Byzantine, exchanging messages over a lossy, reordering network that
// stabilizes after a global stabilization time.

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <variant>
#include <vector>

#include "flobc/codec.hpp"
#include "flobc/consensus.hpp"
#include "flobc/hash.hpp"
#include "flobc/netsim.hpp"
#include "flobc/rng.hpp"

namespace flobc::consensus {

struct TestValue {
    std::uint64_t height = 0;
    ValidatorId author = 0;
    std::uint64_t salt = 0;
    Hash256 id;

    TestValue() = default;
    TestValue(std::uint64_t h, ValidatorId a, std::uint64_t s) : height(h), author(a), salt(s) {
        ByteWriter w;
        w.u64(h);
        w.u32(a);
        w.u64(s);
        id = sha256(w.bytes());
    }

    Hash256 digest() const { return id; }
};

enum class ByzantineMode { silent, equivocate, conflicting };

inline const char* to_string(ByzantineMode m) {
    switch (m) {
        case ByzantineMode::silent: return "silent";
        case ByzantineMode::equivocate: return "equivocate";
        case ByzantineMode::conflicting: return "conflicting";
    }
    return "?";
}

struct ConsensusSimConfig {
    std::size_t validators = 4;
    std::map<ValidatorId, ByzantineMode> byzantine;
    LatencyModel latency{0.05, 0.5, 0.1, 5.0, 0.2};
    EngineConfig engine;
    std::uint64_t target_heights = 5;
    VirtualTime time_limit = 10'000.0;
    std::uint64_t max_events = 5'000'000;
    std::uint64_t seed = 1;
    std::ostream* trace = nullptr;
};

struct ConsensusSimResult {
    // honest validator -> height -> committed digest
    std::map<ValidatorId, std::map<std::uint64_t, Hash256>> commits;
    bool fork = false;
    std::uint64_t min_committed_heights = 0;
    std::size_t evidence = 0;
    std::uint64_t messages = 0;
    std::uint64_t events = 0;
    VirtualTime end_time = 0.0;
    std::uint32_t max_round = 0;
};

namespace detail {

struct SimDeliver {
    ValidatorId from;
    Message<TestValue> msg;
};

using ConsensusSimPayload = std::variant<SimDeliver, Timeout>;

inline void trace_message(std::ostream& os, VirtualTime t, ValidatorId from, std::optional<ValidatorId> to,
                          const Message<TestValue>& msg) {
    os << t << ' ' << from << "->" << (to ? std::to_string(*to) : std::string("*")) << ' ';
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Proposal<TestValue>>) {
                os << "proposal h=" << m.height << " r=" << m.round << " vr=" << m.valid_round << " v="
                   << m.value.id.short_hex();
            } else if constexpr (std::is_same_v<T, Vote>) {
                os << (m.type == VoteType::prevote ? "prevote" : "precommit") << " h=" << m.height
                   << " r=" << m.round << " by=" << m.voter << " v=" << (m.value ? m.value->short_hex() : "nil");
            } else {
                os << "bundle proposals=" << m.proposals.size() << " votes=" << m.votes.size();
            }
        },
        msg);
    os << '\n';
}

}  // namespace detail

inline ConsensusSimResult run_consensus_sim(const ConsensusSimConfig& cfg) {
    using detail::ConsensusSimPayload;
    using detail::SimDeliver;

    std::vector<ValidatorId> ids(cfg.validators);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<ValidatorId>(i);

    EventQueue<ConsensusSimPayload> queue;
    Rng net_rng(derive_seed(cfg.seed, 0x4E7u));
    Rng byz_rng(derive_seed(cfg.seed, 0xB42u));
    ConsensusSimResult res;

    std::map<ValidatorId, Engine<TestValue>> engines;
    for (auto id : ids)
        if (!cfg.byzantine.contains(id)) engines.emplace(id, Engine<TestValue>(id, ids, cfg.engine));

    auto send = [&](ValidatorId from, std::optional<ValidatorId> to, const Message<TestValue>& msg) {
        if (cfg.trace) detail::trace_message(*cfg.trace, queue.now(), from, to, msg);
        auto one = [&](ValidatorId target) {
            ++res.messages;
            if (auto at = deliver(cfg.latency, net_rng, queue.now())) queue.push(*at, target, SimDeliver{from, msg});
        };
        if (to) {
            one(*to);
        } else {
            for (auto id : ids)
                if (id != from) one(id);
        }
    };

    std::uint64_t salt = 0;
    auto handle_output = [&](ValidatorId self, Output<TestValue>&& out) {
        // the engine may ask for a value; honest proposers answer at once
        while (true) {
            for (auto& m : out.messages) send(self, m.to, m.msg);
            for (auto& t : out.timers) queue.push(queue.now() + t.delay, self, t.timeout);
            for (auto& [h, v] : out.commits) res.commits[self][h] = v.digest();
            if (!out.proposal_needed) break;
            auto [h, r] = *out.proposal_needed;
            out = engines.at(self).propose(TestValue(h, self, ++salt));
        }
    };

    // Byzantine state: which (height, round) each has already attacked, and
    // the proposal digests it has seen there.
    std::map<ValidatorId, std::set<std::pair<std::uint64_t, std::uint32_t>>> attacked;
    std::map<std::pair<std::uint64_t, std::uint32_t>, std::vector<Hash256>> seen_values;

    auto byzantine_act = [&](ValidatorId self, ByzantineMode mode, std::uint64_t h, std::uint32_t r) {
        if (mode == ByzantineMode::silent) return;
        if (!attacked[self].insert({h, r}).second) return;
        auto& seen = seen_values[{h, r}];
        const TestValue a(h, self, byz_rng.next_u64());
        const TestValue b(h, self, byz_rng.next_u64());
        if (proposer_for(h, r, ids) == self) {
            for (auto peer : ids) {
                if (peer == self) continue;
                const auto& v = (peer % 2 == 0) ? a : b;
                send(self, peer, Proposal<TestValue>{h, r, -1, self, v});
            }
        }
        auto pick = [&](ValidatorId peer, VoteType type) -> std::optional<Hash256> {
            if (mode == ByzantineMode::equivocate) {
                const Hash256 x = seen.empty() ? a.id : seen.front();
                const Hash256 y = seen.size() > 1 ? seen[1] : b.id;
                return (peer % 2 == 0) ? x : y;
            }
            switch (byz_rng.below(4)) {
                case 0: return std::nullopt;
                case 1: return seen.empty() ? a.id : seen[byz_rng.below(seen.size())];
                case 2: return a.id;
                default: return type == VoteType::prevote ? b.id : a.id;
            }
        };
        for (auto peer : ids) {
            if (peer == self) continue;
            send(self, peer, Vote{VoteType::prevote, h, r, self, pick(peer, VoteType::prevote)});
            send(self, peer, Vote{VoteType::precommit, h, r, self, pick(peer, VoteType::precommit)});
        }
    };

    auto observe = [&](const Message<TestValue>& msg, auto&& fn) {
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Proposal<TestValue>>) {
                    auto& s = seen_values[{m.height, m.round}];
                    if (std::find(s.begin(), s.end(), m.value.id) == s.end()) s.push_back(m.value.id);
                    fn(m.height, m.round);
                } else if constexpr (std::is_same_v<T, Vote>) {
                    fn(m.height, m.round);
                } else {
                    for (const auto& p : m.proposals) fn(p.height, p.round);
                    for (const auto& v : m.votes) fn(v.height, v.round);
                }
            },
            msg);
    };

    for (auto& [id, engine] : engines) handle_output(id, engine.start());

    auto all_done = [&] {
        for (auto& [id, engine] : engines)
            if (engine.height() < cfg.target_heights) return false;
        return true;
    };

    while (!queue.empty() && !all_done()) {
        if (queue.next_time() > cfg.time_limit || res.events >= cfg.max_events) break;
        auto ev = queue.pop();
        ++res.events;
        const auto target = static_cast<ValidatorId>(ev.target);
        if (auto byz = cfg.byzantine.find(target); byz != cfg.byzantine.end()) {
            if (auto* d = std::get_if<SimDeliver>(&ev.payload))
                observe(d->msg, [&](std::uint64_t h, std::uint32_t r) { byzantine_act(target, byz->second, h, r); });
            continue;
        }
        auto& engine = engines.at(target);
        if (auto* d = std::get_if<SimDeliver>(&ev.payload)) {
            observe(d->msg, [](std::uint64_t, std::uint32_t) {});
            handle_output(target, engine.handle(d->from, d->msg));
        } else {
            handle_output(target, engine.on_timeout(std::get<Timeout>(ev.payload)));
        }
        res.max_round = std::max(res.max_round, engine.round());
    }

    res.end_time = queue.now();
    res.min_committed_heights = std::numeric_limits<std::uint64_t>::max();
    for (auto& [id, engine] : engines) {
        res.min_committed_heights = std::min(res.min_committed_heights, engine.height());
        res.evidence += engine.evidence().size();
    }
    if (engines.empty()) res.min_committed_heights = 0;

    std::map<std::uint64_t, Hash256> canonical;
    for (const auto& [id, by_height] : res.commits) {
        for (const auto& [h, d] : by_height) {
            auto [it, inserted] = canonical.emplace(h, d);
            if (!inserted && it->second != d) res.fork = true;
        }
    }
    return res;
}

}  // namespace flobc::consensus
