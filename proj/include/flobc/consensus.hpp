#pragma once

// Voting BFT replication in the pBFT/Tendermint lineage: per height, rounds of
// propose -> prevote -> precommit with a quorum of floor(2n/3) + 1, locking on
// a value once a quorum prevoted it, and timeouts that move to the next round
// (and the next proposer). Timeouts grow by `backoff` per round within a
// height.
//
// The engine is a pure state machine: inputs are messages and fired timers,
// outputs are messages to send, timers to arm and committed values. Votes and
// proposals name their author; the environment guarantees authors cannot be
// forged, which makes relaying other validators' votes safe.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "flobc/error.hpp"
#include "flobc/hash.hpp"
#include "flobc/params.hpp"

namespace flobc::consensus {

inline std::size_t quorum_size(std::size_t n) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "quorum_size: need at least one validator");
    return 2 * n / 3 + 1;
}

inline std::size_t max_faulty(std::size_t n) { return n == 0 ? 0 : (n - 1) / 3; }

inline ValidatorId proposer_for(std::uint64_t height, std::uint64_t round, std::span<const ValidatorId> validators) {
    if (validators.empty()) throw Error(ErrorCode::invalid_argument, "proposer_for: empty validator list");
    return validators[(height + round) % validators.size()];
}

template <typename V>
concept Proposable = std::copyable<V> && requires(const V& v) {
    { v.digest() } -> std::convertible_to<Hash256>;
};

enum class Step : std::uint8_t { propose, prevote, precommit, committed };

inline const char* to_string(Step s) {
    switch (s) {
        case Step::propose: return "propose";
        case Step::prevote: return "prevote";
        case Step::precommit: return "precommit";
        case Step::committed: return "committed";
    }
    return "?";
}

enum class VoteType : std::uint8_t { prevote, precommit };

struct Vote {
    VoteType type = VoteType::prevote;
    std::uint64_t height = 0;
    std::uint32_t round = 0;
    ValidatorId voter = 0;
    std::optional<Hash256> value;  // nullopt = nil

    friend bool operator==(const Vote&, const Vote&) = default;
};

template <Proposable V>
struct Proposal {
    std::uint64_t height = 0;
    std::uint32_t round = 0;
    std::int32_t valid_round = -1;
    ValidatorId proposer = 0;
    V value;
};

// Several relayed messages in one envelope.
template <Proposable V>
struct Bundle {
    std::vector<Proposal<V>> proposals;
    std::vector<Vote> votes;
    bool catch_up = false;  // answers a lagging validator; never answered itself
};

template <Proposable V>
using Message = std::variant<Proposal<V>, Vote, Bundle<V>>;

struct Timeout {
    Step step = Step::propose;
    std::uint64_t height = 0;
    std::uint32_t round = 0;
    bool relay = false;  // re-broadcast tick rather than a step timeout

    friend auto operator<=>(const Timeout&, const Timeout&) = default;
};

struct TimerRequest {
    Timeout timeout;
    double delay = 0.0;
};

template <Proposable V>
struct Outbound {
    std::optional<ValidatorId> to;  // nullopt: every other validator
    Message<V> msg;
};

struct Evidence {
    ValidatorId offender = 0;
    std::uint64_t height = 0;
    std::uint32_t round = 0;
    std::string what;  // "prevote", "precommit" or "proposal"
    std::optional<Hash256> first;
    std::optional<Hash256> second;
};

template <Proposable V>
struct Output {
    std::vector<Outbound<V>> messages;
    std::vector<TimerRequest> timers;
    std::vector<std::pair<std::uint64_t, V>> commits;
    std::optional<std::pair<std::uint64_t, std::uint32_t>> proposal_needed;

    void append(Output&& o) {
        for (auto& m : o.messages) messages.push_back(std::move(m));
        for (auto& t : o.timers) timers.push_back(t);
        for (auto& c : o.commits) commits.push_back(std::move(c));
        if (o.proposal_needed) proposal_needed = o.proposal_needed;
    }
};

struct EngineConfig {
    double timeout_propose = 1.0;
    double timeout_prevote = 1.0;
    double timeout_precommit = 1.0;
    double backoff = 2.0;
    std::uint32_t max_backoff_rounds = 16;
    bool relay_on_round_change = true;
    // While stuck in a vote step, re-broadcast the height's messages every
    // step timeout. Messages lost before stabilization would otherwise leave
    // nobody with a quorum of any kind, and no timer left to fire.
    bool relay_when_stalled = true;
};

template <Proposable V>
class Engine {
public:
    using ValidityFn = std::function<bool(std::uint64_t height, const V&)>;
    using CommitFn = std::function<void(std::uint64_t height, const V&)>;

    struct Decision {
        Proposal<V> proposal;
        std::vector<Vote> precommits;
    };

    Engine(ValidatorId self, std::vector<ValidatorId> validators, EngineConfig cfg = {}, ValidityFn valid = {},
           CommitFn on_commit = {})
        : self_(self),
          validators_(std::move(validators)),
          cfg_(cfg),
          valid_fn_(std::move(valid)),
          commit_fn_(std::move(on_commit)) {
        if (validators_.empty()) throw Error(ErrorCode::invalid_argument, "engine: empty validator set");
        quorum_ = quorum_size(validators_.size());
        skip_threshold_ = max_faulty(validators_.size()) + 1;
    }

    std::uint64_t height() const noexcept { return height_; }
    std::uint32_t round() const noexcept { return round_; }
    Step step() const noexcept { return step_; }
    ValidatorId self() const noexcept { return self_; }
    std::size_t quorum() const noexcept { return quorum_; }
    const std::vector<ValidatorId>& validators() const noexcept { return validators_; }
    std::optional<Hash256> locked_value() const {
        return locked_value_ ? std::optional<Hash256>(locked_value_->digest()) : std::nullopt;
    }
    std::int32_t locked_round() const noexcept { return locked_round_; }
    const std::vector<Evidence>& evidence() const noexcept { return evidence_; }
    std::size_t duplicates_ignored() const noexcept { return duplicates_; }
    const std::map<std::uint64_t, Decision>& decisions() const noexcept { return decided_; }

    ValidatorId current_proposer() const { return proposer_for(height_, round_, validators_); }
    bool is_proposer() const { return current_proposer() == self_; }
    bool has_proposal() const {
        auto h = logs_.find(height_);
        if (h == logs_.end()) return false;
        auto r = h->second.rounds.find(round_);
        return r != h->second.rounds.end() && r->second.proposal.has_value();
    }

    // Votes recorded for (height, round, type), keyed by voter.
    std::map<ValidatorId, std::optional<Hash256>> votes(std::uint64_t h, std::uint32_t r, VoteType type) const {
        auto hl = logs_.find(h);
        if (hl == logs_.end()) return {};
        auto rl = hl->second.rounds.find(r);
        if (rl == hl->second.rounds.end()) return {};
        return type == VoteType::prevote ? rl->second.prevotes : rl->second.precommits;
    }

    // Enters round 0 of `height` (the first height this engine will decide).
    Output<V> start(std::uint64_t height = 0) {
        out_ = {};
        height_ = height;
        start_round(0);
        process();
        return take();
    }

    // Supplies the value to propose when this engine is the current proposer
    // and has no valid value carried over from an earlier round.
    Output<V> propose(V value) {
        out_ = {};
        if (is_proposer() && step_ == Step::propose && !has_own_proposal()) {
            Proposal<V> p{height_, round_, -1, self_, std::move(value)};
            broadcast(p);
            record_proposal(p, self_);
            process();
        }
        return take();
    }

    Output<V> handle(ValidatorId sender, const Message<V>& msg) {
        out_ = {};
        catchup_sent_.clear();
        in_catch_up_ = false;
        std::visit(
            [&](const auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, Proposal<V>>) {
                    record_proposal(m, sender);
                } else if constexpr (std::is_same_v<T, Vote>) {
                    record_vote(m, sender);
                } else {
                    in_catch_up_ = m.catch_up;
                    for (const auto& p : m.proposals) record_proposal(p, sender);
                    for (const auto& v : m.votes) record_vote(v, sender);
                }
            },
            msg);
        process();
        return take();
    }

    Output<V> on_timeout(const Timeout& t) {
        out_ = {};
        if (t.relay) {
            if (t.height == height_ && t.round == round_ && t.step == step_) {
                relay_height();
                out_.timers.push_back({t, timeout_delay(t.step, t.round)});
            }
            return take();
        }
        if (t.height == height_ && t.round == round_) {
            switch (t.step) {
                case Step::propose:
                    if (step_ == Step::propose) cast_vote(VoteType::prevote, std::nullopt);
                    break;
                case Step::prevote:
                    if (step_ == Step::prevote) cast_vote(VoteType::precommit, std::nullopt);
                    break;
                case Step::precommit:
                    start_round(round_ + 1);
                    break;
                case Step::committed:
                    break;
            }
        }
        process();
        return take();
    }

    double timeout_delay(Step step, std::uint32_t round) const {
        const double base = step == Step::propose   ? cfg_.timeout_propose
                            : step == Step::prevote ? cfg_.timeout_prevote
                                                    : cfg_.timeout_precommit;
        return base * std::pow(cfg_.backoff, std::min(round, cfg_.max_backoff_rounds));
    }

private:
    struct RoundLog {
        std::optional<Proposal<V>> proposal;
        std::map<ValidatorId, std::optional<Hash256>> prevotes;
        std::map<ValidatorId, std::optional<Hash256>> precommits;
        // later votes that conflict with a voter's first one; they still
        // prove the voter signed that value
        std::vector<Proposal<V>> conflicting_proposals;
        std::set<std::pair<ValidatorId, Hash256>> conflicting_prevotes;
        std::set<std::pair<ValidatorId, Hash256>> conflicting_precommits;
        bool prevote_timer = false;
        bool precommit_timer = false;
        bool lock_done = false;
    };

    struct HeightLog {
        std::map<std::uint32_t, RoundLog> rounds;
        std::map<Hash256, bool> validity;
    };

    Output<V> take() { return std::move(out_); }

    bool is_validator(ValidatorId id) const {
        return std::find(validators_.begin(), validators_.end(), id) != validators_.end();
    }

    bool has_own_proposal() const {
        auto h = logs_.find(height_);
        if (h == logs_.end()) return false;
        auto r = h->second.rounds.find(round_);
        return r != h->second.rounds.end() && r->second.proposal && r->second.proposal->proposer == self_;
    }

    bool valid(const V& v) {
        auto& cache = logs_[height_].validity;
        const auto d = v.digest();
        auto it = cache.find(d);
        if (it != cache.end()) return it->second;
        const bool ok = valid_fn_ ? valid_fn_(height_, v) : true;
        cache.emplace(d, ok);
        return ok;
    }

    void broadcast(Message<V> msg) { out_.messages.push_back({std::nullopt, std::move(msg)}); }

    void catch_up(ValidatorId sender, std::uint64_t h) {
        if (sender == self_ || !is_validator(sender) || in_catch_up_) return;
        auto it = decided_.find(h);
        if (it == decided_.end()) return;
        if (!catchup_sent_.insert({sender, h}).second) return;
        Bundle<V> b;
        b.catch_up = true;
        b.proposals.push_back(it->second.proposal);
        b.votes = it->second.precommits;
        out_.messages.push_back({sender, std::move(b)});
    }

    void record_proposal(const Proposal<V>& p, ValidatorId sender) {
        if (p.height < height_) {
            catch_up(sender, p.height);
            return;
        }
        if (p.proposer != proposer_for(p.height, p.round, validators_)) return;
        auto& log = logs_[p.height].rounds[p.round];
        if (log.proposal) {
            const auto first = log.proposal->value.digest();
            const auto second = p.value.digest();
            auto same = [&](const Proposal<V>& q) {
                return q.value.digest() == second && q.valid_round == p.valid_round;
            };
            if (same(*log.proposal) ||
                std::any_of(log.conflicting_proposals.begin(), log.conflicting_proposals.end(), same)) {
                ++duplicates_;
                return;
            }
            evidence_.push_back({p.proposer, p.height, p.round, "proposal", first, second});
            log.conflicting_proposals.push_back(p);
            return;
        }
        log.proposal = p;
    }

    void record_vote(const Vote& v, ValidatorId sender) {
        if (v.height < height_) {
            catch_up(sender, v.height);
            return;
        }
        if (!is_validator(v.voter)) return;
        auto& log = logs_[v.height].rounds[v.round];
        auto& votes = v.type == VoteType::prevote ? log.prevotes : log.precommits;
        auto [it, inserted] = votes.emplace(v.voter, v.value);
        if (!inserted) {
            auto& conflicting = v.type == VoteType::prevote ? log.conflicting_prevotes : log.conflicting_precommits;
            if (it->second == v.value || (v.value && conflicting.contains({v.voter, *v.value}))) {
                ++duplicates_;
            } else {
                evidence_.push_back({v.voter, v.height, v.round,
                                     v.type == VoteType::prevote ? "prevote" : "precommit", it->second, v.value});
                if (v.value) conflicting.insert({v.voter, *v.value});
            }
        }
    }

    void cast_vote(VoteType type, std::optional<Hash256> value) {
        Vote v{type, height_, round_, self_, value};
        broadcast(v);
        record_vote(v, self_);
        step_ = type == VoteType::prevote ? Step::prevote : Step::precommit;
        if (cfg_.relay_when_stalled)
            out_.timers.push_back({{step_, height_, round_, true}, timeout_delay(step_, round_)});
    }

    static std::size_t count_for(const std::map<ValidatorId, std::optional<Hash256>>& votes,
                                 const std::optional<Hash256>& value) {
        std::size_t n = 0;
        for (const auto& [id, v] : votes)
            if (v == value) ++n;
        return n;
    }

    // Voters that signed a vote for `d`, equivocators included. Two quorums
    // for different values would still need an honest validator in both.
    static std::size_t support(const RoundLog& log, VoteType type, const Hash256& d) {
        const bool pre = type == VoteType::prevote;
        std::size_t n = count_for(pre ? log.prevotes : log.precommits, d);
        for (const auto& [id, value] : pre ? log.conflicting_prevotes : log.conflicting_precommits)
            if (value == d) ++n;
        return n;
    }

    void start_round(std::uint32_t r) {
        const bool round_change = r > 0;
        round_ = r;
        step_ = Step::propose;
        if (round_change && cfg_.relay_on_round_change) relay_height();
        if (is_proposer()) {
            if (valid_value_) {
                Proposal<V> p{height_, round_, valid_round_, self_, *valid_value_};
                broadcast(p);
                record_proposal(p, self_);
            } else {
                out_.proposal_needed = std::pair{height_, round_};
            }
        }
        out_.timers.push_back({{Step::propose, height_, round_}, timeout_delay(Step::propose, round_)});
    }

    // Re-broadcasts every vote and proposal known for the current height so
    // validators that missed messages before a round change can converge.
    void relay_height() {
        auto h = logs_.find(height_);
        if (h == logs_.end()) return;
        Bundle<V> b;
        for (const auto& [r, log] : h->second.rounds) {
            if (log.proposal) b.proposals.push_back(*log.proposal);
            for (const auto& q : log.conflicting_proposals) b.proposals.push_back(q);
            for (const auto& [id, v] : log.prevotes) b.votes.push_back({VoteType::prevote, height_, r, id, v});
            for (const auto& [id, v] : log.precommits) b.votes.push_back({VoteType::precommit, height_, r, id, v});
            for (const auto& [id, d] : log.conflicting_prevotes)
                b.votes.push_back({VoteType::prevote, height_, r, id, d});
            for (const auto& [id, d] : log.conflicting_precommits)
                b.votes.push_back({VoteType::precommit, height_, r, id, d});
        }
        if (!b.proposals.empty() || !b.votes.empty()) broadcast(std::move(b));
    }

    void decide(const Proposal<V>& p, std::uint32_t r) {
        Decision d{p, {}};
        const auto& log = logs_[height_].rounds[r];
        for (const auto& [id, v] : log.precommits) d.precommits.push_back({VoteType::precommit, height_, r, id, v});
        for (const auto& [id, v] : log.conflicting_precommits)
            d.precommits.push_back({VoteType::precommit, height_, r, id, v});
        decided_.emplace(height_, std::move(d));
        out_.commits.emplace_back(height_, p.value);
        step_ = Step::committed;
        if (commit_fn_) commit_fn_(height_, p.value);
        logs_.erase(height_);
        ++height_;
        locked_value_.reset();
        locked_round_ = -1;
        valid_value_.reset();
        valid_round_ = -1;
        start_round(0);
    }

    // One rule application per call; returns whether anything changed.
    bool apply_rule() {
        auto& hl = logs_[height_];

        // commit: a proposal plus a precommit quorum for it in any round; an
        // equivocating proposer's other proposals count too
        for (auto& [r, log] : hl.rounds) {
            if (!log.proposal) continue;
            std::vector<const Proposal<V>*> seen{&*log.proposal};
            for (const auto& q : log.conflicting_proposals) seen.push_back(&q);
            for (const auto* q : seen) {
                if (support(log, VoteType::precommit, q->value.digest()) >= quorum_ && valid(q->value)) {
                    const auto p = *q;
                    decide(p, r);
                    return true;
                }
            }
        }

        // skip ahead when f+1 validators are already in a later round
        for (auto it = hl.rounds.upper_bound(round_); it != hl.rounds.end(); ++it) {
            std::set<ValidatorId> seen;
            if (it->second.proposal) seen.insert(it->second.proposal->proposer);
            for (const auto& [id, v] : it->second.prevotes) seen.insert(id);
            for (const auto& [id, v] : it->second.precommits) seen.insert(id);
            if (seen.size() >= skip_threshold_) {
                start_round(it->first);
                return true;
            }
        }

        auto& cur = hl.rounds[round_];

        if (step_ == Step::propose && cur.proposal) {
            const auto& p = *cur.proposal;
            const auto d = p.value.digest();
            if (p.valid_round < 0) {
                const bool ok = valid(p.value) && (locked_round_ < 0 || locked_value_->digest() == d);
                cast_vote(VoteType::prevote, ok ? std::optional(d) : std::nullopt);
                return true;
            }
            if (static_cast<std::uint32_t>(p.valid_round) < round_) {
                auto vr = hl.rounds.find(static_cast<std::uint32_t>(p.valid_round));
                if (vr != hl.rounds.end() && support(vr->second, VoteType::prevote, d) >= quorum_) {
                    const bool ok = valid(p.value) && (locked_round_ <= p.valid_round ||
                                                       (locked_value_ && locked_value_->digest() == d));
                    cast_vote(VoteType::prevote, ok ? std::optional(d) : std::nullopt);
                    return true;
                }
            }
        }

        if (step_ == Step::prevote && !cur.prevote_timer && cur.prevotes.size() >= quorum_) {
            cur.prevote_timer = true;
            out_.timers.push_back({{Step::prevote, height_, round_}, timeout_delay(Step::prevote, round_)});
            return true;
        }

        if (cur.proposal && !cur.lock_done && (step_ == Step::prevote || step_ == Step::precommit)) {
            const auto d = cur.proposal->value.digest();
            if (support(cur, VoteType::prevote, d) >= quorum_ && valid(cur.proposal->value)) {
                cur.lock_done = true;
                if (step_ == Step::prevote) {
                    locked_value_ = cur.proposal->value;
                    locked_round_ = static_cast<std::int32_t>(round_);
                    cast_vote(VoteType::precommit, d);
                }
                valid_value_ = cur.proposal->value;
                valid_round_ = static_cast<std::int32_t>(round_);
                return true;
            }
        }

        if (step_ == Step::prevote && count_for(cur.prevotes, std::nullopt) >= quorum_) {
            cast_vote(VoteType::precommit, std::nullopt);
            return true;
        }

        if (!cur.precommit_timer && cur.precommits.size() >= quorum_) {
            cur.precommit_timer = true;
            out_.timers.push_back({{Step::precommit, height_, round_}, timeout_delay(Step::precommit, round_)});
            return true;
        }
        return false;
    }

    void process() {
        while (apply_rule()) {
        }
    }

    ValidatorId self_;
    std::vector<ValidatorId> validators_;
    EngineConfig cfg_;
    ValidityFn valid_fn_;
    CommitFn commit_fn_;
    std::size_t quorum_ = 1;
    std::size_t skip_threshold_ = 1;

    std::uint64_t height_ = 0;
    std::uint32_t round_ = 0;
    Step step_ = Step::propose;
    std::optional<V> locked_value_;
    std::int32_t locked_round_ = -1;
    std::optional<V> valid_value_;
    std::int32_t valid_round_ = -1;

    std::map<std::uint64_t, HeightLog> logs_;
    std::map<std::uint64_t, Decision> decided_;
    // catch-up replies already queued while handling the current message
    std::set<std::pair<ValidatorId, std::uint64_t>> catchup_sent_;
    bool in_catch_up_ = false;
    std::vector<Evidence> evidence_;
    std::size_t duplicates_ = 0;
    Output<V> out_;
};

// Value-semantics wrapper: feeds one message to a copy of the engine.
template <Proposable V>
std::pair<Engine<V>, Output<V>> step_message(Engine<V> engine, ValidatorId sender, const Message<V>& msg) {
    auto out = engine.handle(sender, msg);
    return {std::move(engine), std::move(out)};
}

}  // namespace flobc::consensus
