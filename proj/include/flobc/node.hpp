#pragma once

// Trainer and validator state machines on top of the event queue, plus the
// simulation loop that drives them.
//
// Trainers hold a shard, train against the latest release announced by their
// assigned validator and submit cumulative deltas. Validators score updates,
// gossip updates and reports to each other, decide round closure from their
// local round view and replicate release blocks through the voting engine.
// The proposer of a height assembles the block once its own round view
// closes; everyone else only votes on it.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "flobc/aggregation.hpp"
#include "flobc/consensus.hpp"
#include "flobc/ledger.hpp"
#include "flobc/metrics.hpp"
#include "flobc/netsim.hpp"
#include "flobc/reputation.hpp"
#include "flobc/simconfig.hpp"
#include "flobc/sync.hpp"
#include "flobc/validation.hpp"

namespace flobc {

// Consensus value: a block shared by pointer, identified by its hash.
struct BlockRef {
    std::shared_ptr<const Block> block;
    Hash256 hash;

    static BlockRef make(Block b) {
        BlockRef r;
        r.hash = b.hash();
        r.block = std::make_shared<const Block>(std::move(b));
        return r;
    }

    Hash256 digest() const { return hash; }
};

namespace msg {

struct ReleaseNotice {
    std::uint64_t round_id = 0;
    Version version = 0;
    std::shared_ptr<const FlatParams> params;
};

struct ExtensionNotice {
    std::uint64_t round_id = 0;
    VirtualTime until = 0.0;
};

struct ResyncRequest {};

struct Submission {
    std::uint64_t round_id = 0;
    std::shared_ptr<const GradientUpdate> update;
};

struct UpdateGossip {
    std::uint64_t round_id = 0;
    std::shared_ptr<const GradientUpdate> update;
};

// Carries the update too, so a report never arrives without its subject.
struct ReportGossip {
    Hash256 update_digest;
    ValidationReport report;
    std::shared_ptr<const GradientUpdate> update;
};

struct Consensus {
    consensus::Message<BlockRef> body;
};

struct JobDone {
    std::uint64_t job = 0;
    std::uint64_t total_steps = 0;
};

struct RoundTimer {
    std::uint64_t round_id = 0;
};

struct ResyncTimer {};

struct ConsensusTimer {
    consensus::Timeout timeout;
};

}  // namespace msg

using Payload = std::variant<msg::ReleaseNotice, msg::ExtensionNotice, msg::ResyncRequest, msg::Submission,
                             msg::UpdateGossip, msg::ReportGossip, msg::Consensus, msg::JobDone, msg::RoundTimer,
                             msg::ConsensusTimer, msg::ResyncTimer>;

struct Envelope {
    NodeId from = 0;
    Payload payload;
};

struct SimStats {
    std::uint64_t events = 0;
    std::uint64_t messages = 0;
    std::uint64_t dropped_messages = 0;
    std::uint64_t stale_submissions = 0;
    std::uint64_t late_submissions = 0;
    std::uint64_t duplicate_submissions = 0;
    std::uint64_t invalid_proposals = 0;
    std::uint64_t evidence = 0;
    std::uint32_t max_consensus_round = 0;
    VirtualTime end_time = 0.0;
};

struct SimResult {
    MetricsLog log;
    std::vector<std::vector<Block>> chains;  // per validator
    std::vector<bool> honest;                // per validator
    std::size_t reference = 0;               // validator whose view fills the log
    SimStats stats;

    const std::vector<Block>& chain() const { return chains.at(reference); }

    // Every pair of honest chains agrees on their common prefix.
    bool chains_consistent() const {
        for (std::size_t a = 0; a < chains.size(); ++a)
            for (std::size_t b = a + 1; b < chains.size(); ++b) {
                if (!honest[a] || !honest[b]) continue;
                const auto n = std::min(chains[a].size(), chains[b].size());
                for (std::size_t i = 0; i < n; ++i)
                    if (chains[a][i].hash() != chains[b][i].hash()) return false;
            }
        return true;
    }
};

class Simulation {
public:
    explicit Simulation(SimConfig cfg) : Simulation(cfg, build_data(cfg)) {}

    Simulation(SimConfig cfg, SimData data)
        : cfg_(std::move(cfg)), data_(std::move(data)), net_rng_(derive_seed(cfg_.seed, 0x4E7u)) {
        cfg_.check();
        setup();
    }

    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    SimResult run() {
        start();
        const bool timed = cfg_.stop.kind == StopCondition::Kind::virtual_time;
        while (true) {
            if (!timed && completed_rounds() >= cfg_.stop.rounds) break;
            if (queue_.empty()) {
                if (timed) break;
                throw Error(ErrorCode::deadlock, "event queue drained after " + std::to_string(completed_rounds()) +
                                                     " of " + std::to_string(cfg_.stop.rounds) +
                                                     " rounds; waiting on " + waiting_condition());
            }
            if (timed && queue_.next_time() > cfg_.stop.duration) break;
            const auto& ref = validators_[reference_];
            if (ref.chain.size() != progress_height_) {
                progress_height_ = ref.chain.size();
                progress_time_ = queue_.now();
            }
            if (cfg_.max_stall > 0.0 && queue_.next_time() - progress_time_ > cfg_.max_stall)
                throw Error(ErrorCode::deadlock, "no block for " + fmt_real(cfg_.max_stall) +
                                                     " s of virtual time; waiting on " + waiting_condition());
            if (++stats_.events > cfg_.max_events)
                throw Error(ErrorCode::deadlock, "event budget exhausted; waiting on " + waiting_condition());
            auto ev = queue_.pop();
            dispatch(ev.target, std::move(ev.payload));
        }
        stats_.end_time = queue_.now();
        return finish();
    }

private:
    struct Trainer {
        TrainerId id = 0;
        NodeId node = 0;
        ValidatorId validator = 0;
        const Dataset* shard = nullptr;
        LearnerConfig learner;
        NodeBehavior behavior;
        Rng rng{0};
        std::uint64_t steps_per_job = 1;

        bool has_round = false;
        std::uint64_t round_id = 0;
        Version version = 0;
        std::shared_ptr<const FlatParams> base;
        std::optional<SgdRun> sgd;  // training state on `base`, resumed by each job
        std::uint64_t job = 0;  // current job id; stale JobDone events are ignored
        bool busy = false;
        bool skipping = false;
        bool submitted = false;
        bool extra_done = false;
        std::uint64_t steps_done = 0;
        std::optional<VirtualTime> extension_until;
    };

    struct Candidate {
        std::shared_ptr<const GradientUpdate> update;
        std::map<ValidatorId, ValidationReport> reports;
        std::uint64_t steps = 0;
        bool ignored = false;
        bool scored = false;  // this validator has judged the update itself
    };

    struct Validator {
        ValidatorId id = 0;
        NodeId node = 0;
        bool equivocator = false;
        ValidatorConfig vcfg;
        Rng rng{0};
        StateStore state;
        std::vector<Block> chain;
        std::unique_ptr<consensus::Engine<BlockRef>> engine;
        std::vector<TrainerId> trainers;

        RoundState local;
        VirtualTime committed_deadline = 0.0;
        std::map<TrainerId, std::map<Hash256, Candidate>> candidates;
        std::vector<Envelope> future;  // FL messages for rounds not yet open here
        std::optional<consensus::TimerRequest> deferred_propose;
        std::optional<std::pair<std::uint64_t, std::uint32_t>> want_propose;
        bool just_committed = false;
        std::uint64_t nonce = 0;
    };

    // Setup

    void setup() {
        const auto v = cfg_.validators;
        const auto t = cfg_.trainers;
        std::vector<ValidatorId> vids(v);
        for (std::size_t i = 0; i < v; ++i) vids[i] = static_cast<ValidatorId>(i);

        const auto& any = data_.train_pool;
        initial_ = initial_params(cfg_, any);
        std::vector<TrainerId> tids;
        for (std::size_t i = 0; i < t; ++i) tids.push_back(static_cast<TrainerId>(i));
        const double span = cfg_.sync.scheme == SyncScheme::bap ? 0.0 : cfg_.sync.period;
        genesis_ = make_genesis(initial_, tids, span, 0);

        reference_ = v;
        validators_.resize(v);
        for (std::size_t i = 0; i < v; ++i) {
            auto& val = validators_[i];
            val.id = static_cast<ValidatorId>(i);
            val.node = static_cast<NodeId>(i);
            val.equivocator = cfg_.validator_behavior(i).profile == NodeBehavior::Profile::equivocator;
            if (!val.equivocator && reference_ == v) reference_ = i;
            val.vcfg = ValidatorConfig{data_.validator_shards[i], cfg_.learner.arch, cfg_.tolerance};
            val.rng = Rng(derive_seed(cfg_.seed, 0x7A11u, i));
            val.engine = std::make_unique<consensus::Engine<BlockRef>>(
                val.id, vids, cfg_.consensus,
                [this, i](std::uint64_t h, const BlockRef& b) { return block_valid(validators_[i], h, b); },
                [this, i](std::uint64_t h, const BlockRef& b) { on_commit(validators_[i], h, b); });
        }

        trainers_.resize(t);
        for (std::size_t i = 0; i < t; ++i) {
            auto& tr = trainers_[i];
            tr.id = static_cast<TrainerId>(i);
            tr.node = static_cast<NodeId>(v + i);
            tr.validator = static_cast<ValidatorId>(i % v);
            tr.shard = &data_.trainer_shards[i];
            tr.learner = trainer_learner(cfg_, i);
            tr.behavior = cfg_.trainer_behavior(i);
            tr.rng = Rng(derive_seed(cfg_.seed, 0xB0A7u, i));
            tr.steps_per_job =
                cfg_.timing.epochs_per_job * steps_per_epoch(tr.shard->n, cfg_.learner.batch_size);
            validators_[tr.validator].trainers.push_back(tr.id);
        }

        log_.scheme = cfg_.sync.label();
        log_.trainers = t;
        log_.validators = v;
        log_.seed = cfg_.seed;
    }

    void start() {
        for (auto& val : validators_) {
            val.state = execute_block(StateStore{}, genesis_);
            val.chain.push_back(genesis_);
            enter_round(val);
        }
        record_row(validators_[reference_]);
        for (auto& val : validators_) {
            notify_release(val, std::nullopt);
            auto out = val.engine->start(val.state.height);
            process_output(val, std::move(out));
        }
        if (cfg_.timing.resync_interval > 0.0)
            for (auto& tr : trainers_) local(tr.node, cfg_.timing.resync_interval, msg::ResyncTimer{});
    }

    SimResult finish() {
        SimResult res;
        res.reference = reference_;
        for (auto& val : validators_) {
            res.chains.push_back(val.chain);
            res.honest.push_back(!val.equivocator);
            stats_.evidence += val.engine->evidence().size();
        }
        stats_.messages = messages_;
        res.stats = stats_;
        res.log = std::move(log_);
        return res;
    }

    std::uint64_t completed_rounds() const { return log_.rows.empty() ? 0 : log_.rows.back().round; }

    std::string waiting_condition() const {
        const auto& val = validators_[reference_];
        const auto& rs = val.local;
        std::string why = "round " + std::to_string(rs.round_id) + " at validator " + std::to_string(val.id) + ": ";
        if (rs.closed)
            return why + "closed, consensus at height " + std::to_string(val.engine->height()) + " round " +
                   std::to_string(val.engine->round()) + " has no decision";
        why += std::to_string(rs.submitted.size()) + "/" + std::to_string(rs.total_trainers) + " trainers submitted";
        if (cfg_.sync.scheme == SyncScheme::bap)
            why += ", need " + std::to_string(bap_required(cfg_.sync, rs.total_trainers));
        return why;
    }

    // Network

    void send(NodeId from, NodeId to, Payload p) {
        ++messages_;
        auto at = deliver(cfg_.latency, net_rng_, queue_.now());
        if (!at) {
            ++stats_.dropped_messages;
            return;
        }
        queue_.push(*at, to, Envelope{from, std::move(p)});
    }

    void local(NodeId node, VirtualTime at, Payload p) { queue_.push(at, node, Envelope{node, std::move(p)}); }

    void broadcast_validators(const Validator& from, const Payload& p) {
        for (const auto& other : validators_)
            if (other.id != from.id) send(from.node, other.node, p);
    }

    void dispatch(NodeId target, Envelope env) {
        if (target < validators_.size())
            on_validator_event(validators_[target], std::move(env));
        else
            on_trainer_event(trainers_[target - validators_.size()], std::move(env));
    }

    // Trainer

    void on_trainer_event(Trainer& tr, Envelope env) {
        std::visit(
            [&](auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, msg::ReleaseNotice>) {
                    trainer_release(tr, m);
                } else if constexpr (std::is_same_v<T, msg::ExtensionNotice>) {
                    trainer_extension(tr, m);
                } else if constexpr (std::is_same_v<T, msg::JobDone>) {
                    trainer_job_done(tr, m);
                } else if constexpr (std::is_same_v<T, msg::ResyncTimer>) {
                    if (tr.has_round) return;
                    send(tr.node, validators_[tr.validator].node, msg::ResyncRequest{});
                    local(tr.node, queue_.now() + cfg_.timing.resync_interval, msg::ResyncTimer{});
                }
            },
            env.payload);
    }

    void trainer_release(Trainer& tr, const msg::ReleaseNotice& m) {
        if (tr.has_round && m.round_id <= tr.round_id) return;
        tr.has_round = true;
        tr.round_id = m.round_id;
        tr.version = m.version;
        tr.base = m.params;
        tr.sgd.reset();
        ++tr.job;  // cancels any job still running on the previous model
        tr.busy = false;
        tr.submitted = false;
        tr.extra_done = false;
        tr.steps_done = 0;
        tr.extension_until.reset();
        tr.skipping = tr.behavior.profile == NodeBehavior::Profile::lazy && tr.rng.bernoulli(tr.behavior.skip_prob);
        if (!tr.skipping) start_job(tr, tr.steps_per_job);
    }

    void start_job(Trainer& tr, std::uint64_t steps) {
        tr.busy = true;
        const VirtualTime duration =
            static_cast<double>(steps) * cfg_.timing.step_time * tr.behavior.pace_multiplier;
        local(tr.node, queue_.now() + duration, msg::JobDone{tr.job, tr.steps_done + steps});
    }

    void trainer_extension(Trainer& tr, const msg::ExtensionNotice& m) {
        if (!tr.has_round || m.round_id > tr.round_id) {
            send(tr.node, validators_[tr.validator].node, msg::ResyncRequest{});
            return;
        }
        if (m.round_id != tr.round_id) return;
        tr.extension_until = m.until;
        maybe_extra_steps(tr);
    }

    // Only trainers that had already finished when the extension was granted
    // get extra steps.
    void maybe_extra_steps(Trainer& tr) {
        if (cfg_.sync.scheme != SyncScheme::ssp || !tr.submitted || tr.busy || tr.extra_done) return;
        tr.extra_done = true;
        const double step = cfg_.timing.step_time * tr.behavior.pace_multiplier;
        const double room = *tr.extension_until - queue_.now();
        const auto fit = room > 0.0 ? static_cast<std::uint64_t>(std::floor(room / step)) : 0;
        const auto extra = std::min<std::uint64_t>(extra_steps_allowed(cfg_.sync, true, true), fit);
        if (extra > 0) start_job(tr, extra);
    }

    void trainer_job_done(Trainer& tr, const msg::JobDone& m) {
        if (m.job != tr.job || !tr.busy) return;
        tr.busy = false;
        tr.steps_done = m.total_steps;
        if (!tr.sgd) tr.sgd.emplace(*tr.base, *tr.shard, tr.learner, tr.round_id);
        tr.sgd->advance(tr.steps_done - tr.sgd->steps());
        auto update = tr.sgd->update();
        update.trainer_id = tr.id;
        update.base_version = tr.version;
        update = apply_noise(std::move(update), tr.behavior, tr.rng);
        tr.submitted = true;
        send(tr.node, validators_[tr.validator].node,
             msg::Submission{tr.round_id, std::make_shared<const GradientUpdate>(std::move(update))});
        if (cfg_.sync.scheme == SyncScheme::bap) start_job(tr, tr.steps_per_job);
    }

    // Validator

    void on_validator_event(Validator& val, Envelope env) {
        std::visit(
            [&](auto& m) {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, msg::Submission>) {
                    on_submission_msg(val, env.from, m);
                } else if constexpr (std::is_same_v<T, msg::UpdateGossip>) {
                    on_update_gossip(val, env, m);
                } else if constexpr (std::is_same_v<T, msg::ReportGossip>) {
                    on_report_gossip(val, env, m);
                } else if constexpr (std::is_same_v<T, msg::ResyncRequest>) {
                    if (env.from >= validators_.size()) notify_release(val, env.from);
                } else if constexpr (std::is_same_v<T, msg::RoundTimer>) {
                    if (m.round_id == val.local.round_id) check_close(val);
                } else if constexpr (std::is_same_v<T, msg::ConsensusTimer>) {
                    auto out = val.engine->on_timeout(m.timeout);
                    process_output(val, std::move(out));
                } else if constexpr (std::is_same_v<T, msg::Consensus>) {
                    auto out = val.engine->handle(static_cast<ValidatorId>(env.from), m.body);
                    process_output(val, std::move(out));
                    release_deferred_if_others_moved(val);
                }
            },
            env.payload);
        after_event(val);
    }

    // Returns false when the message is for another round and has been
    // buffered or discarded.
    bool current_round(Validator& val, const Envelope& env, std::uint64_t round_id) {
        if (round_id > val.local.round_id) {
            val.future.push_back(env);
            return false;
        }
        return round_id == val.local.round_id;
    }

    // First sighting of (trainer, digest) in this round counts as a submission.
    Candidate* note_candidate(Validator& val, TrainerId trainer, const Hash256& d, std::uint64_t steps) {
        auto& per = val.candidates[trainer];
        auto it = per.find(d);
        if (it != per.end()) return it->second.ignored ? nullptr : &it->second;
        auto& c = per[d];
        c.steps = steps;
        if (val.local.closed) {
            ++stats_.late_submissions;
            c.ignored = true;
            return nullptr;
        }
        auto outcome = on_submission(cfg_.sync, val.local, trainer);
        val.local = std::move(outcome.state);
        if (outcome.result == SubmissionResult::rejected_duplicate) {
            ++stats_.duplicate_submissions;
            c.ignored = true;
            return nullptr;
        }
        return &c;
    }

    void on_submission_msg(Validator& val, NodeId from, const msg::Submission& m) {
        if (!current_round(val, Envelope{from, m}, m.round_id) ||
            m.update->base_version != val.state.current_model->version()) {
            if (m.round_id <= val.local.round_id) {
                ++stats_.stale_submissions;
                notify_release(val, from);
            }
            return;
        }
        const auto d = digest(*m.update);
        auto* c = note_candidate(val, m.update->trainer_id, d, m.update->steps);
        if (!c) return;
        c->update = m.update;
        const bool accepted = score(val, *c, d);
        if (accepted) broadcast_validators(val, msg::UpdateGossip{m.round_id, m.update});
        check_close(val);
    }

    void on_update_gossip(Validator& val, const Envelope& env, const msg::UpdateGossip& m) {
        if (!current_round(val, env, m.round_id)) return;
        if (m.update->base_version != val.state.current_model->version()) return;
        const auto d = digest(*m.update);
        auto* c = note_candidate(val, m.update->trainer_id, d, m.update->steps);
        if (!c || c->scored) return;
        c->update = m.update;
        score(val, *c, d);
        check_close(val);
    }

    void on_report_gossip(Validator& val, const Envelope& env, const msg::ReportGossip& m) {
        if (!current_round(val, env, m.report.round)) return;
        if (m.update->base_version != val.state.current_model->version()) return;
        auto* c = note_candidate(val, m.report.trainer_id, m.update_digest, m.update->steps);
        if (!c) return;
        if (!c->update) c->update = m.update;
        c->reports[static_cast<ValidatorId>(env.from)] = m.report;
        check_close(val);
    }

    // Validates a candidate, stores and gossips this validator's report.
    // Without scoring every update is taken as is.
    bool score(Validator& val, Candidate& c, const Hash256& d) {
        c.scored = true;
        if (!cfg_.scoring) return true;
        auto outcome = validate_update(*val.state.current_model, *c.update, val.vcfg, val.local.round_id);
        c.reports[val.id] = outcome.report;
        log_.reports.push_back({val.id, outcome.report});
        broadcast_validators(val, msg::ReportGossip{d, outcome.report, c.update});
        return outcome.report.accepted;
    }

    void check_close(Validator& val) {
        if (val.local.closed) return;
        const auto decision = should_close(cfg_.sync, val.local, queue_.now());
        switch (decision.kind) {
            case CloseDecision::Kind::keep_open:
                return;
            case CloseDecision::Kind::extend:
                val.local = grant_extension(val.local, decision.extend_by);
                local(val.node, *val.local.deadline, msg::RoundTimer{val.local.round_id});
                for (auto t : val.trainers)
                    send(val.node, trainers_[t].node, msg::ExtensionNotice{val.local.round_id, *val.local.deadline});
                return;
            case CloseDecision::Kind::close:
                val.local.closed = true;
                if (val.deferred_propose) {
                    arm_timer(val, *val.deferred_propose);
                    val.deferred_propose.reset();
                }
                maybe_propose(val);
                return;
        }
    }

    // Votes from f + 1 others at round 0 mean some honest validator closed;
    // stop waiting for our own view to close.
    void release_deferred_if_others_moved(Validator& val) {
        if (!val.deferred_propose) return;
        const auto& t = val.deferred_propose->timeout;
        if (t.height != val.engine->height()) return;
        std::set<ValidatorId> voters;
        for (auto type : {consensus::VoteType::prevote, consensus::VoteType::precommit})
            for (const auto& [id, v] : val.engine->votes(t.height, t.round, type))
                if (id != val.id) voters.insert(id);
        if (voters.size() < consensus::max_faulty(validators_.size()) + 1) return;
        arm_timer(val, *val.deferred_propose);
        val.deferred_propose.reset();
    }

    void arm_timer(Validator& val, const consensus::TimerRequest& t) {
        local(val.node, queue_.now() + t.delay, msg::ConsensusTimer{t.timeout});
    }

    void maybe_propose(Validator& val) {
        if (!val.local.closed || !val.want_propose) return;
        auto& eng = *val.engine;
        if (*val.want_propose != std::pair{eng.height(), eng.round()} || !eng.is_proposer() ||
            eng.step() != consensus::Step::propose) {
            val.want_propose.reset();
            return;
        }
        val.want_propose.reset();
        auto out = eng.propose(BlockRef::make(build_block(val)));
        process_output(val, std::move(out));
    }

    Block build_block(Validator& val) {
        const auto& s = val.state;
        const auto round_id = val.local.round_id;
        Block b;
        b.proposer = val.id;
        auto tx = [&](TxPayload p) { b.txs.push_back(Transaction::make(val.node, val.nonce++, std::move(p))); };

        TrustVector trust = s.trust;
        std::vector<TrainerId> accepted;
        std::vector<std::shared_ptr<const GradientUpdate>> updates;
        std::vector<TrustAdjust> adjust;
        for (const auto& [trainer, per] : val.candidates) {
            // latest submission by step count
            const Candidate* best = nullptr;
            for (const auto& [d, c] : per)
                if (!c.ignored && (!best || c.steps > best->steps)) best = &c;
            if (!best) continue;
            bool ok = true;
            if (cfg_.scoring) {
                if (best->reports.empty()) continue;
                std::vector<ValidationReport> reps;
                for (const auto& [vid, r] : best->reports) reps.push_back(r);
                const auto merged = merge_reports(reps, cfg_.tolerance);
                ok = merged.accepted;
                adjust.push_back({trainer, updated_raw(s.trust, merged, cfg_.eta)});
            }
            if (ok && best->update) {
                accepted.push_back(trainer);
                updates.push_back(best->update);
            }
        }

        for (std::size_t i = 0; i < accepted.size(); ++i) tx(ShareGradient{round_id, *updates[i]});
        for (const auto& a : adjust) {
            tx(a);
            trust.set_raw(a.trainer, a.new_raw);
        }
        if (val.local.extension_granted)
            tx(RoundControl{round_id, RoundAction::extend, queue_.now(), *val.local.deadline - val.committed_deadline});
        if (!accepted.empty()) {
            const auto weights = cfg_.scoring ? weights_for_round(trust, accepted) : uniform_weights(accepted.size());
            AggregationInput in{s.current_model->params(), {}};
            ReleaseModel rm{ModelVersion(0, s.current_model->params()), {}};
            for (std::size_t i = 0; i < accepted.size(); ++i) {
                in.updates.push_back({*updates[i], weights[i], true});
                rm.applied_weights.emplace_back(accepted[i], weights[i]);
            }
            if (auto next = aggregate(in)) {
                rm.model = ModelVersion(s.current_model->version() + 1, std::move(*next));
                tx(std::move(rm));
            }
        }
        tx(RoundControl{round_id, RoundAction::close, queue_.now(), 0.0});
        const double span = cfg_.sync.scheme == SyncScheme::bap ? 0.0 : cfg_.sync.period;
        tx(RoundControl{round_id + 1, RoundAction::open, queue_.now(), span});
        return seal_block(s, std::move(b));
    }

    bool block_valid(Validator& val, std::uint64_t h, const BlockRef& b) {
        if (h != val.state.height) return false;
        try {
            (void)execute_block(val.state, *b.block);
            return true;
        } catch (const Error&) {
            ++stats_.invalid_proposals;
            return false;
        }
    }

    // Runs inside the engine's decide step; anything that could re-enter the
    // engine waits for after_event.
    void on_commit(Validator& val, std::uint64_t, const BlockRef& b) {
        val.state = execute_block(val.state, *b.block);
        val.chain.push_back(*b.block);
        enter_round(val);
        val.just_committed = true;
        if (&val == &validators_[reference_]) record_row(val);
    }

    void enter_round(Validator& val) {
        val.local = *val.state.round;
        val.committed_deadline = val.local.deadline.value_or(0.0);
        val.candidates.clear();
        val.deferred_propose.reset();
        val.want_propose.reset();
        if (val.local.deadline) local(val.node, *val.local.deadline, msg::RoundTimer{val.local.round_id});
    }

    void notify_release(Validator& val, std::optional<NodeId> only) {
        auto params = std::make_shared<const FlatParams>(val.state.current_model->params());
        msg::ReleaseNotice n{val.local.round_id, val.state.current_model->version(), params};
        if (only) {
            send(val.node, *only, n);
            return;
        }
        for (auto t : val.trainers) send(val.node, trainers_[t].node, n);
    }

    void after_event(Validator& val) {
        while (val.just_committed) {
            val.just_committed = false;
            notify_release(val, std::nullopt);
            auto pending = std::move(val.future);
            val.future.clear();
            for (auto& env : pending) on_validator_event(val, std::move(env));
            check_close(val);
            maybe_propose(val);
        }
    }

    void process_output(Validator& val, consensus::Output<BlockRef> out) {
        stats_.max_consensus_round = std::max(stats_.max_consensus_round, val.engine->round());
        for (const auto& t : out.timers) {
            // The first proposal window of a height opens when this
            // validator's round view closes.
            if (t.timeout.step == consensus::Step::propose && t.timeout.round == 0 && !val.local.closed)
                val.deferred_propose = t;
            else
                arm_timer(val, t);
        }
        if (out.proposal_needed) val.want_propose = out.proposal_needed;
        for (auto& m : out.messages) {
            if (m.to) {
                send(val.node, validators_[*m.to].node, msg::Consensus{std::move(m.msg)});
                continue;
            }
            for (const auto& other : validators_) {
                if (other.id == val.id) continue;
                auto body = m.msg;
                if (val.equivocator) equivocate(val, body);
                send(val.node, other.node, msg::Consensus{std::move(body)});
            }
        }
        if (!val.just_committed) maybe_propose(val);
    }

    // Half of an equivocator's votes go out with a different value.
    void equivocate(Validator& val, consensus::Message<BlockRef>& body) {
        auto* vote = std::get_if<consensus::Vote>(&body);
        if (!vote || !val.rng.bernoulli(0.5)) return;
        Hash256 fake;
        for (auto& byte : fake.bytes) byte = static_cast<std::uint8_t>(val.rng.next_u64());
        vote->value = vote->value ? std::nullopt : std::optional<Hash256>(fake);
    }

    // Metrics

    void record_row(const Validator& val) {
        MetricsRow row;
        row.round = val.state.round->round_id;
        row.virtual_time = queue_.now();
        row.version = val.state.current_model->version();
        row.accuracy = evaluate(val.state.current_model->params(), cfg_.learner.arch, data_.test);
        row.phi = val.state.trust.phi_vector();
        row.msgs_sent = messages_;
        log_.rows.push_back(std::move(row));
    }

    SimConfig cfg_;
    SimData data_;
    Rng net_rng_;
    EventQueue<Envelope> queue_;
    FlatParams initial_ = FlatParams::zeros(1);
    Block genesis_;
    std::vector<Validator> validators_;
    std::vector<Trainer> trainers_;
    std::size_t reference_ = 0;
    std::size_t progress_height_ = 0;
    VirtualTime progress_time_ = 0.0;
    MetricsLog log_;
    SimStats stats_;
    std::uint64_t messages_ = 0;
};

inline SimResult simulate(const SimConfig& cfg) { return Simulation(cfg).run(); }

inline MetricsLog run(const SimConfig& cfg) { return simulate(cfg).log; }

}  // namespace flobc
