#include <gtest/gtest.h>

#include <bit>
#include <sstream>

#include "flobc/consensus.hpp"
#include "flobc/consensus_sim.hpp"

using namespace flobc;
using namespace flobc::consensus;

namespace {

using Eng = Engine<TestValue>;
using Msg = Message<TestValue>;

const std::vector<ValidatorId> four{0, 1, 2, 3};
const TestValue D(0, 0, 1), D2(0, 0, 2);

Vote prevote(ValidatorId v, std::optional<Hash256> d, std::uint32_t round = 0, std::uint64_t h = 0) {
    return {VoteType::prevote, h, round, v, d};
}
Vote precommit(ValidatorId v, std::optional<Hash256> d, std::uint32_t round = 0, std::uint64_t h = 0) {
    return {VoteType::precommit, h, round, v, d};
}
Proposal<TestValue> proposal(const TestValue& v, ValidatorId from, std::uint32_t round = 0, std::int32_t vr = -1) {
    return {v.height, round, vr, from, v};
}

// The single broadcast vote of the given type in an output, if any.
std::optional<Vote> sent_vote(const Output<TestValue>& out, VoteType type) {
    for (const auto& m : out.messages)
        if (auto* v = std::get_if<Vote>(&m.msg); v && v->type == type) return *v;
    return std::nullopt;
}

template <typename T>
const T* sent(const Output<TestValue>& out) {
    for (const auto& m : out.messages)
        if (auto* p = std::get_if<T>(&m.msg)) return p;
    return nullptr;
}

// Engine 3 locked on D in round 0 after two peers prevoted D.
Eng locked_engine() {
    Eng e(3, four);
    e.start();
    e.handle(0, Msg(proposal(D, 0)));
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(1, Msg(prevote(1, D.id)));
    return e;
}

}  // namespace

TEST(Quorum, Examples) {
    EXPECT_EQ(quorum_size(3), 3u);
    EXPECT_EQ(quorum_size(4), 3u);
    EXPECT_EQ(quorum_size(10), 7u);
    EXPECT_EQ(quorum_size(1), 1u);
    EXPECT_THROW(quorum_size(0), Error);
}

TEST(Quorum, SmallestStrictlyAboveTwoThirds) {
    for (std::size_t n = 1; n <= 100; ++n) {
        const auto q = quorum_size(n);
        EXPECT_GT(3 * q, 2 * n);
        EXPECT_LE(3 * (q - 1), 2 * n);
    }
}

TEST(Quorum, AnyTwoQuorumsShareAnHonestValidator) {
    for (unsigned n = 1; n <= 10; ++n) {
        const auto q = quorum_size(n);
        const auto f = max_faulty(n);
        std::vector<unsigned> sets;
        for (unsigned m = 0; m < (1u << n); ++m)
            if (static_cast<std::size_t>(std::popcount(m)) == q) sets.push_back(m);
        std::size_t min_overlap = n;
        for (auto a : sets)
            for (auto b : sets) min_overlap = std::min<std::size_t>(min_overlap, std::popcount(a & b));
        EXPECT_GE(min_overlap, f + 1) << "n=" << n;
    }
}

TEST(Proposer, RoundRobin) {
    const std::vector<ValidatorId> abc{10, 11, 12};
    EXPECT_EQ(proposer_for(0, 0, abc), 10u);
    EXPECT_EQ(proposer_for(0, 1, abc), 11u);
    EXPECT_EQ(proposer_for(5, 0, abc), 12u);
    EXPECT_THROW(proposer_for(0, 0, std::vector<ValidatorId>{}), Error);
}

TEST(Engine, FourValidatorsHappyPath) {
    Eng e(1, four);
    auto out = e.start();
    EXPECT_FALSE(out.proposal_needed);
    ASSERT_EQ(out.timers.size(), 1u);
    EXPECT_EQ(out.timers[0].timeout.step, Step::propose);

    out = e.handle(0, Msg(proposal(D, 0)));
    auto pv = sent_vote(out, VoteType::prevote);
    ASSERT_TRUE(pv);
    EXPECT_EQ(pv->value, D.id);
    EXPECT_EQ(e.step(), Step::prevote);

    out = e.handle(0, Msg(prevote(0, D.id)));
    EXPECT_FALSE(sent_vote(out, VoteType::precommit));
    out = e.handle(2, Msg(prevote(2, D.id)));
    auto pc = sent_vote(out, VoteType::precommit);
    ASSERT_TRUE(pc);
    EXPECT_EQ(pc->value, D.id);
    EXPECT_EQ(e.locked_value(), D.id);
    EXPECT_EQ(e.locked_round(), 0);

    out = e.handle(0, Msg(precommit(0, D.id)));
    EXPECT_TRUE(out.commits.empty());
    out = e.handle(2, Msg(precommit(2, D.id)));
    ASSERT_EQ(out.commits.size(), 1u);
    EXPECT_EQ(out.commits[0].first, 0u);
    EXPECT_EQ(out.commits[0].second.digest(), D.id);
    EXPECT_EQ(e.height(), 1u);
    EXPECT_EQ(e.round(), 0u);
    EXPECT_EQ(e.decisions().at(0).precommits.size(), 3u);
    EXPECT_TRUE(e.evidence().empty());
}

TEST(Engine, SplitPrecommitsDoNotCommitAndTimeoutRotatesProposer) {
    auto e = locked_engine();
    EXPECT_EQ(e.locked_value(), D.id);
    std::vector<TimerRequest> timers;
    for (auto [from, d] : {std::pair{0u, D2.id}, {1u, D2.id}, {2u, D.id}}) {
        auto out = e.handle(from, Msg(precommit(from, d)));
        EXPECT_TRUE(out.commits.empty());
        timers.insert(timers.end(), out.timers.begin(), out.timers.end());
    }
    // armed once, as soon as any quorum of precommits exists
    ASSERT_EQ(timers.size(), 1u);
    EXPECT_EQ(timers[0].timeout.step, Step::precommit);
    EXPECT_EQ(e.height(), 0u);

    auto out = e.on_timeout(timers[0].timeout);
    EXPECT_EQ(e.round(), 1u);
    EXPECT_EQ(e.current_proposer(), 1u);
    EXPECT_TRUE(sent<Bundle<TestValue>>(out));  // relays what it knows on round change
    bool doubled = false;
    for (const auto& t : out.timers)
        if (t.timeout.step == Step::propose && t.timeout.round == 1) doubled = t.delay == 2.0;
    EXPECT_TRUE(doubled);

    // still locked on D: a fresh proposal for another value gets a nil prevote
    out = e.handle(1, Msg(proposal(D2, 1, 1)));
    auto pv = sent_vote(out, VoteType::prevote);
    ASSERT_TRUE(pv);
    EXPECT_FALSE(pv->value);
}

TEST(Engine, DuplicateVoteIsNotEvidence) {
    Eng e(1, four);
    e.start();
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(2, Msg(prevote(0, D.id)));  // relayed copy
    EXPECT_EQ(e.duplicates_ignored(), 2u);
    EXPECT_TRUE(e.evidence().empty());
}

TEST(Engine, ConflictingVoteIsEvidenceAndFirstStands) {
    Eng e(1, four);
    e.start();
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(0, Msg(prevote(0, D2.id)));
    e.handle(0, Msg(prevote(0, D2.id)));
    ASSERT_EQ(e.evidence().size(), 1u);
    EXPECT_EQ(e.evidence()[0].offender, 0u);
    EXPECT_EQ(e.evidence()[0].what, "prevote");
    EXPECT_EQ(e.evidence()[0].first, D.id);
    EXPECT_EQ(e.evidence()[0].second, D2.id);
    EXPECT_EQ(e.votes(0, 0, VoteType::prevote).at(0), D.id);
    EXPECT_EQ(e.duplicates_ignored(), 1u);
}

TEST(Engine, ConflictingProposalIsEvidence) {
    Eng e(2, four);
    e.start();
    e.handle(0, Msg(proposal(D, 0)));
    e.handle(0, Msg(proposal(D2, 0)));
    ASSERT_EQ(e.evidence().size(), 1u);
    EXPECT_EQ(e.evidence()[0].what, "proposal");
    // a proposal from someone who is not the proposer is ignored outright
    e.handle(3, Msg(proposal(TestValue(0, 3, 9), 3)));
    EXPECT_EQ(e.evidence().size(), 1u);
}

TEST(Engine, EquivocatorsSecondPrecommitStillCounts) {
    Eng e(3, four);
    e.start();
    e.handle(0, Msg(proposal(D, 0)));
    e.handle(1, Msg(precommit(1, D.id)));
    e.handle(2, Msg(precommit(2, D.id)));
    auto out = e.handle(0, Msg(precommit(0, D2.id)));
    EXPECT_TRUE(out.commits.empty());
    out = e.handle(0, Msg(precommit(0, D.id)));
    ASSERT_EQ(out.commits.size(), 1u);
    EXPECT_EQ(out.commits[0].second.digest(), D.id);
    EXPECT_EQ(e.evidence().size(), 1u);
}

TEST(Engine, InvalidProposalGetsNilPrevote) {
    Eng e(1, four, {}, [](std::uint64_t, const TestValue& v) { return v.salt != 1; });
    e.start();
    auto out = e.handle(0, Msg(proposal(D, 0)));
    auto pv = sent_vote(out, VoteType::prevote);
    ASSERT_TRUE(pv);
    EXPECT_FALSE(pv->value);
}

TEST(Engine, ProposerAsksForValue) {
    Eng e(0, four);
    auto out = e.start();
    ASSERT_TRUE(out.proposal_needed);
    EXPECT_EQ(*out.proposal_needed, (std::pair<std::uint64_t, std::uint32_t>{0, 0}));
    out = e.propose(D);
    ASSERT_TRUE(sent<Proposal<TestValue>>(out));
    EXPECT_TRUE(sent_vote(out, VoteType::prevote));
    EXPECT_TRUE(e.propose(D2).messages.empty());  // once per round
}

TEST(Engine, NonProposerDoesNotPropose) {
    Eng e(2, four);
    e.start();
    EXPECT_TRUE(e.propose(D).messages.empty());
    auto out = e.on_timeout({Step::propose, 0, 0});
    auto pv = sent_vote(out, VoteType::prevote);
    ASSERT_TRUE(pv);
    EXPECT_FALSE(pv->value);
}

TEST(Engine, RelayTimerRebroadcastsWhileStalled) {
    Eng e(1, four);
    e.start();
    auto out = e.handle(0, Msg(proposal(D, 0)));
    std::optional<Timeout> relay;
    for (const auto& t : out.timers)
        if (t.timeout.relay) relay = t.timeout;
    ASSERT_TRUE(relay);
    out = e.on_timeout(*relay);
    auto* b = sent<Bundle<TestValue>>(out);
    ASSERT_TRUE(b);
    EXPECT_FALSE(b->catch_up);
    EXPECT_EQ(b->proposals.size(), 1u);
    ASSERT_EQ(out.timers.size(), 1u);
    EXPECT_TRUE(out.timers[0].timeout.relay);

    // once the step moves on the old relay timer is inert
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(2, Msg(prevote(2, D.id)));
    EXPECT_TRUE(e.on_timeout(*relay).messages.empty());
}

TEST(Engine, RelayCanBeDisabled) {
    EngineConfig cfg;
    cfg.relay_when_stalled = false;
    Eng e(1, four, cfg);
    e.start();
    auto out = e.handle(0, Msg(proposal(D, 0)));
    for (const auto& t : out.timers) EXPECT_FALSE(t.timeout.relay);
}

TEST(Engine, LaggingPeerGetsCatchUpButCatchUpIsNeverAnswered) {
    Eng e(1, four);
    e.start();
    e.handle(0, Msg(proposal(D, 0)));
    e.handle(0, Msg(prevote(0, D.id)));
    e.handle(2, Msg(prevote(2, D.id)));
    e.handle(0, Msg(precommit(0, D.id)));
    e.handle(2, Msg(precommit(2, D.id)));
    ASSERT_EQ(e.height(), 1u);

    auto out = e.handle(3, Msg(prevote(3, std::nullopt, 2)));
    ASSERT_EQ(out.messages.size(), 1u);
    EXPECT_EQ(out.messages[0].to, std::optional<ValidatorId>(3));
    auto bundle = std::get<Bundle<TestValue>>(out.messages[0].msg);
    EXPECT_TRUE(bundle.catch_up);

    Bundle<TestValue> echo = bundle;
    EXPECT_TRUE(e.handle(3, Msg(echo)).messages.empty());

    // one reply per sender and height per handled message
    Bundle<TestValue> many;
    many.votes = {prevote(3, std::nullopt, 1), prevote(3, std::nullopt, 2), precommit(3, std::nullopt, 2)};
    EXPECT_EQ(e.handle(3, Msg(many)).messages.size(), 1u);

    Eng lagging(3, four);
    lagging.start();
    out = lagging.handle(1, Msg(bundle));
    ASSERT_EQ(out.commits.size(), 1u);
    EXPECT_EQ(out.commits[0].second.digest(), D.id);
}

TEST(Engine, SkipsToLaterRoundSeenFromFPlusOne) {
    Eng e(1, four);
    e.start();
    e.handle(2, Msg(prevote(2, std::nullopt, 3)));
    EXPECT_EQ(e.round(), 0u);
    e.handle(3, Msg(prevote(3, std::nullopt, 3)));
    EXPECT_EQ(e.round(), 3u);
}

TEST(Engine, StepMessageLeavesInputUntouched) {
    Eng e(1, four);
    e.start();
    auto [next, out] = step_message(e, 0, Msg(proposal(D, 0)));
    EXPECT_EQ(e.step(), Step::propose);
    EXPECT_EQ(next.step(), Step::prevote);
    EXPECT_FALSE(out.messages.empty());
}

TEST(ConsensusSim, NoForksUnderByzantineSchedules) {
    for (std::size_t n : {4u, 7u}) {
        for (std::uint64_t seed = 1; seed <= 40; ++seed) {
            ConsensusSimConfig cfg;
            cfg.validators = n;
            cfg.seed = seed;
            cfg.target_heights = 4;
            const auto f = max_faulty(n);
            for (std::size_t j = 0; j < f; ++j)
                cfg.byzantine[static_cast<ValidatorId>((seed + 2 * j) % n)] =
                    static_cast<ByzantineMode>((seed + j) % 3);
            auto res = run_consensus_sim(cfg);
            ASSERT_FALSE(res.fork) << "n=" << n << " seed=" << seed;
            ASSERT_GE(res.min_committed_heights, 4u) << "n=" << n << " seed=" << seed;
        }
    }
}

TEST(ConsensusSim, EquivocationLeavesEvidence) {
    ConsensusSimConfig cfg;
    cfg.byzantine[1] = ByzantineMode::equivocate;
    cfg.target_heights = 6;
    auto res = run_consensus_sim(cfg);
    EXPECT_FALSE(res.fork);
    EXPECT_GT(res.evidence, 0u);
}

TEST(ConsensusSim, CommitsThirtyHeightsAfterGst) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ConsensusSimConfig cfg;
        cfg.seed = seed;
        cfg.target_heights = 30;
        cfg.byzantine[2] = ByzantineMode::silent;
        auto res = run_consensus_sim(cfg);
        EXPECT_GE(res.min_committed_heights, 30u);
    }
}

TEST(ConsensusSim, ByzantineWithoutTimeoutsStillNoFork) {
    // all messages arrive; the question is only whether honest nodes agree
    ConsensusSimConfig cfg;
    cfg.validators = 4;
    cfg.latency = LatencyModel{0.01, 0.0, 0.0, std::nullopt, std::nullopt};
    cfg.byzantine[0] = ByzantineMode::conflicting;
    cfg.target_heights = 8;
    auto res = run_consensus_sim(cfg);
    EXPECT_FALSE(res.fork);
    EXPECT_GE(res.min_committed_heights, 8u);
}

TEST(ConsensusSim, TraceListsMessages) {
    std::ostringstream trace;
    ConsensusSimConfig cfg;
    cfg.target_heights = 1;
    cfg.trace = &trace;
    run_consensus_sim(cfg);
    const auto text = trace.str();
    EXPECT_NE(text.find("proposal h=0"), std::string::npos);
    EXPECT_NE(text.find("precommit h=0"), std::string::npos);
}

TEST(ConsensusSim, SameSeedSameRun) {
    ConsensusSimConfig cfg;
    cfg.validators = 7;
    cfg.byzantine = {{1, ByzantineMode::equivocate}, {4, ByzantineMode::conflicting}};
    cfg.seed = 9;
    auto a = run_consensus_sim(cfg);
    auto b = run_consensus_sim(cfg);
    EXPECT_EQ(a.commits, b.commits);
    EXPECT_EQ(a.messages, b.messages);
    EXPECT_EQ(a.end_time, b.end_time);
}
