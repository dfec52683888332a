#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "flobc/ledger.hpp"

using namespace flobc;

namespace {

const std::vector<TrainerId> kTrainers{0, 1, 2};

GradientUpdate upd(TrainerId id, Version base, std::vector<double> delta) {
    GradientUpdate u;
    u.trainer_id = id;
    u.base_version = base;
    u.delta = std::move(delta);
    u.steps = 3;
    return u;
}

// Builds a chain of `rounds` rounds on top of a 4-dim genesis model. Each
// round shares one gradient per trainer in one block and releases in the next.
class ChainBuilder {
public:
    explicit ChainBuilder(std::uint64_t seed = 1) : gen_(seed) {
        blocks_.push_back(make_genesis(FlatParams({0.5, -0.5, 1.0, 0.0}), kTrainers, 0.0));
        state_ = execute_block(StateStore{}, blocks_.back());
    }

    void add(std::vector<Transaction> txs, ValidatorId proposer = 0) {
        Block b;
        b.proposer = proposer;
        b.txs = std::move(txs);
        blocks_.push_back(seal_block(state_, std::move(b)));
        state_ = execute_block(state_, blocks_.back());
    }

    Transaction tx(TxPayload p) { return Transaction::make(9, nonce_++, std::move(p)); }

    void round() {
        std::uniform_real_distribution<double> val(-0.1, 0.1);
        const auto round_id = state_.round->round_id;
        const auto version = *state_.latest_version();
        std::vector<Transaction> shares;
        AggregationInput in{state_.current_model->params(), {}};
        ReleaseModel rm{ModelVersion(0, state_.current_model->params()), {}};
        for (auto id : kTrainers) {
            auto u = upd(id, version, {val(gen_), val(gen_), val(gen_), val(gen_)});
            shares.push_back(tx(ShareGradient{round_id, u}));
            const double w = 0.2 + 0.1 * id;
            in.updates.push_back({u, w, true});
            rm.applied_weights.emplace_back(id, w);
        }
        add(std::move(shares));
        rm.model = ModelVersion(version + 1, *aggregate(in));
        add({tx(RoundControl{round_id, RoundAction::close, 1.0, 0.0}), tx(rm),
             tx(RoundControl{round_id + 1, RoundAction::open, 1.0, 0.0})});
    }

    std::vector<Block>& blocks() { return blocks_; }
    const StateStore& state() const { return state_; }

private:
    std::mt19937_64 gen_;
    std::vector<Block> blocks_;
    StateStore state_;
    std::uint64_t nonce_ = 0;
};

// Offsets of each block record (length prefix included) in a chain file.
std::vector<std::pair<std::size_t, std::size_t>> record_spans(const Bytes& file) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t pos = 16;
    while (pos < file.size()) {
        std::uint64_t len = 0;
        for (int i = 0; i < 8; ++i) len |= std::uint64_t{file[pos + i]} << (8 * i);
        const std::size_t end = pos + 8 + len + 32;
        spans.emplace_back(pos, end);
        pos = end;
    }
    return spans;
}

}  // namespace

TEST(Ledger, GenesisState) {
    ChainBuilder cb;
    EXPECT_EQ(std::get<std::optional<Version>>(query(cb.state(), QueryKey::latest_version)), Version{0});
    auto trust = std::get<TrustVector>(query(cb.state(), QueryKey::trust));
    for (auto id : kTrainers) EXPECT_DOUBLE_EQ(trust.phi(id), 1.0 / 3.0);
    auto round = std::get<std::optional<RoundState>>(query(cb.state(), QueryKey::round));
    ASSERT_TRUE(round);
    EXPECT_EQ(round->round_id, 0u);
    EXPECT_FALSE(round->closed);
    EXPECT_TRUE(cb.blocks()[0].prev_hash.is_zero());
}

TEST(Ledger, EmptyBlockOnlyMovesHeight) {
    ChainBuilder cb;
    const auto before = cb.state();
    cb.add({});
    const auto& after = cb.state();
    EXPECT_EQ(after.height, before.height + 1);
    EXPECT_EQ(after.latest_version(), before.latest_version());
    EXPECT_EQ(after.trust, before.trust);
    EXPECT_EQ(after.round, before.round);
    EXPECT_EQ(after.pending_updates, before.pending_updates);
}

TEST(Ledger, SingleUpdateReleaseEqualsBasePlusDelta) {
    ChainBuilder cb;
    const std::vector<double> base{0.5, -0.5, 1.0, 0.0};
    const std::vector<double> d{0.25, 0.125, -1.0, 3.0};
    cb.add({cb.tx(ShareGradient{0, upd(1, 0, d)})});
    std::vector<double> expect(4);
    for (int i = 0; i < 4; ++i) expect[i] = base[i] + d[i];
    cb.add({cb.tx(RoundControl{0, RoundAction::close, 5.0, 0.0}),
            cb.tx(ReleaseModel{ModelVersion(1, FlatParams(expect)), {{1, 0.4}}}),
            cb.tx(RoundControl{1, RoundAction::open, 5.0, 0.0})});
    EXPECT_EQ(cb.state().latest_version(), Version{1});
    EXPECT_EQ(cb.state().current_model->params(), FlatParams(expect));
    EXPECT_TRUE(cb.state().pending_updates.empty());
}

TEST(Ledger, VersionGrowsByOnePerRelease) {
    ChainBuilder cb;
    for (int r = 0; r < 5; ++r) {
        cb.round();
        EXPECT_EQ(cb.state().latest_version(), Version(r + 1));
    }
    StateStore s;
    Version last = 0;
    for (const auto& b : cb.blocks()) {
        s = execute_block(s, b);
        int releases = 0;
        for (const auto& t : b.txs) releases += t.kind() == TxKind::release_model;
        if (b.height > 0) {
            EXPECT_EQ(*s.latest_version(), last + releases);
        }
        last = *s.latest_version();
    }
}

TEST(Ledger, ReplicasAgreeOnEveryStateHash) {
    ChainBuilder cb;
    for (int r = 0; r < 4; ++r) cb.round();
    StateStore a, b;
    for (const auto& blk : cb.blocks()) {
        a = execute_block(a, blk);
        b = execute_block(b, Block::decode(blk.encode()));
        ASSERT_EQ(a.state_hash(), b.state_hash());
        ASSERT_EQ(a.state_hash(), blk.state_hash);
    }
}

TEST(Ledger, PhantomAndMisnumberedReleasesRejected) {
    ChainBuilder cb;
    const auto& s = cb.state();
    auto params = s.current_model->params();

    Block phantom;
    phantom.txs.push_back(cb.tx(ReleaseModel{ModelVersion(1, params), {{2, 1.0}}}));
    EXPECT_THROW(seal_block(s, phantom), Error);

    Block skip;
    skip.txs.push_back(cb.tx(ShareGradient{0, upd(0, 0, {1, 1, 1, 1})}));
    skip.txs.push_back(cb.tx(ReleaseModel{ModelVersion(2, apply_delta(params, std::vector<double>{1, 1, 1, 1})), {{0, 1.0}}}));
    EXPECT_THROW(seal_block(s, skip), Error);

    Block wrong;
    wrong.txs.push_back(cb.tx(ShareGradient{0, upd(0, 0, {1, 1, 1, 1})}));
    wrong.txs.push_back(cb.tx(ReleaseModel{ModelVersion(1, apply_delta(params, std::vector<double>{1, 1, 1, 2})), {{0, 1.0}}}));
    EXPECT_THROW(seal_block(s, wrong), Error);

    Block stale;
    stale.txs.push_back(cb.tx(ShareGradient{0, upd(0, 7, {1, 1, 1, 1})}));
    EXPECT_THROW(seal_block(s, stale), Error);

    Block wrong_round;
    wrong_round.txs.push_back(cb.tx(ShareGradient{3, upd(0, 0, {1, 1, 1, 1})}));
    EXPECT_THROW(seal_block(s, wrong_round), Error);

    Block stranger;
    stranger.txs.push_back(cb.tx(ShareGradient{0, upd(8, 0, {1, 1, 1, 1})}));
    EXPECT_THROW(seal_block(s, stranger), Error);
}

TEST(Ledger, RoundControlRules) {
    ChainBuilder cb;
    const auto& s = cb.state();
    Block open_twice;
    open_twice.txs.push_back(cb.tx(RoundControl{1, RoundAction::open, 0, 0}));
    EXPECT_THROW(seal_block(s, open_twice), Error);

    Block extend_bap;  // genesis round has no deadline
    extend_bap.txs.push_back(cb.tx(RoundControl{0, RoundAction::extend, 0, 5}));
    EXPECT_THROW(seal_block(s, extend_bap), Error);

    Block skip_round;
    skip_round.txs.push_back(cb.tx(RoundControl{0, RoundAction::close, 0, 0}));
    skip_round.txs.push_back(cb.tx(RoundControl{2, RoundAction::open, 0, 0}));
    EXPECT_THROW(seal_block(s, skip_round), Error);
}

TEST(Ledger, StateHashMismatchRejected) {
    ChainBuilder cb;
    cb.round();
    auto b = cb.blocks()[1];
    b.state_hash.bytes[0] ^= 1;
    StateStore s = execute_block(StateStore{}, cb.blocks()[0]);
    EXPECT_THROW(execute_block(s, b), Error);
}

TEST(VerifyChain, HonestChainsPass) {
    ChainBuilder cb;
    EXPECT_TRUE(verify_chain(std::span<const Block>(cb.blocks().data(), 1)).ok);
    EXPECT_TRUE(verify_chain(std::span<const Block>{}).ok);
    for (int r = 0; r < 5; ++r) cb.round();
    ASSERT_EQ(cb.blocks().size(), 11u);
    auto res = verify_chain(cb.blocks());
    EXPECT_TRUE(res.ok) << res.reason;
    EXPECT_EQ(res.state.state_hash(), cb.state().state_hash());
}

TEST(VerifyChain, TamperedDeltaFailsAtItsHeight) {
    for (int target = 1; target <= 9; target += 2) {
        ChainBuilder cb;
        for (int r = 0; r < 5; ++r) cb.round();
        auto blocks = cb.blocks();
        auto& tx = blocks[target].txs[0];
        std::get<ShareGradient>(tx.payload).update.delta[2] += 1e-9;
        auto res = verify_chain(blocks);
        EXPECT_FALSE(res.ok);
        EXPECT_EQ(res.failed_height, std::uint64_t(target));

        // re-signing the payload moves the failure to the state hash
        tx.payload_digest = Transaction::make(tx.author, tx.nonce, tx.payload).payload_digest;
        res = verify_chain(blocks);
        EXPECT_FALSE(res.ok);
        EXPECT_EQ(res.failed_height, std::uint64_t(target));
        EXPECT_NE(res.reason.find("state hash"), std::string::npos) << res.reason;
    }
}

TEST(VerifyChain, ResealedTamperBreaksTheNextLink) {
    ChainBuilder cb;
    for (int r = 0; r < 3; ++r) cb.round();
    auto blocks = cb.blocks();
    StateStore s;
    for (int h = 0; h < 3; ++h) s = execute_block(s, blocks[h]);
    std::get<ShareGradient>(blocks[3].txs[1].payload).update.delta[0] += 0.5;
    blocks[3].txs[1] = Transaction::make(blocks[3].txs[1].author, blocks[3].txs[1].nonce, blocks[3].txs[1].payload);
    blocks[3] = seal_block(s, blocks[3]);
    auto res = verify_chain(blocks);
    EXPECT_FALSE(res.ok);
    EXPECT_EQ(res.failed_height, std::uint64_t(4));
}

TEST(ChainFile, RoundTripAndByteFlips) {
    ChainBuilder cb(3);
    for (int r = 0; r < 4; ++r) cb.round();
    const auto file = encode_chain(cb.blocks());
    auto loaded = decode_chain(file);
    ASSERT_FALSE(loaded.failed_index);
    ASSERT_EQ(loaded.blocks.size(), cb.blocks().size());
    for (std::size_t i = 0; i < loaded.blocks.size(); ++i) EXPECT_EQ(loaded.blocks[i].hash(), cb.blocks()[i].hash());
    EXPECT_TRUE(verify_chain_bytes(file).ok);

    const auto spans = record_spans(file);
    ASSERT_EQ(spans.size(), cb.blocks().size());
    std::mt19937_64 gen(1);
    for (std::size_t h = 0; h < spans.size(); ++h) {
        for (int k = 0; k < 40; ++k) {
            auto bad = file;
            const auto pos = spans[h].first + gen() % (spans[h].second - spans[h].first);
            bad[pos] ^= static_cast<std::uint8_t>(1u << (gen() % 8));
            auto res = verify_chain_bytes(bad);
            ASSERT_FALSE(res.ok) << "byte " << pos;
            ASSERT_EQ(res.failed_height, h) << "byte " << pos << ": " << res.reason;
        }
    }
}

TEST(ChainFile, HeaderAndTrailingDamage) {
    ChainBuilder cb;
    cb.round();
    auto file = encode_chain(cb.blocks());
    auto bad_magic = file;
    bad_magic[0] = 'X';
    EXPECT_FALSE(verify_chain_bytes(bad_magic).ok);
    auto trailing = file;
    trailing.push_back(0);
    auto res = verify_chain_bytes(trailing);
    EXPECT_FALSE(res.ok);
    EXPECT_EQ(res.failed_height, std::uint64_t(cb.blocks().size()));
    auto truncated = file;
    truncated.resize(file.size() - 5);
    EXPECT_FALSE(verify_chain_bytes(truncated).ok);
}

TEST(ChainFile, WriteAndRead) {
    ChainBuilder cb;
    cb.round();
    const auto path = std::filesystem::temp_directory_path() / "flobc_chainfile_test.flbc";
    write_chain(path, cb.blocks());
    auto loaded = read_chain(path);
    std::filesystem::remove(path);
    ASSERT_EQ(loaded.blocks.size(), 3u);
    EXPECT_EQ(loaded.blocks.back().hash(), cb.blocks().back().hash());
    EXPECT_THROW(read_chain(path), Error);
}

TEST(Transaction, PayloadRoundTrip) {
    std::vector<TxPayload> payloads{ShareGradient{4, upd(2, 3, {1.5, -2})}, TrustAdjust{5, 0.25},
                                    RoundControl{7, RoundAction::extend, 1.5, 2.5},
                                    ReleaseModel{ModelVersion(3, FlatParams({1, 2})), {{0, 0.5}, {4, 0.5}}}};
    for (const auto& p : payloads) {
        const auto bytes = encode_payload(p);
        EXPECT_EQ(encode_payload(decode_payload(bytes)), bytes);
        auto tx = Transaction::make(1, 2, p);
        EXPECT_TRUE(tx.digest_ok());
    }
    Bytes junk{0x42};
    EXPECT_THROW(decode_payload(junk), Error);
}
