#pragma once

// Append-only chain of blocks and the materialized state every validator
// replica derives from it.
//
// Block encoding (all integers little-endian):
//   height u64 | prev_hash[32] | proposer u32 | state_hash[32] | tx_count u32 | txs...
// Transaction encoding:
//   author u32 | nonce u64 | payload (u64 length + bytes) | payload_digest[32]
// Payload encoding starts with a kind byte (see TxKind). The block hash is
// SHA-256 over the block encoding.
//
// Chain file: "FLBC" | format u32 | count u64 | count x (u64 length | block | block_hash[32])

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flobc/aggregation.hpp"
#include "flobc/codec.hpp"
#include "flobc/error.hpp"
#include "flobc/hash.hpp"
#include "flobc/params.hpp"
#include "flobc/reputation.hpp"
#include "flobc/sync.hpp"

namespace flobc {

enum class TxKind : std::uint8_t { share_gradient = 1, release_model = 2, trust_adjust = 3, round_control = 4 };

struct ShareGradient {
    std::uint64_t round = 0;
    GradientUpdate update;
};

struct ReleaseModel {
    ModelVersion model;
    std::vector<std::pair<TrainerId, double>> applied_weights;
};

struct TrustAdjust {
    TrainerId trainer = 0;
    double new_raw = 0.0;
};

enum class RoundAction : std::uint8_t { open = 0, extend = 1, close = 2 };

inline const char* to_string(RoundAction a) {
    switch (a) {
        case RoundAction::open: return "open";
        case RoundAction::extend: return "extend";
        case RoundAction::close: return "close";
    }
    return "?";
}

// open: at = opening time, span = period (0 = no deadline)
// extend: span = extension length; close: at = closing time
struct RoundControl {
    std::uint64_t round_id = 0;
    RoundAction action = RoundAction::open;
    double at = 0.0;
    double span = 0.0;
};

using TxPayload = std::variant<ShareGradient, ReleaseModel, TrustAdjust, RoundControl>;

inline Bytes encode_payload(const TxPayload& payload) {
    ByteWriter w;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ShareGradient>) {
                w.u8(static_cast<std::uint8_t>(TxKind::share_gradient));
                w.u64(p.round);
                encode_update(w, p.update);
            } else if constexpr (std::is_same_v<T, ReleaseModel>) {
                w.u8(static_cast<std::uint8_t>(TxKind::release_model));
                w.u64(p.model.version());
                encode_params(w, p.model.params());
                write_hash(w, p.model.digest());
                w.u32(static_cast<std::uint32_t>(p.applied_weights.size()));
                for (const auto& [id, weight] : p.applied_weights) {
                    w.u32(id);
                    w.f64(weight);
                }
            } else if constexpr (std::is_same_v<T, TrustAdjust>) {
                w.u8(static_cast<std::uint8_t>(TxKind::trust_adjust));
                w.u32(p.trainer);
                w.f64(p.new_raw);
            } else {
                w.u8(static_cast<std::uint8_t>(TxKind::round_control));
                w.u64(p.round_id);
                w.u8(static_cast<std::uint8_t>(p.action));
                w.f64(p.at);
                w.f64(p.span);
            }
        },
        payload);
    return std::move(w).bytes();
}

inline TxPayload decode_payload(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const auto kind = r.u8();
    TxPayload out;
    switch (static_cast<TxKind>(kind)) {
        case TxKind::share_gradient: {
            ShareGradient sg;
            sg.round = r.u64();
            sg.update = decode_update(r);
            out = std::move(sg);
            break;
        }
        case TxKind::release_model: {
            const auto version = r.u64();
            auto params = decode_params(r);
            const auto stored = read_hash(r);
            ModelVersion mv(version, std::move(params));
            if (mv.digest() != stored) throw Error(ErrorCode::decode, "release: model digest does not match params");
            ReleaseModel rm{std::move(mv), {}};
            const auto n = r.u32();
            for (std::uint32_t i = 0; i < n; ++i) {
                const auto id = r.u32();
                const auto weight = r.f64();
                if (!std::isfinite(weight) || weight < 0.0) throw Error(ErrorCode::decode, "release: bad weight");
                rm.applied_weights.emplace_back(id, weight);
            }
            out = std::move(rm);
            break;
        }
        case TxKind::trust_adjust: {
            TrustAdjust ta;
            ta.trainer = r.u32();
            ta.new_raw = r.f64();
            if (!std::isfinite(ta.new_raw) || ta.new_raw < 0.0) throw Error(ErrorCode::decode, "trust: bad raw score");
            out = ta;
            break;
        }
        case TxKind::round_control: {
            RoundControl rc;
            rc.round_id = r.u64();
            const auto action = r.u8();
            if (action > 2) throw Error(ErrorCode::decode, "round control: bad action");
            rc.action = static_cast<RoundAction>(action);
            rc.at = r.f64();
            rc.span = r.f64();
            if (!std::isfinite(rc.at) || !std::isfinite(rc.span)) throw Error(ErrorCode::decode, "round control: bad time");
            out = rc;
            break;
        }
        default:
            throw Error(ErrorCode::decode, "unknown transaction kind " + std::to_string(kind));
    }
    r.expect_done();
    return out;
}

struct Transaction {
    NodeId author = 0;
    std::uint64_t nonce = 0;
    TxPayload payload;
    Hash256 payload_digest;

    static Transaction make(NodeId author, std::uint64_t nonce, TxPayload payload) {
        Transaction tx{author, nonce, std::move(payload), {}};
        tx.payload_digest = sha256(encode_payload(tx.payload));
        return tx;
    }

    TxKind kind() const { return static_cast<TxKind>(payload.index() + 1); }
    bool digest_ok() const { return sha256(encode_payload(payload)) == payload_digest; }
};

inline const char* to_string(TxKind k) {
    switch (k) {
        case TxKind::share_gradient: return "ShareGradient";
        case TxKind::release_model: return "ReleaseModel";
        case TxKind::trust_adjust: return "TrustAdjust";
        case TxKind::round_control: return "RoundControl";
    }
    return "?";
}

struct Block {
    std::uint64_t height = 0;
    Hash256 prev_hash;
    std::vector<Transaction> txs;
    Hash256 state_hash;
    ValidatorId proposer = 0;

    Bytes encode() const {
        ByteWriter w;
        w.u64(height);
        write_hash(w, prev_hash);
        w.u32(proposer);
        write_hash(w, state_hash);
        w.u32(static_cast<std::uint32_t>(txs.size()));
        for (const auto& tx : txs) {
            w.u32(tx.author);
            w.u64(tx.nonce);
            w.blob(encode_payload(tx.payload));
            write_hash(w, tx.payload_digest);
        }
        return std::move(w).bytes();
    }

    static Block decode(std::span<const std::uint8_t> bytes) {
        ByteReader r(bytes);
        Block b;
        b.height = r.u64();
        b.prev_hash = read_hash(r);
        b.proposer = r.u32();
        b.state_hash = read_hash(r);
        const auto n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            Transaction tx;
            tx.author = r.u32();
            tx.nonce = r.u64();
            const auto payload = r.blob();
            tx.payload = decode_payload(payload);
            tx.payload_digest = read_hash(r);
            b.txs.push_back(std::move(tx));
        }
        r.expect_done();
        return b;
    }

    Hash256 hash() const { return sha256(encode()); }
    Hash256 digest() const { return hash(); }
};

struct StateStore {
    std::uint64_t height = 0;  // number of executed blocks
    Hash256 last_block_hash;
    std::optional<ModelVersion> current_model;
    TrustVector trust;
    std::map<std::pair<std::uint64_t, TrainerId>, GradientUpdate> pending_updates;
    std::optional<RoundState> round;

    // Covers model version and digest, raw trust scores, round state and
    // pending update digests, in that order.
    Hash256 state_hash() const {
        ByteWriter w;
        w.u64(height);
        w.u8(current_model ? 1 : 0);
        if (current_model) {
            w.u64(current_model->version());
            write_hash(w, current_model->digest());
        }
        w.u32(static_cast<std::uint32_t>(trust.size()));
        for (const auto& [id, raw] : trust.raw_scores()) {
            w.u32(id);
            w.f64(raw);
        }
        w.u8(round ? 1 : 0);
        if (round) {
            w.u64(round->round_id);
            w.f64(round->opened_at);
            w.f64(round->deadline.value_or(-1.0));
            w.u8(round->extension_granted);
            w.u8(round->closed);
            w.u32(static_cast<std::uint32_t>(round->submitted.size()));
            for (auto id : round->submitted) w.u32(id);
        }
        w.u32(static_cast<std::uint32_t>(pending_updates.size()));
        for (const auto& [key, u] : pending_updates) {
            w.u64(key.first);
            w.u32(key.second);
            write_hash(w, digest(u));
        }
        return sha256(w.bytes());
    }

    std::optional<Version> latest_version() const {
        if (!current_model) return std::nullopt;
        return current_model->version();
    }
};

namespace detail {

[[noreturn]] inline void ledger_fail(std::size_t tx_index, const std::string& why) {
    throw Error(ErrorCode::ledger, "tx " + std::to_string(tx_index) + ": " + why);
}

inline void apply_tx(StateStore& s, const Transaction& tx, std::size_t i, bool genesis) {
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ShareGradient>) {
                if (!s.current_model) ledger_fail(i, "gradient before any model");
                if (!s.round || s.round->closed || s.round->round_id != p.round)
                    ledger_fail(i, "gradient for round " + std::to_string(p.round) + " which is not open");
                if (p.update.base_version != s.current_model->version())
                    ledger_fail(i, "stale gradient: base version " + std::to_string(p.update.base_version));
                if (p.update.dim() != s.current_model->params().dim()) ledger_fail(i, "gradient dim mismatch");
                if (!s.trust.contains(p.update.trainer_id))
                    ledger_fail(i, "gradient from unknown trainer " + std::to_string(p.update.trainer_id));
                p.update.check();
                s.pending_updates[{p.round, p.update.trainer_id}] = p.update;
                s.round->submitted.insert(p.update.trainer_id);
            } else if constexpr (std::is_same_v<T, TrustAdjust>) {
                if (!genesis && !s.trust.contains(p.trainer))
                    ledger_fail(i, "trust adjust for unknown trainer " + std::to_string(p.trainer));
                s.trust.set_raw(p.trainer, p.new_raw);
                if (s.round) s.round->total_trainers = s.trust.size();
            } else if constexpr (std::is_same_v<T, ReleaseModel>) {
                if (!s.current_model) {
                    if (p.model.version() != 0 || !p.applied_weights.empty())
                        ledger_fail(i, "first release must be version 0 with no applied updates");
                    s.current_model = p.model;
                    return;
                }
                if (p.model.version() != s.current_model->version() + 1)
                    ledger_fail(i, "release version " + std::to_string(p.model.version()) + " does not follow " +
                                       std::to_string(s.current_model->version()));
                if (!s.round) ledger_fail(i, "release outside a round");
                AggregationInput in{s.current_model->params(), {}};
                for (const auto& [id, w] : p.applied_weights) {
                    auto it = s.pending_updates.find({s.round->round_id, id});
                    if (it == s.pending_updates.end())
                        ledger_fail(i, "release applies trainer " + std::to_string(id) + " with no shared gradient");
                    in.updates.push_back({it->second, w, true});
                }
                auto next = aggregate(in);
                if (!next) ledger_fail(i, "release has no positive applied weight");
                if (!(*next == p.model.params())) ledger_fail(i, "released params differ from re-aggregation");
                s.current_model = p.model;
            } else {
                switch (p.action) {
                    case RoundAction::open: {
                        const std::uint64_t expect = s.round ? s.round->round_id + 1 : 0;
                        if (s.round && !s.round->closed) ledger_fail(i, "open while round still open");
                        if (p.round_id != expect)
                            ledger_fail(i, "open round " + std::to_string(p.round_id) + ", expected " +
                                               std::to_string(expect));
                        RoundState rs;
                        rs.round_id = p.round_id;
                        rs.opened_at = p.at;
                        if (p.span > 0.0) rs.deadline = p.at + p.span;
                        rs.total_trainers = s.trust.size();
                        s.round = rs;
                        std::erase_if(s.pending_updates, [&](const auto& kv) { return kv.first.first < p.round_id; });
                        break;
                    }
                    case RoundAction::extend:
                        if (!s.round || s.round->closed || s.round->round_id != p.round_id)
                            ledger_fail(i, "extend for a round that is not open");
                        if (s.round->extension_granted) ledger_fail(i, "second extension in one round");
                        if (!s.round->deadline) ledger_fail(i, "extend on a round without deadline");
                        s.round->extension_granted = true;
                        *s.round->deadline += p.span;
                        break;
                    case RoundAction::close:
                        if (!s.round || s.round->closed || s.round->round_id != p.round_id)
                            ledger_fail(i, "close for a round that is not open");
                        s.round->closed = true;
                        break;
                }
            }
        },
        tx.payload);
}

}  // namespace detail

// Applies transactions and height bookkeeping without checking the block's
// recorded state hash. Proposers use it to compute that hash.
inline StateStore apply_block_body(StateStore state, const Block& block) {
    if (block.height != state.height)
        throw Error(ErrorCode::ledger, "block height " + std::to_string(block.height) + ", expected " +
                                           std::to_string(state.height));
    if (block.prev_hash != state.last_block_hash) throw Error(ErrorCode::ledger, "prev_hash does not link");
    const bool genesis = block.height == 0;
    for (std::size_t i = 0; i < block.txs.size(); ++i) {
        if (!block.txs[i].digest_ok()) detail::ledger_fail(i, "payload digest mismatch");
        detail::apply_tx(state, block.txs[i], i, genesis);
    }
    state.height += 1;
    state.last_block_hash = block.hash();
    return state;
}

inline StateStore execute_block(const StateStore& state, const Block& block) {
    auto next = apply_block_body(state, block);
    if (next.state_hash() != block.state_hash) throw Error(ErrorCode::ledger, "state hash mismatch");
    return next;
}

// Fills in state_hash for a block assembled on top of `state`.
inline Block seal_block(const StateStore& state, Block block) {
    block.height = state.height;
    block.prev_hash = state.last_block_hash;
    block.state_hash = apply_block_body(state, block).state_hash();
    return block;
}

inline Block make_genesis(const FlatParams& initial, std::span<const TrainerId> trainers, double round_span,
                          ValidatorId proposer = 0) {
    if (trainers.empty()) throw Error(ErrorCode::invalid_argument, "genesis needs at least one trainer");
    Block b;
    b.proposer = proposer;
    std::uint64_t nonce = 0;
    b.txs.push_back(Transaction::make(proposer, nonce++, ReleaseModel{ModelVersion(0, initial), {}}));
    for (auto id : trainers) b.txs.push_back(Transaction::make(proposer, nonce++, TrustAdjust{id, 1.0}));
    b.txs.push_back(Transaction::make(proposer, nonce++, RoundControl{0, RoundAction::open, 0.0, round_span}));
    return seal_block(StateStore{}, std::move(b));
}

enum class QueryKey { latest_version, trust, round };

using QueryResult = std::variant<std::optional<Version>, TrustVector, std::optional<RoundState>>;

inline QueryResult query(const StateStore& state, QueryKey key) {
    switch (key) {
        case QueryKey::latest_version: return state.latest_version();
        case QueryKey::trust: return state.trust;
        case QueryKey::round: return state.round;
    }
    return state.latest_version();
}

struct VerifyResult {
    bool ok = true;
    std::optional<std::uint64_t> failed_height;
    std::string reason;
    StateStore state;
};

inline VerifyResult verify_chain(std::span<const Block> blocks) {
    VerifyResult res;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        try {
            res.state = execute_block(res.state, blocks[i]);
        } catch (const Error& e) {
            res.ok = false;
            res.failed_height = i;
            res.reason = e.what();
            return res;
        }
    }
    return res;
}

// Chain files

inline constexpr std::uint32_t chain_format_version = 1;

inline Bytes encode_chain(std::span<const Block> blocks) {
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("FLBC"), 4));
    w.u32(chain_format_version);
    w.u64(blocks.size());
    for (const auto& b : blocks) {
        const auto bytes = b.encode();
        w.blob(bytes);
        write_hash(w, sha256(bytes));
    }
    return std::move(w).bytes();
}

inline void write_chain(const std::filesystem::path& path, std::span<const Block> blocks) {
    const auto bytes = encode_chain(blocks);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct LoadedChain {
    std::vector<Block> blocks;
    // set when a record could not be decoded; blocks holds the ones before it
    std::optional<std::uint64_t> failed_index;
    std::string error;
};

inline LoadedChain decode_chain(std::span<const std::uint8_t> bytes) {
    LoadedChain out;
    ByteReader r(bytes);
    std::uint64_t count = 0;
    try {
        auto magic = r.raw(4);
        if (std::string(magic.begin(), magic.end()) != "FLBC") throw Error(ErrorCode::decode, "not a chain file");
        if (r.u32() != chain_format_version) throw Error(ErrorCode::decode, "unsupported chain format");
        count = r.u64();
    } catch (const Error& e) {
        out.failed_index = 0;
        out.error = e.what();
        return out;
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        try {
            const auto body = r.blob();
            const auto stored = read_hash(r);
            if (sha256(body) != stored) throw Error(ErrorCode::decode, "block hash does not match its bytes");
            out.blocks.push_back(Block::decode(body));
        } catch (const Error& e) {
            out.failed_index = i;
            out.error = e.what();
            return out;
        }
    }
    if (!r.done()) {
        out.failed_index = count;
        out.error = "trailing bytes after last block";
    }
    return out;
}

inline LoadedChain read_chain(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    const Bytes bytes((std::istreambuf_iterator<char>(in)), {});
    return decode_chain(bytes);
}

// Decodes and re-executes a chain file; decoding failures count as failures
// at the height of the unreadable record.
inline VerifyResult verify_chain_bytes(std::span<const std::uint8_t> bytes) {
    auto loaded = decode_chain(bytes);
    auto res = verify_chain(loaded.blocks);
    if (res.ok && loaded.failed_index) {
        res.ok = false;
        res.failed_height = loaded.failed_index;
        res.reason = loaded.error;
    }
    return res;
}

}  // namespace flobc
