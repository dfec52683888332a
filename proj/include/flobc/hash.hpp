#pragma once

// SHA-256 (via OpenSSL) is the single hash used for parameter digests,
// transaction payload digests, block hashes and state hashes.

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include <openssl/evp.h>

#include "flobc/codec.hpp"
#include "flobc/error.hpp"

namespace flobc {

struct Hash256 {
    std::array<std::uint8_t, 32> bytes{};

    static Hash256 zero() { return {}; }

    bool is_zero() const noexcept {
        for (auto b : bytes)
            if (b != 0) return false;
        return true;
    }

    friend auto operator<=>(const Hash256&, const Hash256&) = default;

    std::string hex() const {
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (auto b : bytes) {
            out.push_back(digits[b >> 4]);
            out.push_back(digits[b & 0xF]);
        }
        return out;
    }

    std::string short_hex() const { return hex().substr(0, 12); }
};

inline Hash256 sha256(std::span<const std::uint8_t> data) {
    Hash256 h;
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), h.bytes.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
        throw Error(ErrorCode::invalid_argument, "sha256 digest failed");
    return h;
}

inline void write_hash(ByteWriter& w, const Hash256& h) { w.raw(h.bytes); }

inline Hash256 read_hash(ByteReader& r) {
    Hash256 h;
    auto s = r.raw(32);
    std::copy(s.begin(), s.end(), h.bytes.begin());
    return h;
}

}  // namespace flobc
