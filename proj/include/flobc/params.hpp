#pragma once

// Flat-vector models and gradient deltas.
//
// Canonical encoding of FlatParams (used for digests and ledger storage):
//   dim   : u64 little-endian
//   values: dim x IEEE-754 binary64, raw bits, little-endian
// The digest is SHA-256 over exactly those bytes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flobc/codec.hpp"
#include "flobc/error.hpp"
#include "flobc/hash.hpp"

namespace flobc {

using NodeId = std::uint32_t;
using TrainerId = std::uint32_t;
using ValidatorId = std::uint32_t;
using Version = std::uint64_t;

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i]))
            throw Error(ErrorCode::non_finite,
                        std::string(what) + ": non-finite entry at index " + std::to_string(i));
}

}  // namespace detail

class FlatParams {
public:
    explicit FlatParams(std::vector<double> values) : values_(std::move(values)) {
        if (values_.empty()) throw Error(ErrorCode::invalid_argument, "FlatParams: dim must be positive");
        detail::require_finite(values_, "FlatParams");
    }

    static FlatParams zeros(std::size_t dim) { return FlatParams(std::vector<double>(dim, 0.0)); }

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    friend bool operator==(const FlatParams& a, const FlatParams& b) {
        if (a.dim() != b.dim()) return false;
        // bitwise: distinguishes -0.0 from 0.0, matching the digest
        for (std::size_t i = 0; i < a.dim(); ++i)
            if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i]))
                return false;
        return true;
    }

private:
    std::vector<double> values_;
};

struct GradientUpdate {
    TrainerId trainer_id = 0;
    Version base_version = 0;
    std::vector<double> delta;
    std::uint64_t steps = 1;

    std::size_t dim() const noexcept { return delta.size(); }

    void check() const {
        if (delta.empty()) throw Error(ErrorCode::invalid_argument, "GradientUpdate: dim must be positive");
        if (steps == 0) throw Error(ErrorCode::invalid_argument, "GradientUpdate: steps must be positive");
        detail::require_finite(delta, "GradientUpdate");
    }

    friend bool operator==(const GradientUpdate&, const GradientUpdate&) = default;
};

inline void encode_params(ByteWriter& w, const FlatParams& p) {
    w.u64(p.dim());
    for (double v : p.values()) w.f64(v);
}

inline Bytes encode_params(const FlatParams& p) {
    ByteWriter w;
    encode_params(w, p);
    return std::move(w).bytes();
}

inline FlatParams decode_params(ByteReader& r) {
    const auto dim = r.u64();
    if (dim == 0 || dim > r.remaining() / 8) throw Error(ErrorCode::decode, "FlatParams: bad dim " + std::to_string(dim));
    std::vector<double> values(dim);
    for (auto& v : values) v = r.f64();
    try {
        return FlatParams(std::move(values));
    } catch (const Error& e) {
        throw Error(ErrorCode::decode, e.what());
    }
}

inline Hash256 digest(const FlatParams& p) { return sha256(encode_params(p)); }

class ModelVersion {
public:
    ModelVersion(Version version, FlatParams params)
        : version_(version), params_(std::move(params)), digest_(flobc::digest(params_)) {}

    Version version() const noexcept { return version_; }
    const FlatParams& params() const noexcept { return params_; }
    const Hash256& digest() const noexcept { return digest_; }

private:
    Version version_;
    FlatParams params_;
    Hash256 digest_;
};

inline void encode_update(ByteWriter& w, const GradientUpdate& u) {
    w.u32(u.trainer_id);
    w.u64(u.base_version);
    w.u64(u.steps);
    w.u64(u.delta.size());
    for (double v : u.delta) w.f64(v);
}

inline GradientUpdate decode_update(ByteReader& r) {
    GradientUpdate u;
    u.trainer_id = r.u32();
    u.base_version = r.u64();
    u.steps = r.u64();
    const auto dim = r.u64();
    if (dim > r.remaining() / 8) throw Error(ErrorCode::decode, "GradientUpdate: bad dim");
    u.delta.resize(dim);
    for (auto& v : u.delta) v = r.f64();
    try {
        u.check();
    } catch (const Error& e) {
        throw Error(ErrorCode::decode, e.what());
    }
    return u;
}

inline Hash256 digest(const GradientUpdate& u) {
    ByteWriter w;
    encode_update(w, u);
    return sha256(w.bytes());
}

// Layers are concatenated in the order given (index 0 first).
inline FlatParams flatten(const std::vector<std::vector<double>>& layers) {
    std::vector<double> values;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (double v : layers[l]) {
            if (!std::isfinite(v))
                throw Error(ErrorCode::non_finite, "flatten: non-finite entry in layer " + std::to_string(l));
            values.push_back(v);
        }
    }
    return FlatParams(std::move(values));
}

inline std::vector<std::vector<double>> rebuild(const FlatParams& flat, std::span<const std::size_t> shape) {
    std::size_t total = 0;
    for (auto s : shape) total += s;
    if (total != flat.dim())
        throw Error(ErrorCode::shape_mismatch, "rebuild: shape expects dim " + std::to_string(total) +
                                                   " but params have dim " + std::to_string(flat.dim()));
    std::vector<std::vector<double>> layers;
    layers.reserve(shape.size());
    auto it = flat.values().begin();
    for (auto s : shape) {
        layers.emplace_back(it, it + static_cast<std::ptrdiff_t>(s));
        it += static_cast<std::ptrdiff_t>(s);
    }
    return layers;
}

inline std::vector<std::size_t> shapes(const std::vector<std::vector<double>>& layers) {
    std::vector<std::size_t> out;
    for (const auto& l : layers) out.push_back(l.size());
    return out;
}

// base + delta, rejecting dimension mismatch
inline FlatParams apply_delta(const FlatParams& base, std::span<const double> delta) {
    if (delta.size() != base.dim())
        throw Error(ErrorCode::dimension_mismatch, "apply_delta: dim " + std::to_string(delta.size()) +
                                                       " vs " + std::to_string(base.dim()));
    std::vector<double> out(base.values().begin(), base.values().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
    return FlatParams(std::move(out));
}

}  // namespace flobc
