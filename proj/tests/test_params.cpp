#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "flobc/params.hpp"
#include "oracles.hpp"

using namespace flobc;

namespace {

std::vector<double> vals(const FlatParams& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace

TEST(Params, FlattenConcatenatesLayersInOrder) {
    auto p = flatten({{1, 2}, {3}});
    EXPECT_EQ(p.dim(), 3u);
    EXPECT_EQ(vals(p), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(vals(flatten({{0.5}, {-0.5}, {0}})), (std::vector<double>{0.5, -0.5, 0}));
}

TEST(Params, FlattenRejectsEmptyModel) {
    try {
        flatten({{}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    }
}

TEST(Params, FlattenNamesTheLayerWithNonFiniteEntry) {
    try {
        flatten({{1.0}, {2.0, std::numeric_limits<double>::quiet_NaN()}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::non_finite);
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
    EXPECT_THROW(flatten({{std::numeric_limits<double>::infinity()}}), Error);
    EXPECT_THROW(FlatParams({1.0, -std::numeric_limits<double>::infinity()}), Error);
}

TEST(Params, RebuildSplitsBySpec) {
    const FlatParams p({1, 2, 3});
    const std::vector<std::size_t> spec{2, 1};
    auto layers = rebuild(p, spec);
    ASSERT_EQ(layers.size(), 2u);
    EXPECT_EQ(layers[0], (std::vector<double>{1, 2}));
    EXPECT_EQ(layers[1], (std::vector<double>{3}));
}

TEST(Params, RebuildShapeMismatchNamesBothDims) {
    const std::vector<std::size_t> spec{4};
    try {
        rebuild(FlatParams({1, 2, 3}), spec);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
        const std::string what = e.what();
        EXPECT_NE(what.find('4'), std::string::npos);
        EXPECT_NE(what.find('3'), std::string::npos);
    }
}

TEST(Params, RoundTripIsBitIdentical) {
    std::mt19937_64 gen(11);
    std::uniform_int_distribution<int> layers_dist(1, 6), size_dist(0, 9);
    std::uniform_int_distribution<std::uint64_t> bits;
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<std::vector<double>> m(layers_dist(gen));
        std::size_t total = 0;
        for (auto& l : m) {
            l.resize(size_dist(gen));
            for (auto& v : l) {
                // arbitrary finite bit patterns, including subnormals and -0
                do {
                    const auto b = bits(gen);
                    std::memcpy(&v, &b, 8);
                } while (!std::isfinite(v));
            }
            total += l.size();
        }
        if (total == 0) m.back().push_back(-0.0);
        const auto back = rebuild(flatten(m), shapes(m));
        ASSERT_EQ(back.size(), m.size());
        for (std::size_t l = 0; l < m.size(); ++l) {
            ASSERT_EQ(back[l].size(), m[l].size());
            for (std::size_t i = 0; i < m[l].size(); ++i)
                ASSERT_EQ(std::bit_cast<std::uint64_t>(back[l][i]), std::bit_cast<std::uint64_t>(m[l][i]));
        }
    }
}

TEST(Params, DigestMatchesIndependentHashOfEncoding) {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> normal(0.0, 100.0);
    for (int iter = 0; iter < 50; ++iter) {
        std::vector<double> v(1 + gen() % 64);
        for (auto& x : v) x = normal(gen);
        const FlatParams p(v);
        EXPECT_EQ(encode_params(p), oracle::params_bytes(v));
        const auto expect = oracle::sodium_sha256(oracle::params_bytes(v));
        const auto got = digest(p);
        ASSERT_TRUE(std::equal(expect.begin(), expect.end(), got.bytes.begin()));
    }
}

TEST(Params, DigestIsDeterministic) {
    const FlatParams a({0.1, 0.2, 0.3});
    const FlatParams b({0.1, 0.2, 0.3});
    EXPECT_EQ(digest(a), digest(b));
    EXPECT_EQ(digest(a), digest(a));
}

TEST(Params, OneUlpChangesDigest) {
    std::vector<double> v{1.0, -2.5, 3.75};
    auto w = v;
    w[1] = std::nextafter(w[1], 0.0);
    const auto dv = oracle::sodium_sha256(oracle::params_bytes(v));
    const auto dw = oracle::sodium_sha256(oracle::params_bytes(w));
    EXPECT_NE(dv, dw);
    EXPECT_NE(digest(FlatParams(v)), digest(FlatParams(w)));
    EXPECT_TRUE(std::equal(dw.begin(), dw.end(), digest(FlatParams(w)).bytes.begin()));
}

TEST(Params, PermutingEntriesChangesDigest) {
    std::mt19937_64 gen(17);
    std::normal_distribution<double> normal;
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<double> v(2 + gen() % 30);
        for (auto& x : v) x = normal(gen);
        auto perm = v;
        std::shuffle(perm.begin(), perm.end(), gen);
        if (perm == v) continue;
        EXPECT_NE(digest(FlatParams(v)), digest(FlatParams(perm)));
    }
}

TEST(Params, ZeroSignIsPartOfTheEncoding) {
    EXPECT_NE(digest(FlatParams({0.0})), digest(FlatParams({-0.0})));
    EXPECT_FALSE(FlatParams({0.0}) == FlatParams({-0.0}));
}

TEST(Params, EncodeDecodeRoundTrip) {
    const FlatParams p({1.5, -2.0, 1e-300, 7.0});
    const auto bytes = encode_params(p);
    ByteReader r(bytes);
    EXPECT_EQ(decode_params(r), p);
    EXPECT_TRUE(r.done());

    GradientUpdate u{3, 9, {0.25, -0.5}, 12};
    ByteWriter w;
    encode_update(w, u);
    ByteReader ur(w.bytes());
    EXPECT_EQ(decode_update(ur), u);
}

TEST(Params, DecodeRejectsNonFiniteAndBadDims) {
    auto bytes = oracle::params_bytes({1.0, std::numeric_limits<double>::quiet_NaN()});
    ByteReader r(bytes);
    EXPECT_THROW(decode_params(r), Error);

    auto zero = oracle::params_bytes({});
    ByteReader rz(zero);
    EXPECT_THROW(decode_params(rz), Error);

    auto truncated = oracle::params_bytes({1.0, 2.0});
    truncated.pop_back();
    ByteReader rt(truncated);
    EXPECT_THROW(decode_params(rt), Error);
}

TEST(Params, ModelVersionDigestRecomputes) {
    const ModelVersion mv(4, FlatParams({1, 2}));
    EXPECT_EQ(mv.digest(), digest(FlatParams({1, 2})));
    EXPECT_EQ(mv.version(), 4u);
}

TEST(Params, ApplyDeltaChecksDimension) {
    const FlatParams base({1, 1});
    EXPECT_EQ(vals(apply_delta(base, std::vector<double>{2, -1})), (std::vector<double>{3, 0}));
    EXPECT_THROW(apply_delta(base, std::vector<double>{1}), Error);
    EXPECT_THROW(apply_delta(FlatParams({1e308}), std::vector<double>{1e308}), Error);
}

TEST(Params, GradientUpdateCheck) {
    GradientUpdate u;
    EXPECT_THROW(u.check(), Error);
    u.delta = {1.0};
    u.steps = 0;
    EXPECT_THROW(u.check(), Error);
    u.steps = 1;
    EXPECT_NO_THROW(u.check());
    u.delta = {std::numeric_limits<double>::infinity()};
    EXPECT_THROW(u.check(), Error);
}
