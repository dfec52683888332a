#pragma once

// Reference implementations used to check the library from the outside.
// Nothing here calls the code under test except to obtain the value being
// checked.

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "flobc/aggregation.hpp"
#include "flobc/learner.hpp"

namespace oracle {

inline std::vector<std::uint8_t> sodium_sha256(const std::vector<std::uint8_t>& bytes) {
    static const bool ready = sodium_init() >= 0;
    (void)ready;
    std::vector<std::uint8_t> out(crypto_hash_sha256_BYTES);
    crypto_hash_sha256(out.data(), bytes.data(), bytes.size());
    return out;
}

// dim as u64 little-endian, then each double's bits little-endian
inline std::vector<std::uint8_t> params_bytes(const std::vector<double>& values) {
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put(values.size());
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put(bits);
    }
    return out;
}

// Mean cross-entropy of a softmax classifier, written out longhand.
// Layout: W[C][d] then b[C].
inline double softmax_loss(const std::vector<double>& p, const std::vector<std::vector<double>>& x,
                           const std::vector<std::uint32_t>& y, std::size_t d, std::size_t classes) {
    double total = 0.0;
    for (std::size_t s = 0; s < x.size(); ++s) {
        std::vector<double> z(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            z[c] = p[classes * d + c];
            for (std::size_t j = 0; j < d; ++j) z[c] += p[c * d + j] * x[s][j];
        }
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double lse = 0.0;
        for (double v : z) lse += std::exp(v - m);
        total += m + std::log(lse) - z[y[s]];
    }
    return total / static_cast<double>(x.size());
}

// Same for one tanh hidden layer: W1[h][d], b1[h], W2[C][h], b2[C].
inline double mlp_loss(const std::vector<double>& p, const std::vector<std::vector<double>>& x,
                       const std::vector<std::uint32_t>& y, std::size_t d, std::size_t classes, std::size_t h) {
    const std::size_t b1 = h * d, w2 = b1 + h, b2 = w2 + classes * h;
    double total = 0.0;
    for (std::size_t s = 0; s < x.size(); ++s) {
        std::vector<double> a(h);
        for (std::size_t k = 0; k < h; ++k) {
            double z = p[b1 + k];
            for (std::size_t j = 0; j < d; ++j) z += p[k * d + j] * x[s][j];
            a[k] = std::tanh(z);
        }
        std::vector<double> z(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            z[c] = p[b2 + c];
            for (std::size_t k = 0; k < h; ++k) z[c] += p[w2 + c * h + k] * a[k];
        }
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double lse = 0.0;
        for (double v : z) lse += std::exp(v - m);
        total += m + std::log(lse) - z[y[s]];
    }
    return total / static_cast<double>(x.size());
}

template <typename F>
std::vector<double> central_differences(F&& f, std::vector<double> p, double h = 1e-5) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = f(p);
        p[i] = keep - h;
        const double down = f(p);
        p[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// |a - b| / max(|a|, |b|) in the Euclidean norm
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
    return std::sqrt(diff) / denom;
}

struct GradientCase {
    flobc::Dataset ds;
    flobc::ModelArch arch;
    std::vector<double> params;
};

// Small random problem: 1-6 samples, 1-5 features, 2-4 classes, softmax or a
// 1-4 unit MLP.
inline GradientCase random_gradient_case(std::mt19937_64& gen) {
    std::uniform_int_distribution<std::size_t> n_dist(1, 6), d_dist(1, 5), c_dist(2, 4), h_dist(1, 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    GradientCase gc;
    gc.ds.n = n_dist(gen);
    gc.ds.d = d_dist(gen);
    gc.ds.num_classes = c_dist(gen);
    for (std::size_t i = 0; i < gc.ds.n * gc.ds.d; ++i) gc.ds.features.push_back(normal(gen));
    for (std::size_t i = 0; i < gc.ds.n; ++i)
        gc.ds.labels.push_back(static_cast<std::uint32_t>(gen() % gc.ds.num_classes));
    gc.arch = gen() % 2 ? flobc::ModelArch::softmax() : flobc::ModelArch::mlp(h_dist(gen));
    gc.params.resize(gc.arch.param_count(gc.ds.d, gc.ds.num_classes));
    for (auto& v : gc.params) v = 0.7 * normal(gen);
    return gc;
}

inline double oracle_loss(const GradientCase& gc, const std::vector<double>& p) {
    std::vector<std::vector<double>> x;
    for (std::size_t i = 0; i < gc.ds.n; ++i) x.emplace_back(gc.ds.row(i).begin(), gc.ds.row(i).end());
    if (gc.arch.kind == flobc::ModelArch::Kind::softmax) return softmax_loss(p, x, gc.ds.labels, gc.ds.d, gc.ds.num_classes);
    return mlp_loss(p, x, gc.ds.labels, gc.ds.d, gc.ds.num_classes, gc.arch.hidden);
}

// Relative error between the library's analytic full-batch gradient and
// central differences of the longhand loss.
inline double gradient_check(const GradientCase& gc, double h = 1e-5) {
    std::vector<std::size_t> rows(gc.ds.n);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    std::vector<double> analytic(gc.params.size());
    flobc::loss_and_gradient(gc.params, gc.arch, gc.ds, rows, 0.0, analytic);
    const auto numeric = central_differences([&](const std::vector<double>& p) { return oracle_loss(gc, p); },
                                             gc.params, h);
    return relative_error(analytic, numeric);
}

struct AggregationCheck {
    double mean_error = 0.0;   // uniform weights vs arithmetic mean
    double scale_error = 0.0;  // weights w vs c * w
};

// One random instance: base, k deltas, random positive weights.
inline AggregationCheck aggregation_check(std::mt19937_64& gen) {
    std::uniform_int_distribution<std::size_t> dim_dist(1, 40), k_dist(1, 8);
    std::uniform_real_distribution<double> val(-10.0, 10.0), w_dist(0.01, 1.0), scale_exp(-6.0, 6.0);
    const auto dim = dim_dist(gen);
    const auto k = k_dist(gen);
    std::vector<double> base(dim);
    for (auto& v : base) v = val(gen);
    std::vector<flobc::GradientUpdate> ups(k);
    for (std::size_t i = 0; i < k; ++i) {
        ups[i].trainer_id = static_cast<flobc::TrainerId>(i);
        ups[i].delta.resize(dim);
        for (auto& v : ups[i].delta) v = val(gen);
    }

    AggregationCheck out;
    const auto uw = flobc::uniform_weights(k);
    flobc::AggregationInput uniform{flobc::FlatParams(base), {}};
    for (std::size_t i = 0; i < k; ++i) uniform.updates.push_back({ups[i], uw[i], true});
    const auto got = *flobc::aggregate(uniform);
    for (std::size_t j = 0; j < dim; ++j) {
        double sum = 0.0;
        for (const auto& u : ups) sum += u.delta[j];
        out.mean_error = std::max(out.mean_error, std::abs(got[j] - (base[j] + sum / static_cast<double>(k))));
    }

    const double c = std::pow(10.0, scale_exp(gen));
    flobc::AggregationInput a{flobc::FlatParams(base), {}}, b{flobc::FlatParams(base), {}};
    for (std::size_t i = 0; i < k; ++i) {
        const double w = w_dist(gen);
        a.updates.push_back({ups[i], w, true});
        b.updates.push_back({ups[i], c * w, true});
    }
    const auto ra = *flobc::aggregate(a);
    const auto rb = *flobc::aggregate(b);
    for (std::size_t j = 0; j < dim; ++j) out.scale_error = std::max(out.scale_error, std::abs(ra[j] - rb[j]));
    return out;
}

}  // namespace oracle
