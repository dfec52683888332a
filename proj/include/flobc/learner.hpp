#pragma once

// Built-in learners: softmax regression and a one-hidden-layer tanh MLP,
// trained by minibatch SGD on mean cross-entropy.
//
// Parameter layout (row-major, concatenated in this order):
//   softmax: W[C][d], b[C]
//   mlp:     W1[h][d], b1[h], W2[C][h], b2[C]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flobc/error.hpp"
#include "flobc/params.hpp"
#include "flobc/rng.hpp"

namespace flobc {

struct Dataset {
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;  // n x d, row-major
    std::vector<std::uint32_t> labels;

    std::span<const double> row(std::size_t i) const { return {features.data() + i * d, d}; }

    void check() const {
        if (n == 0) throw Error(ErrorCode::empty_dataset, "dataset is empty");
        if (d == 0) throw Error(ErrorCode::invalid_argument, "dataset has zero features");
        if (features.size() != n * d || labels.size() != n)
            throw Error(ErrorCode::invalid_argument, "dataset storage does not match n x d");
        for (auto l : labels)
            if (l >= num_classes) throw Error(ErrorCode::invalid_argument, "label out of range");
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.n = indices.size();
    out.d = ds.d;
    out.num_classes = ds.num_classes;
    out.features.reserve(out.n * out.d);
    out.labels.reserve(out.n);
    for (auto i : indices) {
        auto r = ds.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

struct SyntheticOptions {
    double center_scale = 1.0;  // std-dev of class-center coordinates
    double cluster_std = 1.0;   // std-dev of samples around their center
    // Feature j is multiplied by exp(scale_spread * (2j/(d-1) - 1)). Zero keeps
    // the clusters isotropic; larger values make gradient descent slower to
    // converge without changing which classifier is optimal.
    double scale_spread = 0.0;
};

// C Gaussian clusters. Labels are i mod C before a seeded shuffle, so every
// class count is within one of n / C.
inline Dataset generate_synthetic(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t classes,
                                  SyntheticOptions opts = {}) {
    if (classes < 2 || n < classes || d < 1)
        throw Error(ErrorCode::invalid_argument, "generate_synthetic: need n >= C >= 2 and d >= 1");
    Rng center_rng(derive_seed(seed, 0xC3u));
    std::vector<double> centers(classes * d);
    for (auto& c : centers) c = center_rng.normal(0.0, opts.center_scale);

    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % classes);
    Rng rng(derive_seed(seed, 0x5Au));
    rng.shuffle(labels);

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.num_classes = classes;
    ds.labels = std::move(labels);
    ds.features.resize(n * d);
    std::vector<double> scale(d, 1.0);
    if (d > 1 && opts.scale_spread != 0.0)
        for (std::size_t j = 0; j < d; ++j)
            scale[j] = std::exp(opts.scale_spread * (2.0 * static_cast<double>(j) / static_cast<double>(d - 1) - 1.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            ds.features[i * d + j] = scale[j] * (centers[ds.labels[i] * d + j] + rng.normal(0.0, opts.cluster_std));
    return ds;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t idx_image_magic = 0x00000803;
inline constexpr std::uint32_t idx_label_magic = 0x00000801;

// MNIST IDX pair. Pixels are scaled by 1/255; num_classes is max label + 1.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    if (img.size() < 16) throw Error(ErrorCode::idx_truncated, "image file shorter than its header");
    if (lab.size() < 8) throw Error(ErrorCode::idx_truncated, "label file shorter than its header");
    if (detail::be32(img, 0) != idx_image_magic) throw Error(ErrorCode::idx_bad_magic, "bad image magic");
    if (detail::be32(lab, 0) != idx_label_magic) throw Error(ErrorCode::idx_bad_magic, "bad label magic");
    const std::size_t n = detail::be32(img, 4);
    const std::size_t rows = detail::be32(img, 8);
    const std::size_t cols = detail::be32(img, 12);
    const std::size_t n_labels = detail::be32(lab, 4);
    if (n != n_labels)
        throw Error(ErrorCode::idx_count_mismatch,
                    "image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
    const std::size_t d = rows * cols;
    if (img.size() < 16 + n * d) throw Error(ErrorCode::idx_truncated, "image file truncated");
    if (lab.size() < 8 + n) throw Error(ErrorCode::idx_truncated, "label file truncated");
    if (n == 0 || d == 0) throw Error(ErrorCode::empty_dataset, "IDX files hold no samples");

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.features.resize(n * d);
    for (std::size_t i = 0; i < n * d; ++i) ds.features[i] = img[16 + i] / 255.0;
    ds.labels.resize(n);
    std::uint32_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max<std::size_t>(max_label + 1, 2);
    return ds;
}

// Sample of floor(fraction * n) rows without replacement.
inline Dataset shard(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::invalid_argument, "shard: fraction must be in (0, 1]");
    const auto size = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ds.n)));
    if (size == 0) throw Error(ErrorCode::empty_dataset, "shard: empty result");
    std::vector<std::size_t> idx(ds.n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(size);
    return subset(ds, idx);
}

struct ModelArch {
    enum class Kind { softmax, mlp } kind = Kind::softmax;
    std::size_t hidden = 0;

    static ModelArch softmax() { return {}; }
    static ModelArch mlp(std::size_t hidden) { return {Kind::mlp, hidden}; }

    std::size_t param_count(std::size_t d, std::size_t classes) const {
        if (kind == Kind::softmax) return classes * d + classes;
        return hidden * d + hidden + classes * hidden + classes;
    }

    std::vector<std::size_t> layer_sizes(std::size_t d, std::size_t classes) const {
        if (kind == Kind::softmax) return {classes * d, classes};
        return {hidden * d, hidden, classes * hidden, classes};
    }

    friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

struct LearnerConfig {
    ModelArch arch;
    double learning_rate = 0.1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double l2 = 0.0;

    void check() const {
        if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning_rate must be positive");
        if (batch_size == 0) throw Error(ErrorCode::invalid_argument, "batch_size must be positive");
        if (arch.kind == ModelArch::Kind::mlp && arch.hidden == 0)
            throw Error(ErrorCode::invalid_argument, "mlp needs a positive hidden size");
    }
};

// Softmax weights start at zero; MLP weights use a seeded uniform
// +-1/sqrt(fan_in) init with zero biases.
inline FlatParams init_params(const ModelArch& arch, std::size_t d, std::size_t classes, std::uint64_t seed) {
    std::vector<double> p(arch.param_count(d, classes), 0.0);
    if (arch.kind == ModelArch::Kind::mlp) {
        Rng rng(derive_seed(seed, 0x1417u));
        const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
        const std::size_t w1 = arch.hidden * d;
        const std::size_t w2_off = w1 + arch.hidden;
        for (std::size_t i = 0; i < w1; ++i) p[i] = rng.uniform(-s1, s1);
        for (std::size_t i = 0; i < classes * arch.hidden; ++i) p[w2_off + i] = rng.uniform(-s2, s2);
    }
    return FlatParams(std::move(p));
}

namespace detail {

inline void check_dims(std::size_t dim, const ModelArch& arch, const Dataset& ds) {
    const auto want = arch.param_count(ds.d, ds.num_classes);
    if (dim != want)
        throw Error(ErrorCode::dimension_mismatch, "params have dim " + std::to_string(dim) + " but model for d=" +
                                                       std::to_string(ds.d) + ", C=" +
                                                       std::to_string(ds.num_classes) + " needs " +
                                                       std::to_string(want));
}

inline void softmax_inplace(std::span<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (auto& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : z) v /= s;
}

// Forward pass for one sample; fills logits (size C) and, for the MLP, the
// hidden activations (size h).
inline void forward(std::span<const double> p, const ModelArch& arch, std::size_t d, std::size_t classes,
                    std::span<const double> x, std::span<double> hidden, std::span<double> logits) {
    if (arch.kind == ModelArch::Kind::softmax) {
        const double* b = p.data() + classes * d;
        for (std::size_t c = 0; c < classes; ++c) {
            const double* w = p.data() + c * d;
            double z = b[c];
            for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
            logits[c] = z;
        }
        return;
    }
    const std::size_t h = arch.hidden;
    const double* w1 = p.data();
    const double* b1 = w1 + h * d;
    const double* w2 = b1 + h;
    const double* b2 = w2 + classes * h;
    for (std::size_t k = 0; k < h; ++k) {
        double z = b1[k];
        for (std::size_t j = 0; j < d; ++j) z += w1[k * d + j] * x[j];
        hidden[k] = std::tanh(z);
    }
    for (std::size_t c = 0; c < classes; ++c) {
        double z = b2[c];
        for (std::size_t k = 0; k < h; ++k) z += w2[c * h + k] * hidden[k];
        logits[c] = z;
    }
}

}  // namespace detail

// Mean cross-entropy over the given rows, plus 0.5 * l2 * |p|^2. When grad is
// non-empty it receives the gradient of that objective.
inline double loss_and_gradient(std::span<const double> p, const ModelArch& arch, const Dataset& ds,
                                std::span<const std::size_t> rows, double l2, std::span<double> grad) {
    const std::size_t d = ds.d;
    const std::size_t classes = ds.num_classes;
    const std::size_t h = arch.hidden;
    std::vector<double> hidden(h), probs(classes), dhidden(h);
    const bool want_grad = !grad.empty();
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;

    for (auto i : rows) {
        auto x = ds.row(i);
        const auto y = ds.labels[i];
        detail::forward(p, arch, d, classes, x, hidden, probs);
        detail::softmax_inplace(probs);
        loss -= std::log(std::max(probs[y], 1e-300));
        if (!want_grad) continue;
        probs[y] -= 1.0;  // dL/dlogits
        if (arch.kind == ModelArch::Kind::softmax) {
            double* gw = grad.data();
            double* gb = gw + classes * d;
            for (std::size_t c = 0; c < classes; ++c) {
                const double g = probs[c] * inv_n;
                for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += g * x[j];
                gb[c] += g;
            }
        } else {
            const double* w2 = p.data() + h * d + h;
            double* gw1 = grad.data();
            double* gb1 = gw1 + h * d;
            double* gw2 = gb1 + h;
            double* gb2 = gw2 + classes * h;
            std::fill(dhidden.begin(), dhidden.end(), 0.0);
            for (std::size_t c = 0; c < classes; ++c) {
                const double g = probs[c] * inv_n;
                for (std::size_t k = 0; k < h; ++k) {
                    gw2[c * h + k] += g * hidden[k];
                    dhidden[k] += g * w2[c * h + k];
                }
                gb2[c] += g;
            }
            for (std::size_t k = 0; k < h; ++k) {
                const double dz = dhidden[k] * (1.0 - hidden[k] * hidden[k]);
                for (std::size_t j = 0; j < d; ++j) gw1[k * d + j] += dz * x[j];
                gb1[k] += dz;
            }
        }
    }
    loss *= inv_n;
    if (l2 > 0.0) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            loss += 0.5 * l2 * p[i] * p[i];
            if (want_grad) grad[i] += l2 * p[i];
        }
    }
    return loss;
}

inline double loss(const FlatParams& params, const ModelArch& arch, const Dataset& ds, double l2 = 0.0) {
    ds.check();
    detail::check_dims(params.dim(), arch, ds);
    std::vector<std::size_t> rows(ds.n);
    std::iota(rows.begin(), rows.end(), 0);
    return loss_and_gradient(params.values(), arch, ds, rows, l2, {});
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
    return std::max<std::size_t>(1, n / std::min(batch, n));
}

// Minibatch SGD that can be resumed: advance(a) then advance(b) ends where a
// single advance(a + b) would. The batch order is a shuffle-once-per-epoch
// permutation from a generator seeded by (config.seed, round). Batches larger
// than the dataset are clamped to n.
class SgdRun {
public:
    SgdRun(const FlatParams& params, const Dataset& ds, const LearnerConfig& cfg, std::uint64_t round = 0)
        : ds_(&ds), cfg_(cfg), base_(params.values().begin(), params.values().end()), w_(base_),
          grad_(w_.size()), order_(ds.n), rng_(derive_seed(cfg.seed, round)), cursor_(ds.n) {
        cfg.check();
        ds.check();
        detail::check_dims(params.dim(), cfg.arch, ds);
        batch_ = std::min(cfg.batch_size, ds.n);
        std::iota(order_.begin(), order_.end(), 0);
    }

    void advance(std::uint64_t k) {
        for (std::uint64_t s = 0; s < k; ++s) {
            if (cursor_ + batch_ > ds_->n) {
                rng_.shuffle(order_);
                cursor_ = 0;
            }
            std::span<const std::size_t> rows(order_.data() + cursor_, batch_);
            cursor_ += batch_;
            loss_and_gradient(w_, cfg_.arch, *ds_, rows, cfg_.l2, grad_);
            for (std::size_t i = 0; i < w_.size(); ++i) w_[i] -= cfg_.learning_rate * grad_[i];
        }
        steps_ += k;
    }

    std::uint64_t steps() const { return steps_; }

    // Cumulative delta from the starting parameters.
    GradientUpdate update() const {
        GradientUpdate u;
        u.steps = steps_;
        u.delta.resize(w_.size());
        for (std::size_t i = 0; i < w_.size(); ++i) u.delta[i] = w_[i] - base_[i];
        detail::require_finite(u.delta, "compute_gradient_steps");
        return u;
    }

private:
    const Dataset* ds_;
    LearnerConfig cfg_;
    std::vector<double> base_;
    std::vector<double> w_;
    std::vector<double> grad_;
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t cursor_;  // == n forces a shuffle on the first step
    std::size_t batch_ = 1;
    std::uint64_t steps_ = 0;
};

// k SGD steps from `params` on `ds`.
inline GradientUpdate compute_gradient_steps(const FlatParams& params, const Dataset& ds, const LearnerConfig& cfg,
                                             std::uint64_t k, std::uint64_t round = 0) {
    SgdRun run(params, ds, cfg, round);
    run.advance(k);
    return run.update();
}

// Predicted class per row; ties go to the lowest class index.
inline std::uint32_t predict(std::span<const double> p, const ModelArch& arch, const Dataset& ds, std::size_t i,
                             std::span<double> hidden, std::span<double> logits) {
    detail::forward(p, arch, ds.d, ds.num_classes, ds.row(i), hidden, logits);
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < ds.num_classes; ++c)
        if (logits[c] > logits[best]) best = c;
    return best;
}

inline double evaluate(const FlatParams& params, const ModelArch& arch, const Dataset& ds) {
    ds.check();
    detail::check_dims(params.dim(), arch, ds);
    std::vector<double> hidden(arch.hidden), logits(ds.num_classes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.n; ++i)
        if (predict(params.values(), arch, ds, i, hidden, logits) == ds.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(ds.n);
}

}  // namespace flobc
