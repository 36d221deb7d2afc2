#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enmc/gradnet.hpp"
#include "enmc/volgrid.hpp"
#include "enmc/winlab.hpp"

namespace enmc {

// Raw intensity range; the discriminator condition channel is x / kRawScale.
inline constexpr float kRawScale = 4095.0f;

// ---------------------------------------------------------------------------
// Segmentation learner: 3-level encoder-decoder (8/16/32 channels). Every
// block's output is compressed to 2 channels by a 1x1x1 conv and concatenated,
// suitably resampled, onto all deeper blocks' inputs. 5-channel softmax head.
// ---------------------------------------------------------------------------

template <class T>
gn::NetworkParams<T> build_seg_learner(std::uint64_t seed) {
    gn::NetworkParams<T> p;
    std::mt19937_64 rng(seed);
    auto conv = [&](const std::string& name, int co, int ci, int k) {
        auto w = p.add(name + ".w", {co, ci, k, k, k});
        gn::he_normal_fill(*w, static_cast<std::size_t>(ci) * k * k * k, rng);
        p.add(name + ".b", {co});
    };
    conv("e0.c1", 8, 1, 3);
    conv("e0.c2", 8, 8, 3);
    conv("e0.bias", 2, 8, 1);
    conv("e1.c1", 16, 10, 3);
    conv("e1.c2", 16, 16, 3);
    conv("e1.bias", 2, 16, 1);
    conv("e2.c1", 32, 20, 3);
    conv("e2.c2", 32, 32, 3);
    conv("e2.bias", 2, 32, 1);
    conv("u1.c1", 16, 38, 3);
    conv("u1.c2", 16, 16, 3);
    conv("u1.bias", 2, 16, 1);
    conv("u0.c1", 8, 24, 3);
    conv("u0.c2", 8, 8, 3);
    conv("head", 5, 8, 1);
    return p;
}

template <class T>
gn::TensorPtr<T> seg_forward(gn::Graph<T>* g, const gn::NetworkParams<T>& p,
                             const gn::TensorPtr<T>& x) {
    if (x->shape.size() != 4 || x->shape[0] != 1)
        throw ShapeError("seg_forward: input must be [1,D,H,W]");
    for (int a = 1; a < 4; ++a)
        if (x->shape[a] % 4 != 0)
            throw ShapeError("seg_forward: spatial extents must be divisible by 4");
    using gn::concat_channels;
    using gn::conv3d;
    using gn::maxpool3d;
    using gn::relu;
    using gn::trilinear_upsample;
    auto block = [&](const std::string& name, const gn::TensorPtr<T>& in) {
        auto h = relu(g, conv3d(g, in, p.at(name + ".c1.w"), p.at(name + ".c1.b"), 1, 1));
        return relu(g, conv3d(g, h, p.at(name + ".c2.w"), p.at(name + ".c2.b"), 1, 1));
    };
    auto compress = [&](const std::string& name, const gn::TensorPtr<T>& in) {
        return conv3d(g, in, p.at(name + ".bias.w"), p.at(name + ".bias.b"), 1, 0);
    };

    auto e0 = block("e0", x);                 // [8, full]
    auto b0 = compress("e0", e0);             // [2, full]
    auto b0_h = maxpool3d(g, b0);             // [2, /2]
    auto b0_q = maxpool3d(g, b0_h);           // [2, /4]

    auto e1 = block("e1", concat_channels(g, {maxpool3d(g, e0), b0_h})); // [16, /2]
    auto b1 = compress("e1", e1);             // [2, /2]
    auto b1_q = maxpool3d(g, b1);             // [2, /4]

    auto e2 = block("e2", concat_channels(g, {maxpool3d(g, e1), b0_q, b1_q})); // [32, /4]
    auto b2 = compress("e2", e2);             // [2, /4]
    auto b2_h = trilinear_upsample(g, b2);    // [2, /2]

    auto u1 = block("u1", concat_channels(g, {trilinear_upsample(g, e2), b0_h, b1, b2_h})); // [16, /2]
    auto b3 = compress("u1", u1);             // [2, /2]

    auto u0 = block("u0", concat_channels(g, {trilinear_upsample(g, u1), b0,
                                              trilinear_upsample(g, b1),
                                              trilinear_upsample(g, b2_h),
                                              trilinear_upsample(g, b3)})); // [8, full]
    auto logits = conv3d(g, u0, p.at("head.w"), p.at("head.b"), 1, 0); // [5, full]
    return gn::softmax_channel(g, logits);
}

// ---------------------------------------------------------------------------
// Discriminator: VGG-A style conv stack on [2,D,H,W] (image + one structure
// mask), 4 stages of conv3+relu+maxpool, global average pool, dense, sigmoid.
// ---------------------------------------------------------------------------

template <class T>
gn::NetworkParams<T> build_discriminator(std::uint64_t seed) {
    gn::NetworkParams<T> p;
    std::mt19937_64 rng(seed);
    auto conv = [&](const std::string& name, int co, int ci, int k) {
        auto w = p.add(name + ".w", {co, ci, k, k, k});
        gn::he_normal_fill(*w, static_cast<std::size_t>(ci) * k * k * k, rng);
        p.add(name + ".b", {co});
    };
    conv("s1", 8, 2, 3);
    conv("s2", 16, 8, 3);
    conv("s3", 32, 16, 3);
    conv("s4", 32, 32, 3);
    auto fw = p.add("fc.w", {1, 32});
    gn::he_normal_fill(*fw, 32, rng);
    p.add("fc.b", {1});
    return p;
}

template <class T>
gn::TensorPtr<T> disc_forward(gn::Graph<T>* g, const gn::NetworkParams<T>& p,
                              const gn::TensorPtr<T>& input2ch) {
    if (input2ch->shape.size() != 4 || input2ch->shape[0] != 2)
        throw ShapeError("disc_forward: input must be [2,D,H,W]");
    auto h = input2ch;
    for (const char* name : {"s1", "s2", "s3", "s4"}) {
        h = gn::relu(g, gn::conv3d(g, h, p.at(std::string(name) + ".w"),
                                   p.at(std::string(name) + ".b"), 1, 1));
        // pool while halving stays legal; small grad-check inputs bottom out early
        if (h->shape[1] >= 2 && h->shape[2] >= 2 && h->shape[3] >= 2)
            h = gn::maxpool3d(g, h);
    }
    auto pooled = gn::global_avg_pool(g, h);
    auto logit = gn::dense(g, pooled, p.at("fc.w"), p.at("fc.b"));
    return gn::sigmoid(g, logit);
}

// ---------------------------------------------------------------------------
// Discriminator and hybrid losses, and scoring
// ---------------------------------------------------------------------------

/// Stack the rescaled original image (channel 0) with a structure mask
/// (channel 1). Plain data path, no graph.
gn::TensorPtr<float> condition_input(const Volume& x, const Volume& mask);

/// Adversarial loss for one discriminator: bce(D(x,y_n),1) + bce(D(x,s_n),0).
/// s_n must be detached (no grad); backward populates only this D's params.
template <class T>
gn::TensorPtr<T> discriminator_loss(gn::Graph<T>* g, const gn::NetworkParams<T>& disc,
                                    const gn::TensorPtr<T>& x_cond,
                                    const gn::TensorPtr<T>& y_n,
                                    const gn::TensorPtr<T>& s_n_detached) {
    auto real = disc_forward(g, disc, gn::concat_channels(g, {x_cond, y_n}));
    auto fake = disc_forward(g, disc, gn::concat_channels(g, {x_cond, s_n_detached}));
    return gn::add(g, gn::bce_loss(g, real, 1.0), gn::bce_loss(g, fake, 0.0));
}

/// Hybrid loss: mce(seg, y) + lambda * sum_n bce(D_n(x, seg_n), 1).
/// Caller must freeze discriminator params so only the learner receives grads.
template <class T>
gn::TensorPtr<T> segmentation_loss(gn::Graph<T>* g, const gn::TensorPtr<T>& seg,
                                   const std::array<gn::NetworkParams<T>, 5>& discs,
                                   const gn::TensorPtr<T>& x_cond, const LabelVolume& labels,
                                   double lambda) {
    if (lambda < 0.0) throw ConfigError("segmentation_loss: lambda must be >= 0");
    auto loss = gn::mce_loss(g, seg, labels);
    if (lambda == 0.0) return loss;
    for (int n = 0; n < 5; ++n) {
        auto s_n = gn::select_channel(g, seg, n);
        auto pred = disc_forward(g, discs[n], gn::concat_channels(g, {x_cond, s_n}));
        loss = gn::add(g, loss, gn::scale(g, gn::bce_loss(g, pred, 1.0), lambda));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Ensemble training state
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-4;
    double lambda = 0.01;
    std::uint64_t seed = 0;
};

struct StepLog {
    std::int64_t iteration = 0;
    int learner_id = 0;
    double l_mce = 0.0;
    std::array<double, 5> l_adv{}; // adversarial loss value per discriminator
    double l_seg = 0.0;
};

/// N segmentation learners (one per window) sharing 5 class discriminators.
struct McGanEnsembleState {
    std::vector<WindowSpec> windows; // one per learner
    std::vector<gn::NetworkParams<float>> learners;
    std::vector<gn::AdamState<float>> learner_adam;
    std::array<gn::NetworkParams<float>, 5> discs;
    std::array<gn::AdamState<float>, 5> disc_adam;
    TrainConfig cfg;
    std::int64_t iteration = 0;

    static McGanEnsembleState create(const std::vector<WindowSpec>& windows,
                                     const TrainConfig& cfg);
    static McGanEnsembleState create(const WindowCommittee& committee, const TrainConfig& cfg);

    int num_learners() const { return static_cast<int>(learners.size()); }

    void save(const std::string& dir_prefix) const;
    void load(const std::string& dir_prefix);
};

/// One iteration: round-robin learner i, one Adam step per discriminator
/// (adversarial loss), then one Adam step for the learner (hybrid loss).
StepLog train_step(McGanEnsembleState& state, const Volume& x, const LabelVolume& labels);

void append_step_log_csv(const std::string& path, const StepLog& log, bool write_header);

/// Deterministic forward pass of one trained learner on its windowed input.
SoftSegmentation infer(const gn::NetworkParams<float>& learner, const Volume& x_i);

/// Discriminator quality score for one (image, structure mask) pair.
double score_structure(const gn::NetworkParams<float>& disc, const Volume& x, const Volume& mask);

} // namespace enmc
