#include "enmc/mcgan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace enmc {

gn::TensorPtr<float> condition_input(const Volume& x, const Volume& mask) {
    if (!(x.dims == mask.dims))
        throw ShapeError("condition_input: image/mask dims mismatch");
    auto t = gn::make_tensor<float>({2, x.dims.nz, x.dims.ny, x.dims.nx});
    const std::size_t plane = x.dims.voxels();
    for (std::size_t i = 0; i < plane; ++i) t->data[i] = x.data[i] / kRawScale;
    for (std::size_t i = 0; i < plane; ++i) t->data[plane + i] = mask.data[i];
    return t;
}

McGanEnsembleState McGanEnsembleState::create(const std::vector<WindowSpec>& windows,
                                              const TrainConfig& cfg) {
    if (windows.empty()) throw ConfigError("ensemble needs at least one window");
    if (cfg.lambda < 0.0) throw ConfigError("lambda must be >= 0");
    McGanEnsembleState s;
    s.windows = windows;
    s.cfg = cfg;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        s.learners.push_back(build_seg_learner<float>(cfg.seed * 1000003ull + i));
        gn::AdamState<float> a;
        a.lr = cfg.lr;
        a.init(s.learners.back());
        s.learner_adam.push_back(std::move(a));
    }
    for (int n = 0; n < 5; ++n) {
        s.discs[n] = build_discriminator<float>(cfg.seed * 1000033ull + 77 + n);
        s.disc_adam[n].lr = cfg.lr;
        s.disc_adam[n].init(s.discs[n]);
    }
    return s;
}

McGanEnsembleState McGanEnsembleState::create(const WindowCommittee& committee,
                                              const TrainConfig& cfg) {
    std::vector<WindowSpec> windows;
    for (int i = 0; i < WindowCommittee::kSize; ++i) windows.push_back(committee.spec(i));
    return create(windows, cfg);
}

void McGanEnsembleState::save(const std::string& dir_prefix) const {
    for (std::size_t i = 0; i < learners.size(); ++i)
        gn::save_checkpoint(dir_prefix + "learner_" + std::to_string(i) + ".enmw", learners[i],
                            &learner_adam[i]);
    for (int n = 0; n < 5; ++n)
        gn::save_checkpoint(dir_prefix + "disc_" + std::to_string(n) + ".enmw", discs[n],
                            &disc_adam[n]);
}

void McGanEnsembleState::load(const std::string& dir_prefix) {
    for (std::size_t i = 0; i < learners.size(); ++i)
        gn::load_checkpoint(dir_prefix + "learner_" + std::to_string(i) + ".enmw", learners[i],
                            &learner_adam[i]);
    for (int n = 0; n < 5; ++n)
        gn::load_checkpoint(dir_prefix + "disc_" + std::to_string(n) + ".enmw", discs[n],
                            &disc_adam[n]);
}

namespace {

void check_loss_finite(double v, const char* term) {
    if (!std::isfinite(v))
        throw TrainingError(std::string("non-finite loss term: ") + term);
}

} // namespace

StepLog train_step(McGanEnsembleState& state, const Volume& x, const LabelVolume& labels) {
    if (!(x.dims == labels.dims))
        throw ShapeError("train_step: image/label dims mismatch");
    StepLog log;
    log.iteration = state.iteration;
    const int i = static_cast<int>(state.iteration % state.num_learners());
    log.learner_id = i;

    Volume x_i = apply_window(x, state.windows[i]);
    auto x_i_t = gn::tensor_from_volume<float>(x_i);
    Volume xr = x;
    for (auto& v : xr.data) v /= kRawScale;
    auto x_cond = gn::tensor_from_volume<float>(xr);

    // (a) learner forward on the windowed image
    gn::Graph<float> g_seg;
    auto seg = seg_forward(&g_seg, state.learners[i], x_i_t);

    // (b) one Adam step per discriminator; with lambda == 0 the adversarial
    // term is absent, so the discriminators are dead weight and stay untouched
    if (state.cfg.lambda > 0.0) {
        const std::size_t plane = x.dims.voxels();
        for (int n = 0; n < 5; ++n) {
            auto y_n = gn::tensor_from_volume<float>(extract_class_mask(labels, n));
            auto s_n = gn::make_tensor<float>({1, x.dims.nz, x.dims.ny, x.dims.nx});
            std::copy(seg->data.begin() + n * plane, seg->data.begin() + (n + 1) * plane,
                      s_n->data.begin());
            gn::Graph<float> g_d;
            auto loss = discriminator_loss(&g_d, state.discs[n], x_cond, y_n, s_n);
            log.l_adv[n] = loss->data[0];
            check_loss_finite(log.l_adv[n], "L_adv");
            g_d.backward(loss);
            gn::adam_step(state.discs[n], state.disc_adam[n]);
        }
    }

    // (c) one Adam step for the learner on the hybrid loss, discriminators frozen
    for (auto& d : state.discs) d.set_requires_grad(false);
    auto mce = gn::mce_loss(&g_seg, seg, labels);
    log.l_mce = mce->data[0];
    check_loss_finite(log.l_mce, "L_mce");
    auto loss = mce;
    if (state.cfg.lambda > 0.0) {
        for (int n = 0; n < 5; ++n) {
            auto s_ch = gn::select_channel(&g_seg, seg, n);
            auto pred = disc_forward(&g_seg, state.discs[n],
                                     gn::concat_channels(&g_seg, {x_cond, s_ch}));
            loss = gn::add(&g_seg, loss,
                           gn::scale(&g_seg, gn::bce_loss(&g_seg, pred, 1.0), state.cfg.lambda));
        }
    }
    log.l_seg = loss->data[0];
    check_loss_finite(log.l_seg, "L_seg");
    g_seg.backward(loss);
    for (auto& d : state.discs) d.set_requires_grad(true);
    gn::adam_step(state.learners[i], state.learner_adam[i]);

    state.iteration += 1;
    return log;
}

void append_step_log_csv(const std::string& path, const StepLog& log, bool write_header) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw IoError("cannot open " + path + " for appending");
    if (write_header)
        os << "iteration,learner_id,l_mce,l_adv_0,l_adv_1,l_adv_2,l_adv_3,l_adv_4,l_seg\n";
    os << log.iteration << ',' << log.learner_id << ',' << log.l_mce;
    for (double v : log.l_adv) os << ',' << v;
    os << ',' << log.l_seg << '\n';
}

SoftSegmentation infer(const gn::NetworkParams<float>& learner, const Volume& x_i) {
    auto x_t = gn::tensor_from_volume<float>(x_i);
    auto seg = seg_forward<float>(nullptr, learner, x_t);
    SoftSegmentation out(x_i.dims, x_i.spacing);
    for (int c = 0; c < LabelVolume::kNumClasses; ++c)
        out.channels[c] = gn::volume_from_channel(seg, c, x_i.spacing);
    return out;
}

double score_structure(const gn::NetworkParams<float>& disc, const Volume& x,
                       const Volume& mask) {
    auto input = condition_input(x, mask);
    auto pred = disc_forward<float>(nullptr, disc, input);
    // saturated discriminators would otherwise emit degenerate 0/1 weights
    double s = static_cast<double>(pred->data[0]);
    return std::clamp(s, gn::kLogClip, 1.0 - gn::kLogClip);
}

} // namespace enmc
