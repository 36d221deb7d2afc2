#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "enmc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace enmc;

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string out_dir = "runs/exp";
    bool out_dir_set = false;
    int fold = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool need_fold = false) {
    cmd->add_option("--config", a.config_path, "experiment config file");
    cmd->add_option("--seed", a.seed, "run seed (overrides the config's first seed)")
        ->each([&](const std::string&) { a.seed_set = true; });
    cmd->add_option("--out-dir", a.out_dir, "output directory (overrides config)")
        ->each([&](const std::string&) { a.out_dir_set = true; });
    auto* f = cmd->add_option("--fold", a.fold, "cross-validation fold id")
                  ->check(CLI::Range(0, 4));
    if (need_fold) f->required();
}

ExperimentConfig resolve(CommonArgs& a) {
    ExperimentConfig cfg = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
    if (!a.seed_set && !cfg.seeds.empty()) a.seed = cfg.seeds.front();
    if (!a.out_dir_set) a.out_dir = cfg.out_dir;
    return cfg;
}

std::vector<int> train_cases_of(const PhantomDataset& ds, int fold) {
    std::vector<int> out;
    for (std::size_t i = 0; i < ds.cases.size(); ++i)
        if (ds.fold[i] != fold) out.push_back(static_cast<int>(i));
    return out;
}

McGanEnsembleState load_state(const ExperimentConfig& cfg, const PhantomDataset& ds,
                              const CommonArgs& a) {
    auto windows = windows_for_config(cfg, ds, train_cases_of(ds, a.fold));
    TrainConfig tc;
    tc.lr = cfg.train.lr;
    tc.lambda = cfg.train.lambda;
    tc.seed = a.seed;
    McGanEnsembleState state = McGanEnsembleState::create(windows, tc);
    state.load(a.out_dir + "/fold_" + std::to_string(a.fold) + "/");
    return state;
}

SoftSegmentation fuse_case(const ExperimentConfig& cfg, McGanEnsembleState& state,
                           const PhantomCase& pc, const std::vector<int>& ranking) {
    EnsembleBundle bundle;
    for (int i = 0; i < state.num_learners(); ++i) {
        Volume x_i = apply_window(pc.image, state.windows[i]);
        bundle.segs.push_back(infer(state.learners[i], x_i));
        std::array<double, 5> s{};
        for (int n = 0; n < 5; ++n)
            s[n] = score_structure(state.discs[n], pc.image, bundle.segs.back().channels[n]);
        bundle.scores.push_back(s);
    }
    const std::string& mode = cfg.ensemble_mode;
    if (mode == "awe") return awe_fuse(bundle);
    if (mode == "mean") return mean_fuse(bundle.segs);
    if (mode == "majority") {
        // represent the vote as a one-hot soft segmentation
        LabelVolume voted = majority_vote(bundle.segs);
        SoftSegmentation seg;
        for (int c = 0; c < LabelVolume::kNumClasses; ++c)
            seg.channels[c] = extract_class_mask(voted, c);
        seg.dims = voted.dims;
        seg.spacing = voted.spacing;
        return seg;
    }
    if (mode.rfind("single:", 0) == 0) {
        int i = std::stoi(mode.substr(7));
        if (i < 0 || i >= state.num_learners())
            throw ConfigError("ensemble mode " + mode + " out of range");
        return bundle.segs[i];
    }
    if (mode.rfind("topk:", 0) == 0) {
        int k = std::stoi(mode.substr(5));
        return rank_and_fuse_topk(bundle, ranking, k);
    }
    throw ConfigError("unknown ensemble mode " + mode);
}

int cmd_gen_data(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(a.seed), cfg.phantom.n_cases, a.seed);
    write_dataset(ds, a.out_dir);
    ContrastReport rep = contrast_report(ds.cases.front());
    std::printf("wrote %zu cases to %s\n", ds.cases.size(), a.out_dir.c_str());
    std::printf("kidney/tumor separation %.3f, background/artery %.3f\n",
                rep.separation[1][2], rep.separation[0][4]);
    return 0;
}

int cmd_derive_windows(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    cfg.committee.enabled = true;
    cfg.committee.source = "derived";
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(a.seed), cfg.phantom.n_cases, a.seed);
    WindowCommittee committee;
    windows_for_config(cfg, ds, train_cases_of(ds, a.fold), &committee);
    fs::create_directories(a.out_dir);
    const std::string path = a.out_dir + "/committee.txt";
    write_committee(committee, path);
    std::printf("wrote %s\n", path.c_str());
    for (int i = 0; i < WindowCommittee::kSize; ++i) {
        WindowSpec w = committee.spec(i);
        std::printf("window %d: center %.6f width %.6f\n", i, w.center, w.width);
    }
    return 0;
}

int cmd_train(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(a.seed), cfg.phantom.n_cases, a.seed);
    FoldRunResult r = run_fold(cfg, ds, a.fold, a.seed, a.out_dir);
    std::printf("fold %d: trained on %zu cases, evaluated %zu, %zu metric rows\n", r.fold_id,
                r.train_cases.size(), r.test_cases.size(), r.rows.size());
    std::printf("metrics: %s/fold_%d/metrics.csv\n", a.out_dir.c_str(), a.fold);
    return 0;
}

int cmd_fuse(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(a.seed), cfg.phantom.n_cases, a.seed);
    McGanEnsembleState state = load_state(cfg, ds, a);
    std::vector<int> ranking(state.num_learners());
    for (int i = 0; i < state.num_learners(); ++i) ranking[i] = i;
    const std::string dir = a.out_dir + "/fold_" + std::to_string(a.fold);
    int n = 0;
    for (std::size_t c = 0; c < ds.cases.size(); ++c) {
        if (ds.fold[c] != a.fold) continue;
        SoftSegmentation fused = fuse_case(cfg, state, ds.cases[c], ranking);
        write_labels(hardmax(fused), dir + "/fused_case_" + std::to_string(c) + ".env");
        n++;
    }
    std::printf("fused %d held-out cases with mode %s into %s\n", n, cfg.ensemble_mode.c_str(),
                dir.c_str());
    return 0;
}

int cmd_evaluate(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(a.seed), cfg.phantom.n_cases, a.seed);
    McGanEnsembleState state = load_state(cfg, ds, a);
    std::vector<int> ranking(state.num_learners());
    for (int i = 0; i < state.num_learners(); ++i) ranking[i] = i;
    std::vector<MetricRow> rows;
    for (std::size_t c = 0; c < ds.cases.size(); ++c) {
        if (ds.fold[c] != a.fold) continue;
        SoftSegmentation fused = fuse_case(cfg, state, ds.cases[c], ranking);
        auto rep = evaluate_case("case_" + std::to_string(c), hardmax(fused), ds.cases[c].labels,
                                 &fused);
        for (const auto& m : rep.per_class)
            rows.push_back({rep.case_id, cfg.ensemble_mode, m.class_name, m.dsc, m.msd, m.mcd,
                            m.auc});
    }
    const std::string path =
        a.out_dir + "/fold_" + std::to_string(a.fold) + "/eval_metrics.csv";
    write_metric_rows_csv(path, rows);
    double acc = 0.0;
    for (const auto& r : rows) acc += r.dsc;
    std::printf("mode %s: mean DSC %.4f over %zu rows -> %s\n", cfg.ensemble_mode.c_str(),
                rows.empty() ? 0.0 : acc / rows.size(), rows.size(), path.c_str());
    return 0;
}

int cmd_ablation(CommonArgs& a) {
    ExperimentConfig cfg = resolve(a);
    AblationResult r = ablation_suite(cfg, a.out_dir);
    std::fputs(render_ablation_table(r).c_str(), stdout);
    return 0;
}

int cmd_heatmap(CommonArgs& a) {
    resolve(a);
    const std::string in = a.out_dir + "/fold_" + std::to_string(a.fold) + "/metrics.csv";
    auto m = learner_heatmap(read_metric_rows_csv(in));
    const std::string out = a.out_dir + "/fold_" + std::to_string(a.fold) + "/heatmap.csv";
    write_heatmap_csv(out, m);
    std::printf("%-8s %8s %8s %8s %8s\n", "learner", "kidney", "tumor", "vein", "artery");
    for (int i = 0; i < 9; ++i)
        std::printf("%-8d %8.4f %8.4f %8.4f %8.4f\n", i, m[i][0], m[i][1], m[i][2], m[i][3]);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_topk(CommonArgs& a) {
    resolve(a);
    const std::string in = a.out_dir + "/fold_" + std::to_string(a.fold) + "/metrics.csv";
    auto pts = topk_curve(read_metric_rows_csv(in));
    const std::string out = a.out_dir + "/fold_" + std::to_string(a.fold) + "/topk.csv";
    write_topk_csv(out, pts);
    std::printf("%-4s %8s\n", "k", "mean");
    for (const auto& p : pts) std::printf("%-4d %8.4f\n", p.k, p.mean_dsc);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_report(CommonArgs& a) {
    resolve(a);
    std::vector<MetricRow> rows;
    for (int fold = 0; fold < 5; ++fold) {
        const std::string path = a.out_dir + "/fold_" + std::to_string(fold) + "/metrics.csv";
        if (!fs::exists(path)) continue;
        auto part = read_metric_rows_csv(path);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw ReportError("no fold metrics under " + a.out_dir);
    // mean DSC per (mode, class) over every case row
    std::map<std::string, std::map<std::string, std::pair<double, int>>> agg;
    for (const auto& r : rows) {
        auto& cell = agg[r.mode][r.class_name];
        cell.first += r.dsc;
        cell.second++;
    }
    std::ofstream os(a.out_dir + "/report.txt");
    auto emit = [&](const std::string& line) {
        os << line << '\n';
        std::fputs((line + "\n").c_str(), stdout);
    };
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %8s %8s %8s %8s %8s", "mode", "kidney", "tumor",
                  "vein", "artery", "mean");
    emit(buf);
    for (const auto& [mode, classes] : agg) {
        double vals[4] = {0, 0, 0, 0};
        const char* names[4] = {"kidney", "tumor", "vein", "artery"};
        for (int c = 0; c < 4; ++c) {
            auto it = classes.find(names[c]);
            if (it != classes.end()) vals[c] = it->second.first / it->second.second;
        }
        std::snprintf(buf, sizeof(buf), "%-12s %8.4f %8.4f %8.4f %8.4f %8.4f", mode.c_str(),
                      vals[0], vals[1], vals[2], vals[3],
                      (vals[0] + vals[1] + vals[2] + vals[3]) / 4.0);
        emit(buf);
    }
    std::printf("wrote %s/report.txt\n", a.out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-window adversarial ensemble segmentation pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::map<std::string, int (*)(CommonArgs&)> dispatch = {
        {"gen-data", cmd_gen_data},   {"derive-windows", cmd_derive_windows},
        {"train", cmd_train},         {"fuse", cmd_fuse},
        {"evaluate", cmd_evaluate},   {"ablation", cmd_ablation},
        {"heatmap", cmd_heatmap},     {"topk", cmd_topk},
        {"report", cmd_report},
    };
    const std::map<std::string, std::string> blurbs = {
        {"gen-data", "generate a phantom dataset"},
        {"derive-windows", "derive the window committee from training data"},
        {"train", "train one cross-validation fold and evaluate it"},
        {"fuse", "fuse held-out cases with the configured ensemble mode"},
        {"evaluate", "evaluate the configured ensemble mode on the held-out fold"},
        {"ablation", "run the 4-row ablation over seeds and folds"},
        {"heatmap", "per-learner per-structure DSC matrix from fold metrics"},
        {"topk", "DSC vs number of fused learners from fold metrics"},
        {"report", "aggregate fold metrics into a summary table"},
    };
    for (auto& [name, fn] : dispatch) {
        CLI::App* sub = app.add_subcommand(name, blurbs.at(name));
        bool need_fold = name == "train" || name == "fuse" || name == "evaluate" ||
                         name == "heatmap" || name == "topk";
        add_common(sub, args, need_fold);
        int (*f)(CommonArgs&) = fn;
        sub->callback([&args, f]() {
            if (int rc = f(args); rc != 0) throw CLI::RuntimeError(rc);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const EnmcError& e) {
        std::fprintf(stderr, "error:%s: %s\n", e.category.c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error:internal: %s\n", e.what());
        return 3;
    }
    return 0;
}
