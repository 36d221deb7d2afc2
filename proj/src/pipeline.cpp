#include "enmc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace enmc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + s + "'");
    }
}

long long parse_int(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for " + key + ": '" + s + "'");
    }
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

Dims parse_dims(const std::string& s, const std::string& key) {
    auto toks = split_ws(s);
    if (toks.size() != 3) throw ConfigError(key + " needs 3 extents");
    return {static_cast<int>(parse_int(toks[0], key)), static_cast<int>(parse_int(toks[1], key)),
            static_cast<int>(parse_int(toks[2], key))};
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header: " + line);
            section = line.substr(1, line.size() - 2);
            if (section != "phantom" && section != "committee" && section != "train" &&
                section != "ensemble" && section != "run")
                throw ConfigError("unknown config section [" + section + "]");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(lineno));
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            auto a = s.find_first_not_of(" \t");
            auto b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);
        const std::string qual = section + "." + key;
        if (section == "phantom") {
            if (key == "dims")
                cfg.phantom.dims = parse_dims(val, qual);
            else if (key == "n_cases")
                cfg.phantom.n_cases = static_cast<int>(parse_int(val, qual));
            else if (key == "noise_sigma")
                cfg.phantom.noise_sigma = parse_double(val, qual);
            else if (key == "tumor_radius_min")
                cfg.phantom.tumor_radius_min = parse_double(val, qual);
            else if (key == "tumor_radius_max")
                cfg.phantom.tumor_radius_max = parse_double(val, qual);
            else
                throw ConfigError("unknown key " + qual);
        } else if (section == "committee") {
            if (key == "enabled") {
                if (val != "true" && val != "false")
                    throw ConfigError(qual + " must be true or false");
                cfg.committee.enabled = val == "true";
            } else if (key == "source") {
                if (val != "fixed" && val != "derived")
                    throw ConfigError(qual + " must be fixed or derived");
                cfg.committee.source = val;
            } else if (key == "centers") {
                auto toks = split_ws(val);
                if (toks.size() != 3) throw ConfigError(qual + " needs 3 values");
                for (int i = 0; i < 3; ++i) {
                    parse_double(toks[i], qual); // validate
                    cfg.committee.center_strs[i] = toks[i];
                }
            } else if (key == "widths") {
                auto toks = split_ws(val);
                if (toks.size() != 3) throw ConfigError(qual + " needs 3 values");
                for (int i = 0; i < 3; ++i) {
                    if (parse_double(toks[i], qual) <= 0.0)
                        throw ConfigError(qual + " must be positive");
                    cfg.committee.width_strs[i] = toks[i];
                }
            } else if (key == "kmeans_clusters")
                cfg.committee.kmeans_clusters = static_cast<int>(parse_int(val, qual));
            else if (key == "seed")
                cfg.committee.seed = static_cast<std::uint64_t>(parse_int(val, qual));
            else
                throw ConfigError("unknown key " + qual);
        } else if (section == "train") {
            if (key == "lr")
                cfg.train.lr = parse_double(val, qual);
            else if (key == "batch") {
                cfg.train.batch = static_cast<int>(parse_int(val, qual));
                if (cfg.train.batch != 1) throw ConfigError("train.batch must be 1");
            } else if (key == "lambda") {
                cfg.train.lambda = parse_double(val, qual);
                if (cfg.train.lambda < 0.0) throw ConfigError("train.lambda must be >= 0");
            } else if (key == "iterations")
                cfg.train.iterations = static_cast<int>(parse_int(val, qual));
            else if (key == "iterations_scope") {
                if (val != "total" && val != "per_learner")
                    throw ConfigError(qual + " must be total or per_learner");
                cfg.train.iterations_scope = val;
            } else if (key == "patch")
                cfg.train.patch = parse_dims(val, qual);
            else if (key == "seed")
                cfg.train.seed = static_cast<std::uint64_t>(parse_int(val, qual));
            else
                throw ConfigError("unknown key " + qual);
        } else if (section == "ensemble") {
            if (key == "mode")
                cfg.ensemble_mode = val;
            else
                throw ConfigError("unknown key " + qual);
        } else if (section == "run") {
            if (key == "seeds") {
                cfg.seeds.clear();
                for (const auto& tok : split_ws(val))
                    cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(tok, qual)));
                if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");
            } else if (key == "out_dir")
                cfg.out_dir = val;
            else
                throw ConfigError("unknown key " + qual);
        } else {
            throw ConfigError("key outside any section: " + key);
        }
    }
    return cfg;
}

std::string render_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[phantom]\n";
    os << "dims = " << cfg.phantom.dims.nx << ' ' << cfg.phantom.dims.ny << ' '
       << cfg.phantom.dims.nz << '\n';
    os << "n_cases = " << cfg.phantom.n_cases << '\n';
    os << "noise_sigma = " << fmt(cfg.phantom.noise_sigma) << '\n';
    os << "tumor_radius_min = " << fmt(cfg.phantom.tumor_radius_min) << '\n';
    os << "tumor_radius_max = " << fmt(cfg.phantom.tumor_radius_max) << '\n';
    os << "\n[committee]\n";
    os << "enabled = " << (cfg.committee.enabled ? "true" : "false") << '\n';
    os << "source = " << cfg.committee.source << '\n';
    os << "centers = " << cfg.committee.center_strs[0] << ' ' << cfg.committee.center_strs[1]
       << ' ' << cfg.committee.center_strs[2] << '\n';
    os << "widths = " << cfg.committee.width_strs[0] << ' ' << cfg.committee.width_strs[1] << ' '
       << cfg.committee.width_strs[2] << '\n';
    os << "kmeans_clusters = " << cfg.committee.kmeans_clusters << '\n';
    os << "seed = " << cfg.committee.seed << '\n';
    os << "\n[train]\n";
    os << "lr = " << fmt(cfg.train.lr) << '\n';
    os << "batch = " << cfg.train.batch << '\n';
    os << "lambda = " << fmt(cfg.train.lambda) << '\n';
    os << "iterations = " << cfg.train.iterations << '\n';
    os << "iterations_scope = " << cfg.train.iterations_scope << '\n';
    os << "patch = " << cfg.train.patch.nx << ' ' << cfg.train.patch.ny << ' '
       << cfg.train.patch.nz << '\n';
    os << "seed = " << cfg.train.seed << '\n';
    os << "\n[ensemble]\n";
    os << "mode = " << cfg.ensemble_mode << '\n';
    os << "\n[run]\n";
    os << "seeds =";
    for (auto s : cfg.seeds) os << ' ' << s;
    os << '\n';
    os << "out_dir = " << cfg.out_dir << '\n';
    return os.str();
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << render_config(cfg);
}

PhantomSpec ExperimentConfig::phantom_spec(std::uint64_t seed) const {
    PhantomSpec spec;
    spec.dims = phantom.dims;
    spec.seed = seed;
    spec.noise_sigma = phantom.noise_sigma;
    spec.tumor_radius_min = phantom.tumor_radius_min;
    spec.tumor_radius_max = phantom.tumor_radius_max;
    return spec;
}

std::uint64_t ExperimentConfig::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : render_config(*this)) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Fold runs
// ---------------------------------------------------------------------------

std::vector<WindowSpec> windows_for_config(const ExperimentConfig& cfg, const PhantomDataset& ds,
                                           const std::vector<int>& train_cases,
                                           WindowCommittee* committee_out) {
    if (!cfg.committee.enabled) {
        // single learner on the full gray range
        return {WindowSpec{4095.0 / 2.0, 4095.0}};
    }
    WindowCommittee committee;
    std::array<double, 3> widths{};
    for (int i = 0; i < 3; ++i) widths[i] = std::stod(cfg.committee.width_strs[i]);
    if (cfg.committee.source == "fixed") {
        std::array<double, 3> centers{};
        for (int i = 0; i < 3; ++i) centers[i] = std::stod(cfg.committee.center_strs[i]);
        committee = WindowCommittee::from_values(centers, widths, cfg.committee.seed, false);
        committee.center_strs = cfg.committee.center_strs; // keep config tokens verbatim
        committee.width_strs = cfg.committee.width_strs;
    } else {
        std::vector<const Volume*> vols;
        std::vector<const LabelVolume*> labs;
        for (int c : train_cases) {
            vols.push_back(&ds.cases[c].image);
            labs.push_back(&ds.cases[c].labels);
        }
        committee = derive_committee(vols, labs, cfg.committee.kmeans_clusters, widths,
                                     cfg.committee.seed);
    }
    if (committee_out) *committee_out = committee;
    std::vector<WindowSpec> windows;
    for (int i = 0; i < WindowCommittee::kSize; ++i) windows.push_back(committee.spec(i));
    return windows;
}

namespace {

std::vector<MetricRow> rows_from_report(const MetricsReport& rep, const std::string& mode) {
    std::vector<MetricRow> rows;
    for (const auto& m : rep.per_class)
        rows.push_back({rep.case_id, mode, m.class_name, m.dsc, m.msd, m.mcd, m.auc});
    return rows;
}

double foreground_mean_dsc(const MetricsReport& rep) {
    double acc = 0.0;
    for (const auto& m : rep.per_class) acc += m.dsc;
    return acc / static_cast<double>(rep.per_class.size());
}

} // namespace

FoldRunResult run_fold(const ExperimentConfig& cfg, const PhantomDataset& ds, int fold_id,
                       std::uint64_t seed, const std::string& out_dir) {
    if (fold_id < 0 || fold_id > 4) throw ConfigError("fold_id must be in {0..4}");
    if (ds.cases.empty()) throw ConfigError("empty dataset");
    FoldRunResult result;
    result.fold_id = fold_id;
    for (std::size_t i = 0; i < ds.cases.size(); ++i)
        (ds.fold[i] == fold_id ? result.test_cases : result.train_cases)
            .push_back(static_cast<int>(i));
    if (result.train_cases.empty() || result.test_cases.empty())
        throw ConfigError("fold split left an empty side");

    auto windows = windows_for_config(cfg, ds, result.train_cases);
    TrainConfig tc;
    tc.lr = cfg.train.lr;
    tc.lambda = cfg.train.lambda;
    tc.seed = seed;
    McGanEnsembleState state = McGanEnsembleState::create(windows, tc);

    const std::string fold_dir = out_dir + "/fold_" + std::to_string(fold_id);
    fs::create_directories(fold_dir);
    save_config(cfg, fold_dir + "/config.txt"); // echo every hyperparameter

    long long total_iters = cfg.train.iterations;
    if (cfg.train.iterations_scope == "per_learner")
        total_iters *= state.num_learners();
    const std::string log_path = fold_dir + "/steps.csv";
    if (fs::exists(log_path)) fs::remove(log_path);
    for (long long it = 0; it < total_iters; ++it) {
        int case_id = result.train_cases[it % result.train_cases.size()];
        StepLog log = train_step(state, ds.cases[case_id].image, ds.cases[case_id].labels);
        append_step_log_csv(log_path, log, it == 0);
    }
    state.save(fold_dir + "/");
    for (int i = 0; i < state.num_learners(); ++i)
        result.checkpoint_paths.push_back(fold_dir + "/learner_" + std::to_string(i) + ".enmw");
    for (int n = 0; n < 5; ++n)
        result.checkpoint_paths.push_back(fold_dir + "/disc_" + std::to_string(n) + ".enmw");

    // learner ranking by validation mean DSC on (a slice of) the training folds
    const int n_learners = state.num_learners();
    std::vector<double> val_dsc(n_learners, 0.0);
    std::vector<int> val_cases(result.train_cases.begin(),
                               result.train_cases.begin() +
                                   std::min<std::size_t>(8, result.train_cases.size()));
    for (int i = 0; i < n_learners; ++i) {
        double acc = 0.0;
        for (int c : val_cases) {
            Volume x_i = apply_window(ds.cases[c].image, state.windows[i]);
            SoftSegmentation seg = infer(state.learners[i], x_i);
            auto rep = evaluate_case("val", hardmax(seg), ds.cases[c].labels);
            acc += foreground_mean_dsc(rep);
        }
        val_dsc[i] = acc / static_cast<double>(val_cases.size());
    }
    result.ranking.resize(n_learners);
    std::iota(result.ranking.begin(), result.ranking.end(), 0);
    std::stable_sort(result.ranking.begin(), result.ranking.end(),
                     [&](int a, int b) { return val_dsc[a] > val_dsc[b]; });

    // held-out evaluation, every ensemble mode
    for (int c : result.test_cases) {
        const auto& pc = ds.cases[c];
        const std::string case_id = "case_" + std::to_string(c);
        EnsembleBundle bundle;
        for (int i = 0; i < n_learners; ++i) {
            Volume x_i = apply_window(pc.image, state.windows[i]);
            bundle.segs.push_back(infer(state.learners[i], x_i));
            std::array<double, 5> s{};
            for (int n = 0; n < 5; ++n)
                s[n] = score_structure(state.discs[n], pc.image, bundle.segs.back().channels[n]);
            bundle.scores.push_back(s);
        }
        for (int i = 0; i < n_learners; ++i) {
            auto rep = evaluate_case(case_id, hardmax(bundle.segs[i]), pc.labels,
                                     &bundle.segs[i]);
            auto rows = rows_from_report(rep, "single_" + std::to_string(i));
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
        }
        if (n_learners > 1) {
            SoftSegmentation fused = awe_fuse(bundle);
            auto rep = evaluate_case(case_id, hardmax(fused), pc.labels, &fused);
            auto rows = rows_from_report(rep, "awe");
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());

            SoftSegmentation mean_seg = mean_fuse(bundle.segs);
            rep = evaluate_case(case_id, hardmax(mean_seg), pc.labels, &mean_seg);
            rows = rows_from_report(rep, "mean");
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());

            LabelVolume voted = majority_vote(bundle.segs);
            rep = evaluate_case(case_id, voted, pc.labels);
            rows = rows_from_report(rep, "majority");
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());

            for (int k = 1; k <= n_learners; ++k) {
                SoftSegmentation topk = rank_and_fuse_topk(bundle, result.ranking, k);
                rep = evaluate_case(case_id, hardmax(topk), pc.labels, &topk);
                rows = rows_from_report(rep, "topk_" + std::to_string(k));
                result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            }
            write_scores_csv(fold_dir + "/scores_" + case_id + ".csv", bundle,
                             normalize_scores(bundle.scores));
        }
    }
    write_metric_rows_csv(fold_dir + "/metrics.csv", result.rows);
    return result;
}

// ---------------------------------------------------------------------------
// Metric row CSV
// ---------------------------------------------------------------------------

void write_metric_rows_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "case_id,mode,class,dsc,msd,mcd,auc\n";
    char buf[64];
    auto put = [&](const std::optional<double>& v) {
        if (v) {
            std::snprintf(buf, sizeof(buf), "%.17g", *v);
            os << buf;
        }
    };
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.dsc);
        os << r.case_id << ',' << r.mode << ',' << r.class_name << ',' << buf << ',';
        put(r.msd);
        os << ',';
        put(r.mcd);
        os << ',';
        put(r.auc);
        os << '\n';
    }
    if (!os) throw IoError("short write to " + path);
}

std::vector<MetricRow> read_metric_rows_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty metrics csv " + path);
    std::vector<MetricRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        while (f.size() < 7) f.push_back("");
        MetricRow r;
        r.case_id = f[0];
        r.mode = f[1];
        r.class_name = f[2];
        r.dsc = std::stod(f[3]);
        if (!f[4].empty()) r.msd = std::stod(f[4]);
        if (!f[5].empty()) r.mcd = std::stod(f[5]);
        if (!f[6].empty()) r.auc = std::stod(f[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

ExperimentConfig ablation_row_config(const ExperimentConfig& cfg, const std::string& row) {
    ExperimentConfig c = cfg;
    if (row == "base") {
        c.committee.enabled = false;
        c.train.lambda = 0.0;
        c.ensemble_mode = "single:0";
    } else if (row == "mcgan") {
        c.committee.enabled = false;
        c.ensemble_mode = "single:0";
    } else if (row == "mwc_majority") {
        c.ensemble_mode = "majority";
    } else if (row == "awe") {
        c.ensemble_mode = "awe";
    } else {
        throw ConfigError("unknown ablation row " + row);
    }
    return c;
}

namespace {

constexpr const char* kClassNames[4] = {"kidney", "tumor", "vein", "artery"};

std::array<double, 4> mean_dsc_by_class(const std::vector<MetricRow>& rows,
                                        const std::string& mode) {
    std::array<double, 4> acc{};
    std::array<int, 4> n{};
    for (const auto& r : rows) {
        if (r.mode != mode) continue;
        for (int c = 0; c < 4; ++c)
            if (r.class_name == kClassNames[c]) {
                acc[c] += r.dsc;
                n[c]++;
            }
    }
    for (int c = 0; c < 4; ++c) {
        if (n[c] == 0) throw ReportError("no rows for mode " + mode);
        acc[c] /= n[c];
    }
    return acc;
}

} // namespace

double AblationResult::row_mean(int row, int seed_index) const {
    const auto& m = seed_index < 0 ? seed_mean[row] : per_seed[seed_index][row];
    return (m[0] + m[1] + m[2] + m[3]) / 4.0;
}

AblationResult ablation_suite(const ExperimentConfig& cfg, const std::string& out_dir) {
    AblationResult result;
    result.row_names = {"base", "mcgan", "mwc_majority", "awe"};
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        const std::uint64_t seed = cfg.seeds[si];
        PhantomDataset ds = generate_dataset(cfg.phantom_spec(seed), cfg.phantom.n_cases, seed);
        const std::string seed_dir = out_dir + "/seed_" + std::to_string(seed);

        // three trainings per fold: base, mcgan, full; majority/awe share the full one
        std::vector<MetricRow> base_rows, mcgan_rows, full_rows;
        for (int fold = 0; fold < 5; ++fold) {
            auto add = [](std::vector<MetricRow>& dst, const std::vector<MetricRow>& src) {
                dst.insert(dst.end(), src.begin(), src.end());
            };
            add(base_rows, run_fold(ablation_row_config(cfg, "base"), ds, fold, seed,
                                    seed_dir + "/base")
                               .rows);
            add(mcgan_rows, run_fold(ablation_row_config(cfg, "mcgan"), ds, fold, seed,
                                     seed_dir + "/mcgan")
                                .rows);
            add(full_rows, run_fold(ablation_row_config(cfg, "awe"), ds, fold, seed,
                                    seed_dir + "/full")
                               .rows);
        }
        std::array<std::array<double, 4>, 4> per_row{};
        per_row[0] = mean_dsc_by_class(base_rows, "single_0");
        per_row[1] = mean_dsc_by_class(mcgan_rows, "single_0");
        per_row[2] = mean_dsc_by_class(full_rows, "majority");
        per_row[3] = mean_dsc_by_class(full_rows, "awe");
        result.per_seed.push_back(per_row);
    }
    for (int row = 0; row < 4; ++row)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (const auto& s : result.per_seed) acc += s[row][c];
            result.seed_mean[row][c] = acc / static_cast<double>(result.per_seed.size());
        }

    fs::create_directories(out_dir);
    std::ofstream csv(out_dir + "/ablation.csv");
    csv << "row,kidney,tumor,vein,artery,mean\n";
    for (int row = 0; row < 4; ++row) {
        csv << result.row_names[row];
        for (int c = 0; c < 4; ++c) csv << ',' << result.seed_mean[row][c];
        csv << ',' << result.row_mean(row) << '\n';
    }
    std::ofstream table(out_dir + "/ablation.txt");
    table << render_ablation_table(result);
    return result;
}

std::string render_ablation_table(const AblationResult& r) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-14s %8s %8s %8s %8s %8s\n", "row", "kidney", "tumor",
                  "vein", "artery", "mean");
    os << buf;
    for (std::size_t row = 0; row < r.row_names.size(); ++row) {
        std::snprintf(buf, sizeof(buf), "%-14s %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                      r.row_names[row].c_str(), r.seed_mean[row][0], r.seed_mean[row][1],
                      r.seed_mean[row][2], r.seed_mean[row][3],
                      r.row_mean(static_cast<int>(row)));
        os << buf;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Framework analysis
// ---------------------------------------------------------------------------

std::array<std::array<double, 4>, 9> learner_heatmap(const std::vector<MetricRow>& rows) {
    std::array<std::array<double, 4>, 9> m{};
    for (int i = 0; i < 9; ++i) {
        try {
            m[i] = mean_dsc_by_class(rows, "single_" + std::to_string(i));
        } catch (const ReportError&) {
            throw ReportError("missing metrics for learner " + std::to_string(i));
        }
    }
    return m;
}

std::vector<TopkPoint> topk_curve(const std::vector<MetricRow>& rows) {
    std::vector<TopkPoint> pts;
    for (int k = 1; k <= 9; ++k) {
        TopkPoint p;
        p.k = k;
        p.class_dsc = mean_dsc_by_class(rows, "topk_" + std::to_string(k));
        p.mean_dsc = (p.class_dsc[0] + p.class_dsc[1] + p.class_dsc[2] + p.class_dsc[3]) / 4.0;
        pts.push_back(p);
    }
    return pts;
}

void write_heatmap_csv(const std::string& path, const std::array<std::array<double, 4>, 9>& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "learner,kidney,tumor,vein,artery\n";
    for (int i = 0; i < 9; ++i) {
        os << i;
        for (int c = 0; c < 4; ++c) os << ',' << m[i][c];
        os << '\n';
    }
}

void write_topk_csv(const std::string& path, const std::vector<TopkPoint>& pts) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "k,kidney,tumor,vein,artery,mean\n";
    for (const auto& p : pts) {
        os << p.k;
        for (int c = 0; c < 4; ++c) os << ',' << p.class_dsc[c];
        os << ',' << p.mean_dsc << '\n';
    }
}

} // namespace enmc
