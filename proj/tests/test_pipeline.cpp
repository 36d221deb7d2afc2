#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "enmc/pipeline.hpp"

using namespace enmc;
namespace fs = std::filesystem;

namespace {

// tiny but complete experiment: 5 cases at 12^3, 2 learners' worth of work cut
// down to a single full-range learner unless a test opts into the committee
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.phantom.dims = {12, 12, 12};
    cfg.phantom.n_cases = 5;
    cfg.train.patch = {12, 12, 12};
    cfg.train.iterations = 4;
    cfg.committee.enabled = false;
    cfg.train.lambda = 0.0;
    cfg.ensemble_mode = "single:0";
    cfg.seeds = {1};
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("config round trip is lossless, including non-default values") {
    ExperimentConfig cfg;
    cfg.phantom.dims = {16, 16, 16};
    cfg.phantom.n_cases = 10;
    cfg.phantom.noise_sigma = 7.5;
    cfg.phantom.tumor_radius_min = 3.25;
    cfg.committee.enabled = true;
    cfg.committee.source = "derived";
    cfg.committee.center_strs = {"1000.5", "1100", "1300.125"};
    cfg.committee.width_strs = {"128", "300.5", "1024"};
    cfg.committee.kmeans_clusters = 4;
    cfg.committee.seed = 9;
    cfg.train.lr = 2.5e-4;
    cfg.train.lambda = 0.02;
    cfg.train.iterations = 123;
    cfg.train.iterations_scope = "per_learner";
    cfg.train.patch = {16, 16, 16};
    cfg.train.seed = 5;
    cfg.ensemble_mode = "topk:3";
    cfg.seeds = {4, 5, 6, 7};
    cfg.out_dir = "runs/other";

    auto text = render_config(cfg);
    auto back = parse_config(text);
    CHECK(back == cfg);
    // rendering the parsed config reproduces the text byte for byte
    CHECK(render_config(back) == text);
}

TEST_CASE("config parsing is strict") {
    auto base = render_config(ExperimentConfig{});
    CHECK(parse_config(base) == ExperimentConfig{});

    CHECK_THROWS_AS(parse_config(base + "\nunknown_key = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(base + "\n[mystery]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr = 1\n"), ConfigError); // key before any section

    ExperimentConfig bad;
    bad.train.batch = 2;
    CHECK_THROWS_AS(parse_config(render_config(bad)), ConfigError);
    bad = ExperimentConfig{};
    bad.train.lambda = -0.5;
    CHECK_THROWS_AS(parse_config(render_config(bad)), ConfigError);
    bad = ExperimentConfig{};
    bad.train.iterations_scope = "sideways";
    CHECK_THROWS_AS(parse_config(render_config(bad)), ConfigError);
    bad = ExperimentConfig{};
    bad.seeds.clear();
    CHECK_THROWS_AS(parse_config(render_config(bad)), ConfigError);
    bad = ExperimentConfig{};
    bad.committee.width_strs[1] = "-5";
    CHECK_THROWS_AS(parse_config(render_config(bad)), ConfigError);
}

TEST_CASE("save/load round trip and content hash sensitivity") {
    auto dir = fresh_dir("pipeline_cfg_test");
    auto cfg = tiny_config();
    std::string path = (dir / "config.txt").string();
    save_config(cfg, path);
    CHECK(load_config(path) == cfg);
    CHECK_THROWS_AS(load_config((dir / "nope.txt").string()), IoError);

    auto h = cfg.content_hash();
    auto other = cfg;
    other.train.iterations = 5;
    CHECK(other.content_hash() != h);
    other = cfg;
    other.ensemble_mode = "awe";
    CHECK(other.content_hash() != h);
    CHECK(tiny_config().content_hash() == h);
}

TEST_CASE("windows_for_config honors the committee switch") {
    auto cfg = tiny_config();
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(1), 5, 1);
    std::vector<int> train_cases{0, 1, 2, 3};

    SUBCASE("disabled: one full-range window") {
        auto w = windows_for_config(cfg, ds, train_cases);
        REQUIRE(w.size() == 1);
        CHECK(w[0].center == doctest::Approx(4095.0 / 2.0));
        CHECK(w[0].width == doctest::Approx(4095.0));
    }
    SUBCASE("fixed: the 9-member grid from the configured tokens") {
        cfg.committee.enabled = true;
        WindowCommittee com;
        auto w = windows_for_config(cfg, ds, train_cases, &com);
        REQUIRE(w.size() == 9);
        CHECK(w[0].center == doctest::Approx(1032.7834));
        CHECK(w[0].width == doctest::Approx(256.0));
        CHECK(w[8].center == doctest::Approx(1332.1959));
        CHECK(w[8].width == doctest::Approx(768.0));
        CHECK(com.center_strs[0] == "1032.7834");
    }
    SUBCASE("derived: centers track the data") {
        cfg.committee.enabled = true;
        cfg.committee.source = "derived";
        WindowCommittee com;
        auto w = windows_for_config(cfg, ds, train_cases, &com);
        REQUIRE(w.size() == 9);
        CHECK(com.derived);
        for (double c : com.centers) {
            CHECK(c > 900.0);
            CHECK(c < 1500.0);
        }
    }
}

TEST_CASE("ablation_row_config only touches the three documented knobs") {
    ExperimentConfig cfg;
    cfg.train.lambda = 0.02;
    cfg.ensemble_mode = "awe";

    auto base = ablation_row_config(cfg, "base");
    CHECK(!base.committee.enabled);
    CHECK(base.train.lambda == 0.0);
    CHECK(base.ensemble_mode == "single:0");

    auto mcgan = ablation_row_config(cfg, "mcgan");
    CHECK(!mcgan.committee.enabled);
    CHECK(mcgan.train.lambda == cfg.train.lambda);
    CHECK(mcgan.ensemble_mode == "single:0");

    auto maj = ablation_row_config(cfg, "mwc_majority");
    CHECK(maj.committee.enabled);
    CHECK(maj.ensemble_mode == "majority");

    auto awe = ablation_row_config(cfg, "awe");
    CHECK(awe.committee.enabled);
    CHECK(awe.train.lambda == cfg.train.lambda);
    CHECK(awe.ensemble_mode == "awe");

    // nothing else changed
    for (auto* c : {&base, &mcgan, &maj, &awe}) {
        c->committee.enabled = cfg.committee.enabled;
        c->train.lambda = cfg.train.lambda;
        c->ensemble_mode = cfg.ensemble_mode;
        CHECK(*c == cfg);
    }

    CHECK_THROWS_AS(ablation_row_config(cfg, "bogus"), ConfigError);
}

TEST_CASE("metric row CSV round trip") {
    std::vector<MetricRow> rows;
    rows.push_back({"case_1", "awe", "kidney", 0.875, 1.25, std::nullopt, 0.93});
    rows.push_back({"case_2", "single_4", "artery", 0.5, std::nullopt, 2.0, std::nullopt});
    auto dir = fresh_dir("pipeline_rows_test");
    std::string path = (dir / "rows.csv").string();
    write_metric_rows_csv(path, rows);
    auto back = read_metric_rows_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].case_id == "case_1");
    CHECK(back[0].mode == "awe");
    CHECK(back[0].class_name == "kidney");
    CHECK(back[0].dsc == 0.875);
    CHECK(back[0].msd == 1.25);
    CHECK(!back[0].mcd.has_value());
    CHECK(back[0].auc == 0.93);
    CHECK(back[1].mcd == 2.0);
    CHECK(!back[1].msd.has_value());

    CHECK_THROWS_AS(read_metric_rows_csv((dir / "nope.csv").string()), IoError);
}

TEST_CASE("run_fold: deterministic, covers the held-out fold, reloadable") {
    auto cfg = tiny_config();
    PhantomDataset ds = generate_dataset(cfg.phantom_spec(1), cfg.phantom.n_cases, 1);

    auto dir_a = fresh_dir("pipeline_fold_a");
    auto res = run_fold(cfg, ds, /*fold_id=*/0, /*seed=*/1, dir_a.string());

    // split: exactly the fold-0 cases are held out
    std::set<int> test_set(res.test_cases.begin(), res.test_cases.end());
    for (std::size_t i = 0; i < ds.cases.size(); ++i)
        CHECK(test_set.count(static_cast<int>(i)) == (ds.fold[i] == 0 ? 1 : 0));
    CHECK(res.train_cases.size() + res.test_cases.size() == ds.cases.size());

    // one learner -> single_0 rows only, one per held-out case and class
    std::set<std::string> modes;
    std::set<std::string> case_ids;
    for (const auto& r : res.rows) {
        modes.insert(r.mode);
        case_ids.insert(r.case_id);
    }
    CHECK(modes == std::set<std::string>{"single_0"});
    CHECK(case_ids.size() == res.test_cases.size());
    CHECK(res.rows.size() == res.test_cases.size() * 4);

    // artifacts exist
    std::string fold_dir = dir_a.string() + "/fold_0";
    CHECK(fs::exists(fold_dir + "/metrics.csv"));
    CHECK(fs::exists(fold_dir + "/config.txt"));
    REQUIRE(!res.checkpoint_paths.empty());
    for (const auto& p : res.checkpoint_paths) CHECK(fs::exists(p));

    // byte-identical rerun
    auto dir_b = fresh_dir("pipeline_fold_b");
    auto res2 = run_fold(cfg, ds, 0, 1, dir_b.string());
    CHECK(slurp(fold_dir + "/metrics.csv") == slurp(dir_b.string() + "/fold_0/metrics.csv"));

    // reloading the checkpoint reproduces the metrics
    auto windows = windows_for_config(cfg, ds, res.train_cases);
    TrainConfig tc;
    tc.lr = cfg.train.lr;
    tc.lambda = cfg.train.lambda;
    tc.seed = 1;
    auto state = McGanEnsembleState::create(windows, tc);
    state.load(fold_dir + "/");
    int case_id = res.test_cases[0];
    auto x_w = apply_window(ds.cases[case_id].image, windows[0]);
    auto soft = infer(state.learners[0], x_w);
    auto rep = evaluate_case("x", hardmax(soft), ds.cases[case_id].labels, &soft);
    for (int c = 0; c < 4; ++c)
        CHECK(rep.per_class[c].dsc == doctest::Approx(res.rows[c].dsc).epsilon(1e-12));

    // empty fold id -> error
    CHECK_THROWS_AS(run_fold(cfg, ds, 7, 1, dir_b.string()), ConfigError);
}

TEST_CASE("run_fold with the committee emits every ensemble mode") {
    auto cfg = tiny_config();
    cfg.committee.enabled = true;
    cfg.train.iterations = 2;
    auto ds = generate_dataset(cfg.phantom_spec(2), cfg.phantom.n_cases, 2);
    auto dir = fresh_dir("pipeline_fold_c");
    auto res = run_fold(cfg, ds, 1, 2, dir.string());

    REQUIRE(res.ranking.size() == 9);
    std::set<int> rank_set(res.ranking.begin(), res.ranking.end());
    CHECK(rank_set.size() == 9); // a permutation of 0..8

    std::set<std::string> modes;
    for (const auto& r : res.rows) modes.insert(r.mode);
    for (int i = 0; i < 9; ++i) CHECK(modes.count("single_" + std::to_string(i)));
    for (const char* m : {"awe", "mean", "majority"}) CHECK(modes.count(m));
    for (int k = 1; k <= 9; ++k) CHECK(modes.count("topk_" + std::to_string(k)));
    CHECK(fs::exists(dir.string() + "/fold_1/scores_case_" +
                     std::to_string(res.test_cases[0]) + ".csv"));

    // the top-1 fusion is exactly the best-ranked learner's segmentation
    std::string best = "single_" + std::to_string(res.ranking[0]);
    for (const auto& r : res.rows) {
        if (r.mode != "topk_1") continue;
        for (const auto& s : res.rows)
            if (s.mode == best && s.case_id == r.case_id && s.class_name == r.class_name)
                CHECK(r.dsc == doctest::Approx(s.dsc).epsilon(1e-6));
    }
}

TEST_CASE("learner_heatmap and topk_curve aggregate metric rows") {
    std::vector<MetricRow> rows;
    const char* classes[] = {"kidney", "tumor", "vein", "artery"};
    for (int i = 0; i < 9; ++i)
        for (int c = 0; c < 4; ++c) {
            // two cases with different scores; mean = 0.1*i + 0.05*c + 0.1
            rows.push_back({"a", "single_" + std::to_string(i), classes[c],
                            0.1 * i / 9.0 + 0.05 * c, {}, {}, {}});
            rows.push_back({"b", "single_" + std::to_string(i), classes[c],
                            0.1 * i / 9.0 + 0.05 * c + 0.2, {}, {}, {}});
        }
    auto hm = learner_heatmap(rows);
    for (int i = 0; i < 9; ++i)
        for (int c = 0; c < 4; ++c)
            CHECK(hm[i][c] == doctest::Approx(0.1 * i / 9.0 + 0.05 * c + 0.1).epsilon(1e-12));

    // missing learner 4 -> error
    std::vector<MetricRow> partial;
    for (const auto& r : rows)
        if (r.mode != "single_4") partial.push_back(r);
    CHECK_THROWS_AS(learner_heatmap(partial), ReportError);

    for (int k = 1; k <= 9; ++k)
        for (int c = 0; c < 4; ++c)
            rows.push_back({"a", "topk_" + std::to_string(k), classes[c], 0.1 * k, {}, {}, {}});
    auto curve = topk_curve(rows);
    REQUIRE(curve.size() == 9);
    for (int k = 1; k <= 9; ++k) {
        CHECK(curve[k - 1].k == k);
        CHECK(curve[k - 1].mean_dsc == doctest::Approx(0.1 * k).epsilon(1e-12));
        for (int c = 0; c < 4; ++c)
            CHECK(curve[k - 1].class_dsc[c] == doctest::Approx(0.1 * k).epsilon(1e-12));
    }

    auto dir = fresh_dir("pipeline_report_test");
    write_heatmap_csv((dir / "heatmap.csv").string(), hm);
    write_topk_csv((dir / "topk.csv").string(), curve);
    CHECK(fs::exists(dir / "heatmap.csv"));
    CHECK(fs::exists(dir / "topk.csv"));
}

TEST_CASE("per_learner iteration scope multiplies the training budget") {
    auto cfg = tiny_config();
    cfg.committee.enabled = true;
    cfg.train.iterations = 1;
    cfg.train.iterations_scope = "per_learner";
    auto ds = generate_dataset(cfg.phantom_spec(3), cfg.phantom.n_cases, 3);
    auto dir = fresh_dir("pipeline_scope_test");
    run_fold(cfg, ds, 0, 3, dir.string());
    // 1 iteration per learner * 9 learners -> 9 logged steps
    std::ifstream is(dir / "fold_0" / "steps.csv");
    REQUIRE(is.good());
    std::string line;
    int lines = 0;
    while (std::getline(is, line))
        if (!line.empty()) lines++;
    CHECK(lines == 10); // header + 9 steps
}
