#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "enmc/awe.hpp"
#include "enmc/mcgan.hpp"
#include "enmc/phantom.hpp"
#include "enmc/segmetrics.hpp"
#include "enmc/winlab.hpp"

namespace enmc {

// ---------------------------------------------------------------------------
// Experiment configuration (sections per module, strict keys, lossless round
// trip through the text format)
// ---------------------------------------------------------------------------

struct CommitteeConfig {
    bool enabled = true;          // false: one learner on the full-range window
    std::string source = "fixed"; // fixed | derived
    // verbatim decimal tokens; committee serialization reproduces them
    std::array<std::string, 3> center_strs{"1032.7834", "1150.0825", "1332.1959"};
    std::array<std::string, 3> width_strs{"256", "512", "768"};
    int kmeans_clusters = 5;
    std::uint64_t seed = 0;

    bool operator==(const CommitteeConfig&) const = default;
};

struct TrainSection {
    double lr = 1e-4;
    int batch = 1; // the training loop is written for batch size 1
    double lambda = 0.01;
    int iterations = 4000;
    std::string iterations_scope = "total"; // total | per_learner
    Dims patch{32, 32, 32};
    std::uint64_t seed = 0;

    bool operator==(const TrainSection&) const = default;
};

struct PhantomSection {
    Dims dims{32, 32, 32};
    int n_cases = 30;
    double noise_sigma = 15.0;
    double tumor_radius_min = 2.0;
    double tumor_radius_max = 8.0;

    bool operator==(const PhantomSection&) const = default;
};

struct ExperimentConfig {
    PhantomSection phantom;
    CommitteeConfig committee;
    TrainSection train;
    std::string ensemble_mode = "awe"; // awe | majority | mean | single:<i> | topk:<k>
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_dir = "runs/exp";

    bool operator==(const ExperimentConfig&) const = default;

    PhantomSpec phantom_spec(std::uint64_t seed) const;
    std::uint64_t content_hash() const;
};

ExperimentConfig parse_config(const std::string& text);
std::string render_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string case_id;
    std::string mode; // awe, majority, mean, single_<i>, topk_<k>
    std::string class_name;
    double dsc = 0.0;
    std::optional<double> msd;
    std::optional<double> mcd;
    std::optional<double> auc;
};

struct FoldRunResult {
    int fold_id = 0;
    std::vector<int> train_cases;
    std::vector<int> test_cases;
    std::vector<int> ranking; // learners best-first by validation mean DSC
    std::vector<MetricRow> rows;
    std::vector<std::string> checkpoint_paths;
};

/// Build the window list a config implies: the 9-spec committee, or the single
/// full-range window when the committee is disabled.
std::vector<WindowSpec> windows_for_config(const ExperimentConfig& cfg,
                                           const PhantomDataset& ds,
                                           const std::vector<int>& train_cases,
                                           WindowCommittee* committee_out = nullptr);

/// Train on the four training folds, evaluate every ensemble mode on the
/// held-out fold, write checkpoints and CSVs under out_dir.
FoldRunResult run_fold(const ExperimentConfig& cfg, const PhantomDataset& ds, int fold_id,
                       std::uint64_t seed, const std::string& out_dir);

void write_metric_rows_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_rows_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Ablation (Table-2-style rows) and framework analysis
// ---------------------------------------------------------------------------

struct AblationResult {
    std::vector<std::string> row_names; // base, mcgan, mwc_majority, awe
    // per seed, per row: mean DSC per foreground class (kidney..artery)
    std::vector<std::array<std::array<double, 4>, 4>> per_seed;
    std::array<std::array<double, 4>, 4> seed_mean{};

    double row_mean(int row, int seed_index = -1) const;
};

/// Config for one ablation row; differs from cfg only in committee.enabled,
/// train.lambda, and ensemble_mode.
ExperimentConfig ablation_row_config(const ExperimentConfig& cfg, const std::string& row);

AblationResult ablation_suite(const ExperimentConfig& cfg, const std::string& out_dir);
std::string render_ablation_table(const AblationResult& r);

/// 9x4 matrix of per-learner per-structure mean DSC from single_<i> rows.
std::array<std::array<double, 4>, 9> learner_heatmap(const std::vector<MetricRow>& rows);

struct TopkPoint {
    int k;
    std::array<double, 4> class_dsc;
    double mean_dsc;
};

/// Mean DSC of topk_<k> rows for k = 1..9.
std::vector<TopkPoint> topk_curve(const std::vector<MetricRow>& rows);

void write_heatmap_csv(const std::string& path, const std::array<std::array<double, 4>, 9>& m);
void write_topk_csv(const std::string& path, const std::vector<TopkPoint>& pts);

} // namespace enmc
