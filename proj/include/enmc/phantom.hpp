#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enmc/volgrid.hpp"

namespace enmc {

/// Synthetic CTA-like renal phantom: low kidney/tumor contrast, tree-like
/// artery, ball-like tumor straddling the kidney boundary.
struct PhantomSpec {
    Dims dims{32, 32, 32};
    Spacing spacing{1.f, 1.f, 1.f};
    std::uint64_t seed = 0;
    // raw intensity means per tissue, indexed by class id
    std::array<double, 5> intensity_means{1040.0, 1080.0, 1060.0, 1150.0, 1330.0};
    double noise_sigma = 15.0;
    double tumor_radius_min = 2.0;
    double tumor_radius_max = 8.0;
    int artery_branches_min = 2;
    int artery_branches_max = 5;
    int vein_tubes_min = 1;
    int vein_tubes_max = 2;

    void validate() const;
    std::uint64_t content_hash() const;
};

struct PhantomCase {
    Volume image;
    LabelVolume labels;
    std::uint64_t case_seed = 0;
    std::uint64_t spec_hash = 0;
};

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed);

struct PhantomDataset {
    std::vector<PhantomCase> cases;
    std::vector<int> fold; // fold id per case, index modulo 5
};

PhantomDataset generate_dataset(const PhantomSpec& spec, int n_cases, std::uint64_t seed);

/// |mean difference| / pooled std for each ordered tissue pair; zero-variance
/// pairs are reported with the capped sentinel 1e9.
struct ContrastReport {
    // separation[a][b] for class pair (a<b)
    std::array<std::array<double, 5>, 5> separation{};
};

ContrastReport contrast_report(const PhantomCase& c);

/// Case files plus a manifest CSV (case_id, seed, fold) under out_dir.
void write_dataset(const PhantomDataset& ds, const std::string& out_dir);

} // namespace enmc
