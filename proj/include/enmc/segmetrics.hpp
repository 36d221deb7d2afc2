#pragma once

#include <optional>
#include <string>
#include <vector>

#include "enmc/volgrid.hpp"

namespace enmc {

/// Foreground indicator over a grid; the per-class evaluation view.
struct BinaryMask {
    Dims dims;
    Spacing spacing;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(Dims d, Spacing s) : dims(d), spacing(s), data(d.voxels(), 0) {}

    std::uint8_t at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }
    void set(int x, int y, int z, bool v) { data[dims.index(x, y, z)] = v ? 1 : 0; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }
};

BinaryMask mask_from_labels(const LabelVolume& labels, int class_id);

double dice(const BinaryMask& a, const BinaryMask& b);

/// Foreground voxels with at least one 6-neighbor outside the foreground
/// (out-of-bounds counts as background).
BinaryMask surface_voxels(const BinaryMask& m);

/// Exact squared Euclidean distance transform to the mask's foreground set,
/// in voxel units. Distances are +inf (max double) if the mask is empty.
std::vector<double> squared_distance_transform(const BinaryMask& m);

/// Symmetric mean Euclidean distance between the two masks' surface voxel
/// sets, voxel units. Throws UndefinedMetricError if either mask is empty.
double mean_surface_distance(const BinaryMask& a, const BinaryMask& b);

/// Topology-preserving thinning: iteratively removes simple points
/// (26-connectivity foreground / 6-connectivity background), keeping curve
/// endpoints, until a fixed point.
BinaryMask skeletonize(const BinaryMask& m);

double mean_centerline_distance(const BinaryMask& pred, const BinaryMask& truth);

int count_components_26(const BinaryMask& m);

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

struct RocCurve {
    std::vector<RocPoint> points; // one per threshold, in input threshold order
    double auc = 0.0;
};

RocCurve roc_curve(const Volume& prob, const BinaryMask& truth,
                   const std::vector<double>& thresholds);

struct ClassMetrics {
    std::string class_name;
    double dsc = 0.0;
    std::optional<double> msd;
    std::optional<double> mcd;
    std::optional<double> auc;
};

struct MetricsReport {
    std::string case_id;
    std::vector<ClassMetrics> per_class; // kidney, tumor, vein, artery
};

/// DSC/MSD for every foreground class, MCD for the artery, AUC per class
/// when the soft segmentation is supplied. Undefined metrics stay missing.
MetricsReport evaluate_case(const std::string& case_id, const LabelVolume& pred,
                            const LabelVolume& truth, const SoftSegmentation* soft = nullptr);

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& reports);

} // namespace enmc
