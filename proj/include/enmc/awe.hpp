#pragma once

#include <array>
#include <vector>

#include "enmc/volgrid.hpp"

namespace enmc {

/// Per-learner soft segmentations plus the discriminator scores feeding fusion.
struct EnsembleBundle {
    std::vector<SoftSegmentation> segs;                       // aligned dims
    std::vector<std::array<double, 5>> scores;                // scores[i][n] in (0,1)

    void validate() const;
};

/// Column-normalized weight matrix: for each class n, sum_i w[i][n] = 1.
struct FusionWeights {
    std::vector<std::array<double, 5>> w;
};

FusionWeights normalize_scores(const std::vector<std::array<double, 5>>& scores);

/// Per class n, fused channel = sum_i w[i][n] * seg_i channel n, then
/// voxelwise renormalization so the result is a valid SoftSegmentation.
SoftSegmentation awe_fuse(const EnsembleBundle& bundle);

/// Plain channel-wise mean of the segs (uniform-score fusion baseline).
SoftSegmentation mean_fuse(const std::vector<SoftSegmentation>& segs);

LabelVolume majority_vote(const std::vector<SoftSegmentation>& segs);

/// AWE fusion restricted to the top-k learners of the supplied ranking
/// (best first); weights renormalized over the subset.
SoftSegmentation rank_and_fuse_topk(const EnsembleBundle& bundle,
                                    const std::vector<int>& ranking, int k);

void write_scores_csv(const std::string& path, const EnsembleBundle& bundle,
                      const FusionWeights& weights);

} // namespace enmc
