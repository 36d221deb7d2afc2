#include "enmc/awe.hpp"

#include <algorithm>
#include <fstream>

namespace enmc {

void EnsembleBundle::validate() const {
    if (segs.empty()) throw DomainError("bundle has no segmentations");
    if (segs.size() != scores.size())
        throw DomainError("bundle scores/segs count mismatch");
    for (const auto& s : segs)
        if (!(s.dims == segs[0].dims)) throw ShapeError("bundle segs dims mismatch");
    for (const auto& row : scores)
        for (double v : row)
            if (!(v > 0.0 && v < 1.0)) throw DomainError("bundle score outside (0,1)");
}

FusionWeights normalize_scores(const std::vector<std::array<double, 5>>& scores) {
    if (scores.empty()) throw DomainError("normalize_scores: empty score matrix");
    for (const auto& row : scores)
        for (double v : row)
            if (!(v > 0.0)) throw DomainError("normalize_scores: non-positive score");
    FusionWeights out;
    out.w.assign(scores.size(), {});
    for (int n = 0; n < 5; ++n) {
        double total = 0.0;
        for (const auto& row : scores) total += row[n];
        for (std::size_t i = 0; i < scores.size(); ++i) out.w[i][n] = scores[i][n] / total;
    }
    return out;
}

namespace {

SoftSegmentation weighted_fuse(const std::vector<SoftSegmentation>& segs,
                               const std::vector<std::array<double, 5>>& weights) {
    const Dims dims = segs[0].dims;
    SoftSegmentation out(dims, segs[0].spacing);
    const std::size_t n_vox = dims.voxels();
    for (int c = 0; c < LabelVolume::kNumClasses; ++c)
        for (std::size_t i = 0; i < segs.size(); ++i) {
            const float w = static_cast<float>(weights[i][c]);
            const auto& src = segs[i].channels[c].data;
            auto& dst = out.channels[c].data;
            for (std::size_t v = 0; v < n_vox; ++v) dst[v] += w * src[v];
        }
    // per-class weights each sum to 1, but mixing different columns can leave
    // voxel sums slightly off 1; renormalize per voxel
    for (std::size_t v = 0; v < n_vox; ++v) {
        float sum = 0.f;
        for (auto& ch : out.channels) sum += ch.data[v];
        if (sum > 0.f)
            for (auto& ch : out.channels) ch.data[v] /= sum;
    }
    return out;
}

} // namespace

SoftSegmentation awe_fuse(const EnsembleBundle& bundle) {
    bundle.validate();
    return weighted_fuse(bundle.segs, normalize_scores(bundle.scores).w);
}

SoftSegmentation mean_fuse(const std::vector<SoftSegmentation>& segs) {
    if (segs.empty()) throw DomainError("mean_fuse: no segmentations");
    std::vector<std::array<double, 5>> uniform(segs.size());
    for (auto& row : uniform) row.fill(1.0 / static_cast<double>(segs.size()));
    return weighted_fuse(segs, uniform);
}

LabelVolume majority_vote(const std::vector<SoftSegmentation>& segs) {
    if (segs.empty()) throw DomainError("majority_vote: no segmentations");
    for (const auto& s : segs)
        if (!(s.dims == segs[0].dims)) throw ShapeError("majority_vote: dims mismatch");
    std::vector<LabelVolume> votes;
    votes.reserve(segs.size());
    for (const auto& s : segs) votes.push_back(hardmax(s));
    LabelVolume out(segs[0].dims, segs[0].spacing);
    const std::size_t n_vox = out.dims.voxels();
    for (std::size_t v = 0; v < n_vox; ++v) {
        std::array<int, LabelVolume::kNumClasses> count{};
        for (const auto& lv : votes) count[lv.data[v]]++;
        int best = 0;
        for (int c = 1; c < LabelVolume::kNumClasses; ++c)
            if (count[c] > count[best]) best = c; // ties keep the lowest class
        out.data[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

SoftSegmentation rank_and_fuse_topk(const EnsembleBundle& bundle,
                                    const std::vector<int>& ranking, int k) {
    bundle.validate();
    if (ranking.size() != bundle.segs.size())
        throw DomainError("rank_and_fuse_topk: ranking length mismatch");
    if (k < 1 || k > static_cast<int>(bundle.segs.size()))
        throw DomainError("rank_and_fuse_topk: k out of range");
    EnsembleBundle subset;
    for (int r = 0; r < k; ++r) {
        int i = ranking[r];
        if (i < 0 || i >= static_cast<int>(bundle.segs.size()))
            throw DomainError("rank_and_fuse_topk: ranking index out of range");
        subset.segs.push_back(bundle.segs[i]);
        subset.scores.push_back(bundle.scores[i]);
    }
    return awe_fuse(subset);
}

void write_scores_csv(const std::string& path, const EnsembleBundle& bundle,
                      const FusionWeights& weights) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "learner_id,class_id,score,weight\n";
    for (std::size_t i = 0; i < bundle.scores.size(); ++i)
        for (int n = 0; n < 5; ++n)
            os << i << ',' << n << ',' << bundle.scores[i][n] << ',' << weights.w[i][n] << '\n';
    if (!os) throw IoError("short write to " + path);
}

} // namespace enmc
