#include "enmc/winlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace enmc {

WindowSpec WindowCommittee::spec(int i) const {
    if (i < 0 || i >= kSize) throw DomainError("committee spec index out of range");
    return {centers[i / 3], widths[i % 3]};
}

namespace {

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

WindowCommittee WindowCommittee::from_values(const std::array<double, 3>& centers,
                                             const std::array<double, 3>& widths,
                                             std::uint64_t seed, bool derived) {
    WindowCommittee c;
    c.centers = centers;
    c.widths = widths;
    c.seed = seed;
    c.derived = derived;
    for (int i = 0; i < 3; ++i) {
        if (!(widths[i] > 0.0)) throw DomainError("window width must be positive");
        if (!std::isfinite(centers[i])) throw DomainError("window center must be finite");
        c.center_strs[i] = format_value(centers[i]);
        c.width_strs[i] = format_value(widths[i]);
    }
    return c;
}

std::vector<double> kmeans_intensities(const std::vector<float>& samples, int c,
                                       std::uint64_t seed, int max_iter) {
    if (samples.empty()) throw DegenerateInputError("k-means: no samples");
    if (c < 1) throw DomainError("k-means: cluster count must be >= 1");
    std::set<float> distinct(samples.begin(), samples.end());
    if (static_cast<int>(distinct.size()) < c)
        throw DegenerateInputError("k-means: fewer distinct values than clusters");

    const std::size_t n = samples.size();
    std::mt19937_64 rng(seed);
    std::vector<double> means;
    means.reserve(c);

    // k-means++ seeding
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    means.push_back(samples[pick(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(means.size()) < c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double m : means) {
                double d = samples[i] - m;
                best = std::min(best, d * d);
            }
            d2[i] = best;
            total += best;
        }
        std::size_t chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target) { chosen = i; break; }
            }
        } else {
            chosen = pick(rng); // all points coincide with centers; unreachable given the distinct check
        }
        means.push_back(samples[chosen]);
    }

    // Lloyd iterations until assignments stabilize
    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int k = 0; k < c; ++k) {
                double d = samples[i] - means[k];
                d *= d;
                if (d < best_d) { best_d = d; best = k; }
            }
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        if (!changed) break;
        std::vector<double> sum(c, 0.0);
        std::vector<std::size_t> count(c, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[assign[i]] += samples[i];
            count[assign[i]]++;
        }
        for (int k = 0; k < c; ++k)
            if (count[k] > 0) means[k] = sum[k] / static_cast<double>(count[k]);
    }

    std::sort(means.begin(), means.end());
    return means;
}

namespace {

// Foreground labels dilated by a Euclidean ball of the given radius.
std::vector<std::uint8_t> dilated_foreground(const LabelVolume& labels, int radius) {
    const Dims& d = labels.dims;
    std::vector<std::uint8_t> out(d.voxels(), 0);
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -radius; dz <= radius; ++dz)
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy + dz * dz <= radius * radius)
                    offsets.push_back({dx, dy, dz});
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (labels.at(x, y, z) == 0) continue;
                for (const auto& o : offsets) {
                    int px = x + o[0], py = y + o[1], pz = z + o[2];
                    if (px < 0 || py < 0 || pz < 0 || px >= d.nx || py >= d.ny || pz >= d.nz)
                        continue;
                    out[d.index(px, py, pz)] = 1;
                }
            }
    return out;
}

} // namespace

WindowCommittee derive_committee(const std::vector<const Volume*>& volumes,
                                 const std::vector<const LabelVolume*>& labels,
                                 int cluster_count, const std::array<double, 3>& widths,
                                 std::uint64_t seed) {
    if (volumes.empty()) throw DegenerateInputError("derive_committee: no volumes");
    if (volumes.size() != labels.size())
        throw DomainError("derive_committee: volumes and labels not aligned");
    if (cluster_count < 3) throw DomainError("derive_committee: need at least 3 clusters");

    std::vector<float> pooled;         // intensities in the dilated foreground region
    std::vector<float> strict_fg;      // intensities at strictly-foreground voxels
    for (std::size_t v = 0; v < volumes.size(); ++v) {
        const Volume& img = *volumes[v];
        const LabelVolume& lab = *labels[v];
        if (!(img.dims == lab.dims))
            throw DomainError("derive_committee: volume/label dims mismatch");
        auto region = dilated_foreground(lab, 3);
        for (std::size_t i = 0; i < region.size(); ++i) {
            if (region[i]) pooled.push_back(img.data[i]);
            if (lab.data[i] != 0) strict_fg.push_back(img.data[i]);
        }
    }
    if (strict_fg.empty()) throw DegenerateInputError("derive_committee: empty foreground");

    std::vector<double> means = kmeans_intensities(pooled, cluster_count, seed);

    // Pick the 3 clusters holding the largest fraction of foreground voxels.
    std::vector<std::size_t> fg_count(means.size(), 0);
    for (float v : strict_fg) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < means.size(); ++k) {
            double d = v - means[k];
            d *= d;
            if (d < best_d) { best_d = d; best = static_cast<int>(k); }
        }
        fg_count[best]++;
    }
    std::vector<int> order(means.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fg_count[a] > fg_count[b]; });
    std::array<double, 3> centers{means[order[0]], means[order[1]], means[order[2]]};
    std::sort(centers.begin(), centers.end());

    return WindowCommittee::from_values(centers, widths, seed, /*derived=*/true);
}

Volume apply_window(const Volume& x, const WindowSpec& spec) {
    if (!(spec.width > 0.0)) throw DomainError("window width must be positive");
    const double lo = spec.center - spec.width / 2.0;
    const double hi = spec.center + spec.width / 2.0;
    const double inv_w = 1.0 / spec.width;
    Volume out(x.dims, x.spacing);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        double v = std::clamp(static_cast<double>(x.data[i]), lo, hi);
        out.data[i] = static_cast<float>(std::clamp((v - lo) * inv_w, 0.0, 1.0));
    }
    return out;
}

std::vector<Volume> windowed_stack(const Volume& x, const WindowCommittee& committee) {
    std::vector<Volume> out;
    out.reserve(WindowCommittee::kSize);
    for (int i = 0; i < WindowCommittee::kSize; ++i)
        out.push_back(apply_window(x, committee.spec(i)));
    return out;
}

void write_committee(const WindowCommittee& c, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "centers = " << c.center_strs[0] << ' ' << c.center_strs[1] << ' '
       << c.center_strs[2] << '\n';
    os << "widths = " << c.width_strs[0] << ' ' << c.width_strs[1] << ' '
       << c.width_strs[2] << '\n';
    os << "seed = " << c.seed << '\n';
    os << "provenance = " << (c.derived ? "derived" : "fixed") << '\n';
    if (!os) throw IoError("short write to " + path);
}

WindowCommittee read_committee(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    WindowCommittee c;
    bool saw_centers = false, saw_widths = false, saw_seed = false, saw_prov = false;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (eq != "=") throw ParseError("committee file: expected 'key = value' in: " + line);
        if (key == "centers") {
            for (int i = 0; i < 3; ++i) {
                if (!(ls >> c.center_strs[i]))
                    throw ParseError("committee file: need 3 centers");
                c.centers[i] = std::stod(c.center_strs[i]);
            }
            saw_centers = true;
        } else if (key == "widths") {
            for (int i = 0; i < 3; ++i) {
                if (!(ls >> c.width_strs[i]))
                    throw ParseError("committee file: need 3 widths");
                c.widths[i] = std::stod(c.width_strs[i]);
                if (!(c.widths[i] > 0.0)) throw ParseError("committee file: width must be > 0");
            }
            saw_widths = true;
        } else if (key == "seed") {
            ls >> c.seed;
            saw_seed = true;
        } else if (key == "provenance") {
            std::string p;
            ls >> p;
            if (p != "derived" && p != "fixed")
                throw ParseError("committee file: provenance must be derived or fixed");
            c.derived = p == "derived";
            saw_prov = true;
        } else {
            throw ParseError("committee file: unknown key '" + key + "'");
        }
    }
    if (!saw_centers || !saw_widths || !saw_seed || !saw_prov)
        throw ParseError("committee file: missing required keys");
    return c;
}

} // namespace enmc
