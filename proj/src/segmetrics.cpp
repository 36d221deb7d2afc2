#include "enmc/segmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>

namespace enmc {

namespace {

constexpr double kInf = std::numeric_limits<double>::max();

void check_dims(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (!(a.dims == b.dims)) throw ShapeError(std::string(op) + ": mask dims mismatch");
}

} // namespace

std::size_t BinaryMask::count() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
}

BinaryMask mask_from_labels(const LabelVolume& labels, int class_id) {
    if (class_id < 0 || class_id >= LabelVolume::kNumClasses)
        throw DomainError("mask_from_labels: class_id outside {0..4}");
    BinaryMask m(labels.dims, labels.spacing);
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        m.data[i] = labels.data[i] == class_id ? 1 : 0;
    return m;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    check_dims(a, b, "dice");
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        na += a.data[i] ? 1 : 0;
        nb += b.data[i] ? 1 : 0;
        inter += (a.data[i] && b.data[i]) ? 1 : 0;
    }
    if (na + nb == 0) return 1.0; // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

BinaryMask surface_voxels(const BinaryMask& m) {
    BinaryMask out(m.dims, m.spacing);
    const Dims& d = m.dims;
    static const int face[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                   {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!m.at(x, y, z)) continue;
                bool border = false;
                for (const auto& f : face) {
                    int px = x + f[0], py = y + f[1], pz = z + f[2];
                    if (px < 0 || py < 0 || pz < 0 || px >= d.nx || py >= d.ny || pz >= d.nz ||
                        !m.at(px, py, pz)) {
                        border = true;
                        break;
                    }
                }
                if (border) out.set(x, y, z, true);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Exact squared EDT: Felzenszwalb-Huttenlocher lower envelope, separable.
// ---------------------------------------------------------------------------

namespace {

void edt_1d(const std::vector<double>& f, std::vector<double>& out) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<int> idx; // positions with finite source values
    for (int q = 0; q < n; ++q)
        if (f[q] < kInf) idx.push_back(q);
    if (idx.empty()) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    std::vector<int> v(idx.size());
    std::vector<double> z(idx.size() + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (std::size_t qi = 1; qi < idx.size(); ++qi) {
        const int q = idx[qi];
        double s;
        while (true) {
            const int p = idx[v[k]];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
                (2.0 * (q - p));
            if (s <= z[k])
                k--;
            else
                break;
        }
        k++;
        v[k] = static_cast<int>(qi);
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) k++;
        const int p = idx[v[k]];
        out[q] = static_cast<double>(q - p) * (q - p) + f[p];
    }
}

} // namespace

std::vector<double> squared_distance_transform(const BinaryMask& m) {
    const Dims& d = m.dims;
    std::vector<double> dist(d.voxels());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = m.data[i] ? 0.0 : kInf;

    std::vector<double> line, out;
    // x pass
    line.resize(d.nx);
    out.resize(d.nx);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) line[x] = dist[d.index(x, y, z)];
            edt_1d(line, out);
            for (int x = 0; x < d.nx; ++x) dist[d.index(x, y, z)] = out[x];
        }
    // y pass
    line.resize(d.ny);
    out.resize(d.ny);
    for (int z = 0; z < d.nz; ++z)
        for (int x = 0; x < d.nx; ++x) {
            for (int y = 0; y < d.ny; ++y) line[y] = dist[d.index(x, y, z)];
            edt_1d(line, out);
            for (int y = 0; y < d.ny; ++y) dist[d.index(x, y, z)] = out[y];
        }
    // z pass
    line.resize(d.nz);
    out.resize(d.nz);
    for (int y = 0; y < d.ny; ++y)
        for (int x = 0; x < d.nx; ++x) {
            for (int z = 0; z < d.nz; ++z) line[z] = dist[d.index(x, y, z)];
            edt_1d(line, out);
            for (int z = 0; z < d.nz; ++z) dist[d.index(x, y, z)] = out[z];
        }
    return dist;
}

namespace {

double directed_mean_distance(const BinaryMask& from, const std::vector<double>& sq_dist_to) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < from.data.size(); ++i) {
        if (!from.data[i]) continue;
        acc += std::sqrt(sq_dist_to[i]);
        n++;
    }
    return acc / static_cast<double>(n);
}

double symmetric_mean_distance(const BinaryMask& sa, const BinaryMask& sb) {
    auto da = squared_distance_transform(sa);
    auto db = squared_distance_transform(sb);
    return 0.5 * (directed_mean_distance(sa, db) + directed_mean_distance(sb, da));
}

} // namespace

double mean_surface_distance(const BinaryMask& a, const BinaryMask& b) {
    check_dims(a, b, "mean_surface_distance");
    if (a.empty() || b.empty())
        throw UndefinedMetricError("mean_surface_distance: empty mask");
    return symmetric_mean_distance(surface_voxels(a), surface_voxels(b));
}

// ---------------------------------------------------------------------------
// Topology-preserving thinning (26-connectivity foreground / 6 background)
// ---------------------------------------------------------------------------

namespace {

// Neighborhood geometry tables over the 3x3x3 cube, center = index 13.
struct NbhdTables {
    int offs[27][3];                  // (dx,dy,dz) per cube index
    bool adj26[27][27];               // 26-adjacency between cube cells
    bool adj6[27][27];                // 6-adjacency between cube cells
    bool is18[27];                    // edge or face neighbor of the center
    bool is6[27];                     // face neighbor of the center

    NbhdTables() {
        int i = 0;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    offs[i][0] = dx;
                    offs[i][1] = dy;
                    offs[i][2] = dz;
                    int manh = std::abs(dx) + std::abs(dy) + std::abs(dz);
                    is18[i] = manh >= 1 && manh <= 2;
                    is6[i] = manh == 1;
                    ++i;
                }
        for (int a = 0; a < 27; ++a)
            for (int b = 0; b < 27; ++b) {
                int ddx = std::abs(offs[a][0] - offs[b][0]);
                int ddy = std::abs(offs[a][1] - offs[b][1]);
                int ddz = std::abs(offs[a][2] - offs[b][2]);
                adj26[a][b] = a != b && ddx <= 1 && ddy <= 1 && ddz <= 1;
                adj6[a][b] = ddx + ddy + ddz == 1;
            }
    }
};

const NbhdTables& tables() {
    static NbhdTables t;
    return t;
}

void fill_neighborhood(const BinaryMask& m, int x, int y, int z, bool nb[27]) {
    const auto& t = tables();
    const Dims& d = m.dims;
    for (int i = 0; i < 27; ++i) {
        int px = x + t.offs[i][0], py = y + t.offs[i][1], pz = z + t.offs[i][2];
        nb[i] = px >= 0 && py >= 0 && pz >= 0 && px < d.nx && py < d.ny && pz < d.nz &&
                m.at(px, py, pz);
    }
}

// Number of 26-components among foreground cells of the neighborhood (center excluded).
int t26(const bool nb[27]) {
    const auto& t = tables();
    bool seen[27] = {};
    int comps = 0;
    for (int s = 0; s < 27; ++s) {
        if (s == 13 || !nb[s] || seen[s]) continue;
        comps++;
        int stack[27], top = 0;
        stack[top++] = s;
        seen[s] = true;
        while (top) {
            int u = stack[--top];
            for (int v = 0; v < 27; ++v)
                if (v != 13 && nb[v] && !seen[v] && t.adj26[u][v]) {
                    seen[v] = true;
                    stack[top++] = v;
                }
        }
    }
    return comps;
}

// Number of 6-components of background cells within the 18-neighborhood that
// contain a face neighbor of the center.
int t6(const bool nb[27]) {
    const auto& t = tables();
    bool seen[27] = {};
    int comps = 0;
    for (int s = 0; s < 27; ++s) {
        if (!t.is6[s] || nb[s] || seen[s]) continue;
        comps++;
        int stack[27], top = 0;
        stack[top++] = s;
        seen[s] = true;
        while (top) {
            int u = stack[--top];
            for (int v = 0; v < 27; ++v)
                if (t.is18[v] && !nb[v] && !seen[v] && t.adj6[u][v]) {
                    seen[v] = true;
                    stack[top++] = v;
                }
        }
    }
    return comps;
}

bool is_simple(const BinaryMask& m, int x, int y, int z) {
    bool nb[27];
    fill_neighborhood(m, x, y, z, nb);
    return t26(nb) == 1 && t6(nb) == 1;
}

bool is_curve_endpoint(const BinaryMask& m, int x, int y, int z) {
    bool nb[27];
    fill_neighborhood(m, x, y, z, nb);
    int fg = 0;
    for (int i = 0; i < 27; ++i)
        if (i != 13 && nb[i]) fg++;
    return fg <= 1;
}

} // namespace

BinaryMask skeletonize(const BinaryMask& m) {
    BinaryMask s = m;
    const Dims& d = s.dims;
    static const int dirs[6][3] = {{0, 0, -1}, {0, 0, 1}, {0, -1, 0},
                                   {0, 1, 0},  {-1, 0, 0}, {1, 0, 0}};
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& dir : dirs) {
            std::vector<std::array<int, 3>> candidates;
            for (int z = 0; z < d.nz; ++z)
                for (int y = 0; y < d.ny; ++y)
                    for (int x = 0; x < d.nx; ++x) {
                        if (!s.at(x, y, z)) continue;
                        int px = x + dir[0], py = y + dir[1], pz = z + dir[2];
                        bool border = px < 0 || py < 0 || pz < 0 || px >= d.nx || py >= d.ny ||
                                      pz >= d.nz || !s.at(px, py, pz);
                        if (!border) continue;
                        if (is_curve_endpoint(s, x, y, z)) continue;
                        if (!is_simple(s, x, y, z)) continue;
                        candidates.push_back({x, y, z});
                    }
            // sequential deletion with a recheck keeps topology exact
            for (const auto& c : candidates) {
                if (is_curve_endpoint(s, c[0], c[1], c[2])) continue;
                if (!is_simple(s, c[0], c[1], c[2])) continue;
                s.set(c[0], c[1], c[2], false);
                changed = true;
            }
        }
    }
    return s;
}

double mean_centerline_distance(const BinaryMask& pred, const BinaryMask& truth) {
    check_dims(pred, truth, "mean_centerline_distance");
    if (truth.empty()) throw UndefinedMetricError("mean_centerline_distance: empty truth mask");
    BinaryMask sp = skeletonize(pred);
    BinaryMask st = skeletonize(truth);
    if (sp.empty()) throw UndefinedMetricError("mean_centerline_distance: empty prediction skeleton");
    if (st.empty()) throw UndefinedMetricError("mean_centerline_distance: empty truth skeleton");
    return symmetric_mean_distance(sp, st);
}

int count_components_26(const BinaryMask& m) {
    const Dims& d = m.dims;
    std::vector<std::uint8_t> seen(d.voxels(), 0);
    int comps = 0;
    std::deque<std::array<int, 3>> queue;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!m.at(x, y, z) || seen[d.index(x, y, z)]) continue;
                comps++;
                seen[d.index(x, y, z)] = 1;
                queue.push_back({x, y, z});
                while (!queue.empty()) {
                    auto [cx, cy, cz] = queue.front();
                    queue.pop_front();
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (dx == 0 && dy == 0 && dz == 0) continue;
                                int px = cx + dx, py = cy + dy, pz = cz + dz;
                                if (px < 0 || py < 0 || pz < 0 || px >= d.nx || py >= d.ny ||
                                    pz >= d.nz)
                                    continue;
                                std::size_t i = d.index(px, py, pz);
                                if (m.data[i] && !seen[i]) {
                                    seen[i] = 1;
                                    queue.push_back({px, py, pz});
                                }
                            }
                }
            }
    return comps;
}

// ---------------------------------------------------------------------------
// ROC
// ---------------------------------------------------------------------------

RocCurve roc_curve(const Volume& prob, const BinaryMask& truth,
                   const std::vector<double>& thresholds) {
    if (!(prob.dims == truth.dims)) throw ShapeError("roc_curve: dims mismatch");
    std::size_t pos = truth.count();
    std::size_t neg = truth.data.size() - pos;
    if (pos == 0 || neg == 0)
        throw UndefinedMetricError("roc_curve: truth contains a single class");
    RocCurve out;
    for (double t : thresholds) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < prob.data.size(); ++i) {
            if (prob.data[i] >= t) {
                if (truth.data[i])
                    tp++;
                else
                    fp++;
            }
        }
        out.points.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
    }
    // trapezoid over the sorted curve with (0,0) and (1,1) appended
    std::vector<std::pair<double, double>> pts;
    pts.emplace_back(0.0, 0.0);
    for (const auto& p : out.points) pts.emplace_back(p.fpr, p.tpr);
    pts.emplace_back(1.0, 1.0);
    std::sort(pts.begin(), pts.end());
    double auc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        auc += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
    out.auc = auc;
    return out;
}

// ---------------------------------------------------------------------------
// Per-case report
// ---------------------------------------------------------------------------

MetricsReport evaluate_case(const std::string& case_id, const LabelVolume& pred,
                            const LabelVolume& truth, const SoftSegmentation* soft) {
    if (!(pred.dims == truth.dims)) throw ShapeError("evaluate_case: dims mismatch");
    static const char* names[] = {"background", "kidney", "tumor", "vein", "artery"};
    MetricsReport report;
    report.case_id = case_id;
    std::vector<double> default_thresholds;
    for (int i = 0; i <= 100; ++i) default_thresholds.push_back(1.0 - i / 100.0);
    for (int c = 1; c < LabelVolume::kNumClasses; ++c) {
        ClassMetrics m;
        m.class_name = names[c];
        BinaryMask pm = mask_from_labels(pred, c);
        BinaryMask tm = mask_from_labels(truth, c);
        m.dsc = dice(pm, tm);
        if (!pm.empty() && !tm.empty()) m.msd = mean_surface_distance(pm, tm);
        if (c == 4) {
            try {
                m.mcd = mean_centerline_distance(pm, tm);
            } catch (const UndefinedMetricError&) {
                // reported as missing
            }
        }
        if (soft) {
            try {
                m.auc = roc_curve(soft->channels[c], tm, default_thresholds).auc;
            } catch (const UndefinedMetricError&) {
            }
        }
        report.per_class.push_back(std::move(m));
    }
    return report;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& reports) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "case_id,class,dsc,msd,mcd,auc\n";
    for (const auto& r : reports)
        for (const auto& m : r.per_class) {
            os << r.case_id << ',' << m.class_name << ',' << m.dsc << ',';
            if (m.msd) os << *m.msd;
            os << ',';
            if (m.mcd) os << *m.mcd;
            os << ',';
            if (m.auc) os << *m.auc;
            os << '\n';
        }
    if (!os) throw IoError("short write to " + path);
}

} // namespace enmc
