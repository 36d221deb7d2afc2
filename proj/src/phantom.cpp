#include "enmc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace enmc {

void PhantomSpec::validate() const {
    if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0)
        throw ConfigError("phantom dims must be positive");
    if (dims.nx % 4 || dims.ny % 4 || dims.nz % 4)
        throw ConfigError("phantom dims must be divisible by 4 (network stride)");
    for (double m : intensity_means)
        if (m < 0.0 || m > 4095.0) throw ConfigError("intensity mean outside [0,4095]");
    if (noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
    if (tumor_radius_min > tumor_radius_max || tumor_radius_min <= 0.0)
        throw ConfigError("empty tumor radius range");
    if (artery_branches_min > artery_branches_max || artery_branches_min < 1)
        throw ConfigError("empty artery branch range");
    if (vein_tubes_min > vein_tubes_max || vein_tubes_min < 1)
        throw ConfigError("empty vein tube range");
}

std::uint64_t PhantomSpec::content_hash() const {
    std::ostringstream os;
    os << dims.nx << ',' << dims.ny << ',' << dims.nz << ',' << spacing.sx << ',' << spacing.sy
       << ',' << spacing.sz << ',' << seed;
    for (double m : intensity_means) os << ',' << m;
    os << ',' << noise_sigma << ',' << tumor_radius_min << ',' << tumor_radius_max << ','
       << artery_branches_min << ',' << artery_branches_max << ',' << vein_tubes_min << ','
       << vein_tubes_max;
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (char ch : os.str()) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

struct Vec3 {
    double x, y, z;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double k) const { return {x * k, y * k, z * k}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{1, 0, 0};
    }
};

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Vec3{n(rng), n(rng), n(rng)}.normalized();
}

void paint_capsule(LabelVolume& labels, const Vec3& a, const Vec3& b, double r,
                   std::uint8_t cls) {
    const Dims& d = labels.dims;
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r)));
    int x1 = std::min(d.nx - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r)));
    int y1 = std::min(d.ny - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r)));
    int z0 = std::max(0, static_cast<int>(std::floor(std::min(a.z, b.z) - r)));
    int z1 = std::min(d.nz - 1, static_cast<int>(std::ceil(std::max(a.z, b.z) + r)));
    Vec3 ab = b - a;
    double len2 = ab.dot(ab);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
                Vec3 c = a + ab * t;
                if ((p - c).norm() <= r) labels.at(x, y, z) = cls;
            }
}

void paint_ellipsoid(LabelVolume& labels, const Vec3& c, const Vec3& semi, std::uint8_t cls) {
    const Dims& d = labels.dims;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                double dx = (x - c.x) / semi.x, dy = (y - c.y) / semi.y, dz = (z - c.z) / semi.z;
                if (dx * dx + dy * dy + dz * dz <= 1.0) labels.at(x, y, z) = cls;
            }
}

void paint_sphere(LabelVolume& labels, const Vec3& c, double r, std::uint8_t cls) {
    paint_capsule(labels, c, c, r, cls);
}

Vec3 clamp_to_volume(const Vec3& p, const Dims& d) {
    return {std::clamp(p.x, 0.0, static_cast<double>(d.nx - 1)),
            std::clamp(p.y, 0.0, static_cast<double>(d.ny - 1)),
            std::clamp(p.z, 0.0, static_cast<double>(d.nz - 1))};
}

bool build_labels(const PhantomSpec& spec, std::mt19937_64& rng, LabelVolume& labels,
                  Vec3& artery_root_out) {
    const Dims& d = spec.dims;
    labels = LabelVolume(d, spec.spacing, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // kidney: random axis-aligned ellipsoid near the center
    Vec3 center{d.nx * (0.45 + 0.1 * u01(rng)), d.ny * (0.45 + 0.1 * u01(rng)),
                d.nz * (0.45 + 0.1 * u01(rng))};
    Vec3 semi{d.nx * (0.25 + 0.15 * u01(rng)), d.ny * (0.25 + 0.15 * u01(rng)),
              d.nz * (0.25 + 0.15 * u01(rng))};
    if (center.x - semi.x < 0 || center.x + semi.x > d.nx - 1 || center.y - semi.y < 0 ||
        center.y + semi.y > d.ny - 1 || center.z - semi.z < 0 || center.z + semi.z > d.nz - 1)
        return false;
    paint_ellipsoid(labels, center, semi, 1);

    // tumor: sphere centered on the kidney boundary, straddling it
    double radius = spec.tumor_radius_min +
                    (spec.tumor_radius_max - spec.tumor_radius_min) * u01(rng);
    Vec3 dir = random_unit(rng);
    Vec3 tumor_c{center.x + dir.x * semi.x, center.y + dir.y * semi.y,
                 center.z + dir.z * semi.z};
    if (tumor_c.x - radius < 0 || tumor_c.x + radius > d.nx - 1 || tumor_c.y - radius < 0 ||
        tumor_c.y + radius > d.ny - 1 || tumor_c.z - radius < 0 ||
        tumor_c.z + radius > d.nz - 1)
        return false;
    paint_sphere(labels, tumor_c, radius, 2);

    // artery: branching tube tree rooted at a volume face, heading for the kidney
    std::uniform_int_distribution<int> face_pick(0, 5);
    int face = face_pick(rng);
    Vec3 root{d.nx * u01(rng), d.ny * u01(rng), d.nz * u01(rng)};
    if (face == 0) root.x = 0;
    if (face == 1) root.x = d.nx - 1;
    if (face == 2) root.y = 0;
    if (face == 3) root.y = d.ny - 1;
    if (face == 4) root.z = 0;
    if (face == 5) root.z = d.nz - 1;
    artery_root_out = root;
    std::uniform_int_distribution<int> branch_pick(spec.artery_branches_min,
                                                   spec.artery_branches_max);
    int branches = branch_pick(rng);
    std::uniform_real_distribution<double> r_art(1.0, 2.0);
    std::vector<std::pair<Vec3, Vec3>> segments;
    // trunk: root to kidney center with jittered waypoints
    {
        Vec3 p = root;
        const int steps = 3;
        for (int s = 1; s <= steps; ++s) {
            Vec3 target = root + (center - root) * (static_cast<double>(s) / steps);
            Vec3 q = clamp_to_volume(target + random_unit(rng) * (d.nx * 0.05), d);
            if (s == steps) q = center;
            segments.emplace_back(p, q);
            p = q;
        }
    }
    for (int b = 1; b < branches; ++b) {
        std::uniform_int_distribution<std::size_t> seg_pick(0, segments.size() - 1);
        const auto& base = segments[seg_pick(rng)];
        Vec3 start = base.first + (base.second - base.first) * u01(rng);
        Vec3 grow = ((base.second - base.first).normalized() + random_unit(rng) * 0.9).normalized();
        Vec3 p = start;
        int sub_steps = 2;
        for (int s = 0; s < sub_steps; ++s) {
            Vec3 q = clamp_to_volume(p + grow * (d.nx * 0.15), d);
            segments.emplace_back(p, q);
            p = q;
            grow = (grow + random_unit(rng) * 0.4).normalized();
        }
    }
    double artery_r = r_art(rng);

    // veins: smooth tubes near the artery root, painted before the artery
    std::uniform_int_distribution<int> vein_pick(spec.vein_tubes_min, spec.vein_tubes_max);
    int veins = vein_pick(rng);
    std::uniform_real_distribution<double> r_vein(2.0, 3.0);
    for (int v = 0; v < veins; ++v) {
        Vec3 p = clamp_to_volume(root + random_unit(rng) * 3.0, d);
        Vec3 dirv = (center - p).normalized();
        double rv = r_vein(rng);
        for (int s = 0; s < 3; ++s) {
            Vec3 q = clamp_to_volume(p + dirv * (d.nx * 0.18), d);
            paint_capsule(labels, p, q, rv, 3);
            p = q;
            dirv = (dirv + random_unit(rng) * 0.35).normalized();
        }
    }
    for (const auto& [a, b] : segments) paint_capsule(labels, a, b, artery_r, 4);

    // overlap precedence artery > vein > tumor > kidney holds by paint order
    for (int c = 1; c < LabelVolume::kNumClasses; ++c) {
        bool present = false;
        for (auto v : labels.data)
            if (v == c) { present = true; break; }
        if (!present) return false;
    }
    return true;
}

} // namespace

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed) {
    spec.validate();
    std::mt19937_64 rng(splitmix64(case_seed ^ splitmix64(spec.seed)));
    PhantomCase out;
    out.case_seed = case_seed;
    out.spec_hash = spec.content_hash();

    Vec3 root{};
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt)
        ok = build_labels(spec, rng, out.labels, root);
    if (!ok)
        throw GenerationError("phantom geometry rejected after 100 resampling attempts");

    out.image = Volume(spec.dims, spec.spacing);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (std::size_t i = 0; i < out.image.data.size(); ++i) {
        double v = spec.intensity_means[out.labels.data[i]];
        if (spec.noise_sigma > 0.0) v += noise(rng);
        out.image.data[i] = static_cast<float>(std::clamp(v, 0.0, 4095.0));
    }
    return out;
}

PhantomDataset generate_dataset(const PhantomSpec& spec, int n_cases, std::uint64_t seed) {
    if (n_cases < 5) throw ConfigError("dataset needs at least 5 cases for 5-fold CV");
    PhantomSpec s = spec;
    s.seed = seed;
    PhantomDataset ds;
    for (int i = 0; i < n_cases; ++i) {
        ds.cases.push_back(generate_case(s, splitmix64(seed) + static_cast<std::uint64_t>(i)));
        ds.fold.push_back(i % 5);
    }
    return ds;
}

ContrastReport contrast_report(const PhantomCase& c) {
    std::array<double, 5> sum{}, sum2{};
    std::array<std::size_t, 5> n{};
    for (std::size_t i = 0; i < c.image.data.size(); ++i) {
        int cls = c.labels.data[i];
        double v = c.image.data[i];
        sum[cls] += v;
        sum2[cls] += v * v;
        n[cls]++;
    }
    std::array<double, 5> mean{}, var{};
    for (int k = 0; k < 5; ++k) {
        if (n[k] == 0) continue;
        mean[k] = sum[k] / static_cast<double>(n[k]);
        var[k] = sum2[k] / static_cast<double>(n[k]) - mean[k] * mean[k];
        var[k] = std::max(var[k], 0.0);
    }
    ContrastReport rep;
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            if (a == b || n[a] == 0 || n[b] == 0) continue;
            double pooled = std::sqrt((var[a] * n[a] + var[b] * n[b]) /
                                      static_cast<double>(n[a] + n[b]));
            double gap = std::fabs(mean[a] - mean[b]);
            rep.separation[a][b] = pooled > 0.0 ? std::min(gap / pooled, 1e9) : 1e9;
        }
    return rep;
}

void write_dataset(const PhantomDataset& ds, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream manifest(out_dir + "/manifest.csv");
    if (!manifest) throw IoError("cannot open manifest in " + out_dir);
    manifest << "case_id,seed,fold\n";
    for (std::size_t i = 0; i < ds.cases.size(); ++i) {
        std::string id = "case_" + std::to_string(i);
        write_volume(ds.cases[i].image, out_dir + "/" + id + "_image.env");
        write_labels(ds.cases[i].labels, out_dir + "/" + id + "_labels.env");
        manifest << id << ',' << ds.cases[i].case_seed << ',' << ds.fold[i] << '\n';
    }
    if (!manifest) throw IoError("short write to manifest in " + out_dir);
}

} // namespace enmc
