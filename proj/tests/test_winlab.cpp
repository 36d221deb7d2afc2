#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "enmc/phantom.hpp"
#include "enmc/winlab.hpp"

using namespace enmc;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

Volume constant_volume(Dims d, float value) {
    return Volume(d, {1.f, 1.f, 1.f}, value);
}

} // namespace

TEST_CASE("committee spec indexing: center outer, width inner") {
    auto c = WindowCommittee::from_values({100, 200, 300}, {10, 20, 30}, 0, false);
    for (int i = 0; i < 9; ++i) {
        CHECK(c.spec(i).center == doctest::Approx(100 * (i / 3 + 1)));
        CHECK(c.spec(i).width == doctest::Approx(10 * (i % 3 + 1)));
    }
    CHECK_THROWS_AS(c.spec(9), DomainError);
}

TEST_CASE("kmeans: perfectly separated clusters") {
    auto means = kmeans_intensities({0, 0, 0, 10, 10, 10}, 2, 7);
    REQUIRE(means.size() == 2);
    CHECK(means[0] == doctest::Approx(0.0));
    CHECK(means[1] == doctest::Approx(10.0));
}

TEST_CASE("kmeans: single cluster of equal samples") {
    auto means = kmeans_intensities({5, 5, 5, 5}, 1, 0);
    REQUIRE(means.size() == 1);
    CHECK(means[0] == doctest::Approx(5.0));
}

TEST_CASE("kmeans: three gaussian blobs recover blob means") {
    std::mt19937_64 rng(42);
    const double centers[3] = {1030.0, 1150.0, 1330.0};
    std::vector<float> samples;
    std::array<double, 3> blob_mean{};
    for (int b = 0; b < 3; ++b) {
        std::normal_distribution<double> dist(centers[b], 5.0);
        double acc = 0;
        for (int i = 0; i < 300; ++i) {
            double v = dist(rng);
            samples.push_back(static_cast<float>(v));
            acc += static_cast<float>(v);
        }
        blob_mean[b] = acc / 300.0;
    }
    auto means = kmeans_intensities(samples, 3, 11);
    REQUIRE(means.size() == 3);
    for (int b = 0; b < 3; ++b) CHECK(std::abs(means[b] - blob_mean[b]) < 3.0);
}

TEST_CASE("kmeans: determinism and degenerate input") {
    std::vector<float> s{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(kmeans_intensities(s, 3, 99) == kmeans_intensities(s, 3, 99));
    CHECK_THROWS_AS(kmeans_intensities({1, 1, 1, 1}, 2, 0), DegenerateInputError);
    CHECK_THROWS_AS(kmeans_intensities({}, 1, 0), DegenerateInputError);
}

TEST_CASE("apply_window: hand-derived value") {
    Volume x = constant_volume({2, 2, 2}, 1100.f);
    Volume out = apply_window(x, {1150.0825, 512.0});
    // (1100 - (1150.0825 - 256)) / 512
    for (float v : out.data) CHECK(v == doctest::Approx(0.40218261).epsilon(1e-6));
}

TEST_CASE("apply_window: center maps to 0.5, clamp saturates") {
    Volume x = constant_volume({2, 2, 2}, 1150.f);
    for (float v : apply_window(x, {1150.0, 300.0}).data) CHECK(v == doctest::Approx(0.5));
    Volume lo = constant_volume({2, 2, 2}, 900.f);
    for (float v : apply_window(lo, {1150.0, 300.0}).data) CHECK(v == 0.0f);
    Volume hi = constant_volume({2, 2, 2}, 1400.f);
    for (float v : apply_window(hi, {1150.0, 300.0}).data) CHECK(v == 1.0f);
}

TEST_CASE("apply_window: monotone in the input on 1000 random pairs") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.f, 4095.f);
    std::uniform_real_distribution<double> uc(200.0, 3800.0), uw(64.0, 2048.0);
    for (int t = 0; t < 1000; ++t) {
        float a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        WindowSpec spec{uc(rng), uw(rng)};
        Volume va = constant_volume({1, 1, 1}, a), vb = constant_volume({1, 1, 1}, b);
        float wa = apply_window(va, spec).data[0], wb = apply_window(vb, spec).data[0];
        CHECK(wa <= wb);
        CHECK(wa >= 0.0f);
        CHECK(wb <= 1.0f);
    }
}

TEST_CASE("apply_window: narrower width is pointwise steeper") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(0.f, 4095.f);
    for (int t = 0; t < 500; ++t) {
        float v = u(rng);
        Volume x = constant_volume({1, 1, 1}, v);
        double c = 1150.0;
        float narrow = apply_window(x, {c, 256.0}).data[0];
        float wide = apply_window(x, {c, 768.0}).data[0];
        CHECK(std::abs(narrow - 0.5f) >= std::abs(wide - 0.5f) - 1e-6f);
    }
}

TEST_CASE("apply_window: idempotent on windowed data via c=0.5, w=1") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<float> u(0.f, 4095.f);
    Volume x({4, 4, 4}, {1.f, 1.f, 1.f});
    for (auto& v : x.data) v = u(rng);
    Volume once = apply_window(x, {1150.0825, 512.0});
    Volume twice = apply_window(once, {0.5, 1.0});
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(twice.data[i] == doctest::Approx(once.data[i]).epsilon(1e-6));
}

TEST_CASE("windowed_stack: reference committee on constant c_0 volume") {
    auto c = WindowCommittee::from_values({1032.7834, 1150.0825, 1332.1959}, {256, 512, 768}, 0,
                                          false);
    Volume x = constant_volume({2, 2, 2}, 1032.7834f);
    auto stack = windowed_stack(x, c);
    REQUIRE(stack.size() == 9);
    for (int i = 0; i < 3; ++i)
        for (float v : stack[i].data) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.f, 4095.f);
    for (auto& v : x.data) v = u(rng);
    for (const auto& s : windowed_stack(x, c))
        for (float v : s.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
}

TEST_CASE("committee serialization reproduces decimal strings byte-for-byte") {
    WindowCommittee c;
    c.centers = {1032.7834, 1150.0825, 1332.1959};
    c.widths = {256, 512, 768};
    c.center_strs = {"1032.7834", "1150.0825", "1332.1959"};
    c.width_strs = {"256", "512", "768"};
    c.seed = 42;
    c.derived = false;
    std::string p = tmp_path("wl_committee.txt");
    write_committee(c, p);
    {
        std::ifstream is(p);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        CHECK(text.find("1032.7834") != std::string::npos);
        CHECK(text.find("1150.0825") != std::string::npos);
        CHECK(text.find("1332.1959") != std::string::npos);
    }
    WindowCommittee r = read_committee(p);
    CHECK(r.center_strs == c.center_strs);
    CHECK(r.width_strs == c.width_strs);
    CHECK(r.seed == c.seed);
    CHECK(r.derived == c.derived);
    for (int i = 0; i < 3; ++i) {
        CHECK(r.centers[i] == c.centers[i]);
        CHECK(r.widths[i] == c.widths[i]);
    }
    // a write -> read -> write cycle is byte-identical
    std::string q = tmp_path("wl_committee2.txt");
    write_committee(r, q);
    std::ifstream f1(p), f2(q);
    std::string t1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string t2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(t1 == t2);
}

TEST_CASE("committee file with unknown key is rejected") {
    std::string p = tmp_path("wl_badkey.txt");
    {
        std::ofstream os(p);
        os << "centers = 1 2 3\nwidths = 1 2 3\nseed = 0\nprovenance = fixed\nbogus = 1\n";
    }
    CHECK_THROWS_AS(read_committee(p), ParseError);
}

TEST_CASE("derive_committee recovers phantom intensity modes") {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    std::vector<PhantomCase> cases;
    std::vector<const Volume*> vols;
    std::vector<const LabelVolume*> labs;
    for (int i = 0; i < 4; ++i) cases.push_back(generate_case(spec, 100 + i));
    for (const auto& c : cases) {
        vols.push_back(&c.image);
        labs.push_back(&c.labels);
    }
    WindowCommittee com = derive_committee(vols, labs, 5, {256, 512, 768}, 17);
    CHECK(com.derived);
    CHECK(com.centers[0] < com.centers[1]);
    CHECK(com.centers[1] < com.centers[2]);

    // oracle: histogram modes of pooled foreground intensities (bin width 8)
    std::vector<int> hist(4096 / 8, 0);
    for (const auto& c : cases)
        for (std::size_t i = 0; i < c.labels.data.size(); ++i)
            if (c.labels.data[i] != 0)
                hist[static_cast<int>(std::clamp(c.image.data[i], 0.f, 4095.f)) / 8]++;
    // pick the 3 highest bins that are at least 10 bins apart
    std::vector<double> modes;
    std::vector<int> order(hist.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return hist[a] > hist[b]; });
    for (int b : order) {
        bool close = false;
        for (double m : modes)
            if (std::abs(m - (b * 8 + 4)) < 80) close = true;
        if (!close) modes.push_back(b * 8 + 4);
        if (modes.size() == 3) break;
    }
    std::sort(modes.begin(), modes.end());
    REQUIRE(modes.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(com.centers[i] - modes[i]) < 20.0);

    // determinism given the seed
    WindowCommittee again = derive_committee(vols, labs, 5, {256, 512, 768}, 17);
    CHECK(again.centers == com.centers);
}

TEST_CASE("derive_committee: foreground with 5 distinct intensities") {
    Volume v({8, 8, 8}, {1.f, 1.f, 1.f}, 0.f);
    LabelVolume l({8, 8, 8}, {1.f, 1.f, 1.f}, 0);
    const float atoms[5] = {100, 600, 1100, 1600, 2100};
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> which(0, 4);
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                v.at(x, y, z) = atoms[which(rng)];
                l.at(x, y, z) = 1; // everything foreground, dilation adds nothing
            }
    WindowCommittee com = derive_committee({&v}, {&l}, 5, {256, 512, 768}, 3);
    for (double c : com.centers) {
        bool found = false;
        for (float a : atoms)
            if (std::abs(c - a) < 1e-3) found = true;
        CHECK(found);
    }
    CHECK(com.spec(0).center == com.spec(2).center);
    CHECK(com.spec(3).center == com.spec(5).center);
}

TEST_CASE("derive_committee: empty foreground is degenerate") {
    Volume v({8, 8, 8}, {1.f, 1.f, 1.f}, 100.f);
    LabelVolume l({8, 8, 8}, {1.f, 1.f, 1.f}, 0);
    CHECK_THROWS_AS(derive_committee({&v}, {&l}, 5, {256, 512, 768}, 0),
                    DegenerateInputError);
}
