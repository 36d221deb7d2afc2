#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enmc/volgrid.hpp"

namespace enmc {

struct WindowSpec {
    double center = 0.0;
    double width = 1.0;
};

/// Three centers x three widths, specs in row-major order (center outer).
struct WindowCommittee {
    std::array<double, 3> centers{};
    std::array<double, 3> widths{};
    // Verbatim decimal strings; serialization reproduces these byte-for-byte.
    std::array<std::string, 3> center_strs{};
    std::array<std::string, 3> width_strs{};
    std::uint64_t seed = 0;
    bool derived = false;

    static constexpr int kSize = 9;

    WindowSpec spec(int i) const;

    static WindowCommittee from_values(const std::array<double, 3>& centers,
                                       const std::array<double, 3>& widths,
                                       std::uint64_t seed, bool derived);
};

/// Lloyd's algorithm over scalar intensities with k-means++ seeding.
/// Returns cluster means sorted ascending; deterministic given seed.
std::vector<double> kmeans_intensities(const std::vector<float>& samples, int c,
                                       std::uint64_t seed, int max_iter = 100);

WindowCommittee derive_committee(const std::vector<const Volume*>& volumes,
                                 const std::vector<const LabelVolume*>& labels,
                                 int cluster_count, const std::array<double, 3>& widths,
                                 std::uint64_t seed);

Volume apply_window(const Volume& x, const WindowSpec& spec);

std::vector<Volume> windowed_stack(const Volume& x, const WindowCommittee& committee);

void write_committee(const WindowCommittee& c, const std::string& path);
WindowCommittee read_committee(const std::string& path);

} // namespace enmc
