#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "enmc/errors.hpp"

namespace enmc {

struct Dims {
    int nx = 0, ny = 0, nz = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * ny * nz;
    }
    std::size_t index(int x, int y, int z) const {
        // x-fastest linear order
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) +
                                               static_cast<std::size_t>(ny) * z);
    }
    bool operator==(const Dims&) const = default;
};

struct Spacing {
    float sx = 1.f, sy = 1.f, sz = 1.f;
    bool operator==(const Spacing&) const = default;
};

/// Dense 3D scalar grid, x-fastest linear order.
struct Volume {
    Dims dims;
    Spacing spacing;
    std::vector<float> data;

    Volume() = default;
    Volume(Dims d, Spacing s, float fill = 0.f);

    float& at(int x, int y, int z) { return data[dims.index(x, y, z)]; }
    float at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }

    void validate() const; // throws DomainError on broken invariants
};

/// Dense 3D class-index grid over {0=background,1=kidney,2=tumor,3=vein,4=artery}.
struct LabelVolume {
    static constexpr int kNumClasses = 5;

    Dims dims;
    Spacing spacing;
    std::vector<std::uint8_t> data;

    LabelVolume() = default;
    LabelVolume(Dims d, Spacing s, std::uint8_t fill = 0);

    std::uint8_t& at(int x, int y, int z) { return data[dims.index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return data[dims.index(x, y, z)]; }

    void validate() const;
};

/// Five per-class probability channels over a common grid.
struct SoftSegmentation {
    Dims dims;
    Spacing spacing;
    std::array<Volume, LabelVolume::kNumClasses> channels;

    SoftSegmentation() = default;
    SoftSegmentation(Dims d, Spacing s);

    void validate(float sum_tol = 1e-4f) const;
};

Volume extract_class_mask(const LabelVolume& labels, int class_id);

LabelVolume hardmax(const SoftSegmentation& seg);

// .env container, see docs/format notes in README. Bit-exact round trips.
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);
void write_labels(const LabelVolume& v, const std::string& path);
LabelVolume read_labels(const std::string& path);

} // namespace enmc
