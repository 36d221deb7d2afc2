#include "enmc/volgrid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace enmc {

namespace {

constexpr char kMagic[4] = {'E', 'N', 'M', 'C'};
constexpr std::uint16_t kFormatVersion = 1;

void check_dims(const Dims& d) {
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0)
        throw DomainError("volume dims must be positive");
}

void check_spacing(const Spacing& s) {
    if (!(s.sx > 0.f && s.sy > 0.f && s.sz > 0.f))
        throw DomainError("voxel spacing must be positive");
}

template <class T>
void write_le(std::ostream& os, T v) {
    // host is little-endian on every supported target
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("truncated header in .env file");
    return v;
}

struct EnvHeader {
    std::uint8_t dtype = 0;
    Dims dims;
    Spacing spacing;
};

void write_env_header(std::ostream& os, std::uint8_t dtype, const Dims& d, const Spacing& s) {
    os.write(kMagic, 4);
    write_le<std::uint16_t>(os, kFormatVersion);
    write_le<std::uint8_t>(os, dtype);
    write_le<std::uint8_t>(os, 0); // reserved
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.nx));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.ny));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d.nz));
    write_le<float>(os, s.sx);
    write_le<float>(os, s.sy);
    write_le<float>(os, s.sz);
}

EnvHeader read_env_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("bad magic in " + path + " (expected ENMC)");
    auto version = read_le<std::uint16_t>(is);
    if (version != kFormatVersion)
        throw ParseError("unsupported .env version " + std::to_string(version));
    EnvHeader h;
    h.dtype = read_le<std::uint8_t>(is);
    (void)read_le<std::uint8_t>(is); // reserved
    h.dims.nx = static_cast<int>(read_le<std::uint32_t>(is));
    h.dims.ny = static_cast<int>(read_le<std::uint32_t>(is));
    h.dims.nz = static_cast<int>(read_le<std::uint32_t>(is));
    h.spacing.sx = read_le<float>(is);
    h.spacing.sy = read_le<float>(is);
    h.spacing.sz = read_le<float>(is);
    if (h.dims.nx <= 0 || h.dims.ny <= 0 || h.dims.nz <= 0)
        throw ParseError("non-positive dims in " + path);
    return h;
}

} // namespace

Volume::Volume(Dims d, Spacing s, float fill) : dims(d), spacing(s) {
    check_dims(d);
    check_spacing(s);
    data.assign(d.voxels(), fill);
}

void Volume::validate() const {
    check_dims(dims);
    check_spacing(spacing);
    if (data.size() != dims.voxels())
        throw DomainError("volume data length does not match dims");
    for (float v : data)
        if (!std::isfinite(v)) throw DomainError("volume contains non-finite value");
}

LabelVolume::LabelVolume(Dims d, Spacing s, std::uint8_t fill) : dims(d), spacing(s) {
    check_dims(d);
    check_spacing(s);
    data.assign(d.voxels(), fill);
}

void LabelVolume::validate() const {
    check_dims(dims);
    check_spacing(spacing);
    if (data.size() != dims.voxels())
        throw DomainError("label data length does not match dims");
    for (std::uint8_t v : data)
        if (v >= kNumClasses) throw DomainError("label value out of class range");
}

SoftSegmentation::SoftSegmentation(Dims d, Spacing s) : dims(d), spacing(s) {
    for (auto& c : channels) c = Volume(d, s, 0.f);
}

void SoftSegmentation::validate(float sum_tol) const {
    for (const auto& c : channels) {
        if (!(c.dims == dims)) throw DomainError("segmentation channel dims mismatch");
        c.validate();
    }
    const std::size_t n = dims.voxels();
    for (std::size_t i = 0; i < n; ++i) {
        float sum = 0.f;
        for (const auto& c : channels) {
            float p = c.data[i];
            if (p < 0.f || p > 1.f) throw DomainError("probability outside [0,1]");
            sum += p;
        }
        if (std::fabs(sum - 1.f) > sum_tol)
            throw DomainError("channel probabilities do not sum to 1");
    }
}

Volume extract_class_mask(const LabelVolume& labels, int class_id) {
    if (class_id < 0 || class_id >= LabelVolume::kNumClasses)
        throw DomainError("class_id " + std::to_string(class_id) + " outside {0..4}");
    Volume out(labels.dims, labels.spacing);
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        out.data[i] = labels.data[i] == class_id ? 1.f : 0.f;
    return out;
}

LabelVolume hardmax(const SoftSegmentation& seg) {
    LabelVolume out(seg.dims, seg.spacing);
    const std::size_t n = seg.dims.voxels();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        float best_p = seg.channels[0].data[i];
        for (int c = 1; c < LabelVolume::kNumClasses; ++c) {
            float p = seg.channels[c].data[i];
            if (p > best_p) { // ties keep the lowest class index
                best_p = p;
                best = c;
            }
        }
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

void write_volume(const Volume& v, const std::string& path) {
    v.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_env_header(os, 0, v.dims, v.spacing);
    os.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (!os) throw IoError("short write to " + path);
}

Volume read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    EnvHeader h = read_env_header(is, path);
    if (h.dtype != 0)
        throw ParseError("dtype mismatch in " + path + ": expected f32 volume");
    Volume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.data.resize(h.dims.voxels());
    is.read(reinterpret_cast<char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != v.data.size() * sizeof(float))
        throw ParseError("truncated payload in " + path);
    v.validate();
    return v;
}

void write_labels(const LabelVolume& v, const std::string& path) {
    v.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_env_header(os, 1, v.dims, v.spacing);
    os.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size()));
    if (!os) throw IoError("short write to " + path);
}

LabelVolume read_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    EnvHeader h = read_env_header(is, path);
    if (h.dtype != 1)
        throw ParseError("dtype mismatch in " + path + ": expected u8 labels");
    LabelVolume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.data.resize(h.dims.voxels());
    is.read(reinterpret_cast<char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size()));
    if (static_cast<std::size_t>(is.gcount()) != v.data.size())
        throw ParseError("truncated payload in " + path);
    v.validate();
    return v;
}

} // namespace enmc
