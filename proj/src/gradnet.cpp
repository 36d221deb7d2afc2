#include "enmc/gradnet.hpp"

#include <cstring>
#include <fstream>

namespace enmc::gn::detail {

namespace {

template <class T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("truncated checkpoint " + path);
    return v;
}

} // namespace

void write_ckpt_entries(const std::string& path, const std::vector<CkptEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kCkptMagic, 4);
    write_le<std::uint16_t>(os, kCkptVersion);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw IoError("checkpoint entry name too long");
        write_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
        for (int ext : e.shape) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ext));
        os.write(reinterpret_cast<const char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!os) throw IoError("short write to " + path);
}

std::vector<CkptEntry> read_ckpt_entries(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw ParseError("bad magic in " + path + " (expected ENMW)");
    auto version = read_le<std::uint16_t>(is, path);
    if (version != kCkptVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    auto count = read_le<std::uint32_t>(is, path);
    std::vector<CkptEntry> entries(count);
    for (auto& e : entries) {
        auto name_len = read_le<std::uint16_t>(is, path);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        auto rank = read_le<std::uint8_t>(is, path);
        e.shape.resize(rank);
        std::size_t n = 1;
        for (auto& ext : e.shape) {
            ext = static_cast<int>(read_le<std::uint32_t>(is, path));
            if (ext <= 0) throw ParseError("non-positive extent in " + path);
            n *= static_cast<std::size_t>(ext);
        }
        e.data.resize(n);
        is.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<std::size_t>(is.gcount()) != n * sizeof(float))
            throw ParseError("truncated checkpoint payload in " + path);
    }
    return entries;
}

} // namespace enmc::gn::detail
