#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "muval/errors.hpp"

namespace muval {

// A 3D scalar field indexed (i,j,k): i over depth (transverse slice), j over
// height, k over width. Voxels are stored row-major as 32-bit floats, the
// same layout the RVOL file format uses.
class Volume {
public:
    Volume() = default;
    Volume(int d, int h, int w)
        : d_(d), h_(h), w_(w), voxels_(static_cast<std::size_t>(d) * h * w, 0.0f) {
        if (d <= 0 || h <= 0 || w <= 0) throw DimensionError("volume extents must be positive");
    }
    Volume(int d, int h, int w, std::vector<float> voxels) : Volume(d, h, w) {
        if (voxels.size() != voxels_.size()) throw DimensionError("volume payload size mismatch");
        voxels_ = std::move(voxels);
    }

    int depth() const { return d_; }
    int height() const { return h_; }
    int width() const { return w_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(voxels_.size()); }

    float& at(int i, int j, int k) { return voxels_[idx(i, j, k)]; }
    float at(int i, int j, int k) const { return voxels_[idx(i, j, k)]; }
    float& flat(std::int64_t i) { return voxels_[static_cast<std::size_t>(i)]; }
    float flat(std::int64_t i) const { return voxels_[static_cast<std::size_t>(i)]; }
    const std::vector<float>& voxels() const { return voxels_; }
    std::vector<float>& voxels() { return voxels_; }

    bool operator==(const Volume& o) const {
        return d_ == o.d_ && h_ == o.h_ && w_ == o.w_ && voxels_ == o.voxels_;
    }

private:
    std::size_t idx(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * h_ + j) * w_ + k;
    }
    int d_ = 0, h_ = 0, w_ = 0;
    std::vector<float> voxels_;
};

// A labeled volume. Label 1 means R0 (no residual disease), 0 means non-R0.
struct Sample {
    Volume volume;
    int label = 0;
};

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32le(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

inline void write_f32le(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32le(os, bits);
}

inline bool read_f32le(std::istream& is, float& f) {
    std::uint32_t bits;
    if (!read_u32le(is, bits)) return false;
    std::memcpy(&f, &bits, 4);
    return true;
}

}  // namespace detail

inline constexpr unsigned char kRvolMagic[6] = {'R', 'V', 'O', 'L', 0x00, 0x01};

// RVOL: magic, three u32 little-endian extents (d,h,w), then d*h*w
// little-endian f32 voxels in (i,j,k) row-major order. Round trips bit-exactly.
inline void write_volume(const Volume& v, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(reinterpret_cast<const char*>(kRvolMagic), 6);
    detail::write_u32le(os, static_cast<std::uint32_t>(v.depth()));
    detail::write_u32le(os, static_cast<std::uint32_t>(v.height()));
    detail::write_u32le(os, static_cast<std::uint32_t>(v.width()));
    for (std::int64_t i = 0; i < v.numel(); ++i) detail::write_f32le(os, v.flat(i));
    if (!os) throw FormatError("write failed: " + path);
}

inline Volume read_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    unsigned char magic[6];
    if (!is.read(reinterpret_cast<char*>(magic), 6) || std::memcmp(magic, kRvolMagic, 6) != 0)
        throw FormatError("bad RVOL magic in " + path);
    std::uint32_t d, h, w;
    if (!detail::read_u32le(is, d) || !detail::read_u32le(is, h) || !detail::read_u32le(is, w))
        throw FormatError("truncated RVOL header in " + path);
    if (d == 0 || h == 0 || w == 0 || static_cast<std::uint64_t>(d) * h * w > (1ull << 31))
        throw FormatError("invalid RVOL extents in " + path);
    Volume v(static_cast<int>(d), static_cast<int>(h), static_cast<int>(w));
    for (std::int64_t i = 0; i < v.numel(); ++i)
        if (!detail::read_f32le(is, v.flat(i))) throw FormatError("truncated RVOL payload in " + path);
    return v;
}

struct ManifestEntry {
    std::string path;
    int label = 0;
};

// CSV manifest, two columns `path,label`, no header, UTF-8. Order preserved.
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open manifest: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t comma = line.rfind(',');
        if (comma == std::string::npos)
            throw ParseError("manifest " + path + " line " + std::to_string(line_no) +
                             ": expected `path,label`");
        std::string label_tok = line.substr(comma + 1);
        while (!label_tok.empty() && (label_tok.front() == ' ' || label_tok.front() == '\t'))
            label_tok.erase(label_tok.begin());
        while (!label_tok.empty() && (label_tok.back() == ' ' || label_tok.back() == '\t'))
            label_tok.pop_back();
        if (label_tok != "0" && label_tok != "1")
            throw ParseError("manifest " + path + " line " + std::to_string(line_no) +
                             ": label must be 0 or 1, got `" + label_tok + "`");
        entries.push_back({line.substr(0, comma), label_tok == "1" ? 1 : 0});
    }
    return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open manifest for writing: " + path);
    for (const auto& e : entries) os << e.path << "," << e.label << "\n";
    if (!os) throw FormatError("manifest write failed: " + path);
}

}  // namespace muval
