#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

#include <voxpost/error.hpp>
#include <voxpost/volume.hpp>

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace voxpost {

namespace nifti {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

enum Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

// Byte offsets of the fields we touch.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t magic = 344;
} // namespace off

namespace detail {

template <class T>
T byteswap_value(T v) noexcept {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

class HeaderReader {
public:
    HeaderReader(std::span<const unsigned char> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T get(std::size_t offset) const {
        T v;
        std::memcpy(&v, bytes_.data() + offset, sizeof(T));
        return swap_ ? byteswap_value(v) : v;
    }

private:
    std::span<const unsigned char> bytes_;
    bool swap_;
};

template <class T>
void put(std::vector<unsigned char>& out, std::size_t offset, T v) {
    std::memcpy(out.data() + offset, &v, sizeof(T));
}

inline bool is_gzip(std::span<const unsigned char> bytes) noexcept {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline std::vector<unsigned char> gunzip(std::span<const unsigned char> in) {
    std::vector<unsigned char> out;
    z_stream s{};
    if (inflateInit2(&s, 15 + 32) != Z_OK) throw Error(ErrorKind::IoFailure, "inflateInit2 failed");
    s.next_in = const_cast<Bytef*>(in.data());
    s.avail_in = static_cast<uInt>(in.size());
    std::array<unsigned char, 1 << 16> chunk;
    int rc = Z_OK;
    for (;;) {
        s.next_out = chunk.data();
        s.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&s, Z_NO_FLUSH);
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - s.avail_out));
        if (rc == Z_STREAM_END) {
            // Concatenated gzip members are legal.
            if (s.avail_in == 0) break;
            inflateReset(&s);
            continue;
        }
        if (rc != Z_OK) {
            inflateEnd(&s);
            throw Error(ErrorKind::IoFailure, "corrupt gzip stream");
        }
        if (s.avail_in == 0 && s.avail_out != 0) {
            inflateEnd(&s);
            throw Error(ErrorKind::IoFailure, "truncated gzip stream");
        }
    }
    inflateEnd(&s);
    return out;
}

inline std::vector<unsigned char> gzip(std::span<const unsigned char> in) {
    z_stream s{};
    // windowBits 15+16 selects the gzip wrapper; zlib writes mtime 0, so output is reproducible.
    // Level 1: volumes are large and mostly float noise, higher levels cost seconds for little gain.
    if (deflateInit2(&s, Z_BEST_SPEED, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw Error(ErrorKind::IoFailure, "deflateInit2 failed");
    std::vector<unsigned char> out(deflateBound(&s, static_cast<uLong>(in.size())) + 64);
    s.next_in = const_cast<Bytef*>(in.data());
    s.avail_in = static_cast<uInt>(in.size());
    s.next_out = out.data();
    s.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&s, Z_FINISH);
    if (rc != Z_STREAM_END) {
        deflateEnd(&s);
        throw Error(ErrorKind::IoFailure, "deflate failed");
    }
    out.resize(s.total_out);
    deflateEnd(&s);
    return out;
}

inline Affine quaternion_affine(const HeaderReader& h, const std::array<double, 3>& spacing) {
    const double b = h.get<float>(off::quatern_b);
    const double c = h.get<float>(off::quatern_b + 4);
    const double d = h.get<float>(off::quatern_b + 8);
    double a = 1.0 - (b * b + c * c + d * d);
    a = a < 1e-7 ? 0.0 : std::sqrt(a);
    const double qfac = h.get<float>(off::pixdim) < 0.0f ? -1.0 : 1.0;
    const double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
        {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
        {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
    };
    const double scale[3] = {spacing[0], spacing[1], qfac * spacing[2]};
    Affine m{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * scale[j];
        m[i][3] = h.get<float>(off::qoffset_x + 4 * i);
    }
    m[3][3] = 1.0;
    return m;
}

template <class T>
void decode_payload(std::span<const unsigned char> raw, bool swap, double slope, double inter,
                    std::vector<double>& out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
        if (swap) v = byteswap_value(v);
        out[i] = static_cast<double>(v) * slope + inter;
    }
}

} // namespace detail

/// Decodes a NIfTI-1 byte image (gzip-wrapped or plain).
inline Volume decode(std::span<const unsigned char> file_bytes) {
    std::vector<unsigned char> inflated;
    std::span<const unsigned char> bytes = file_bytes;
    if (detail::is_gzip(bytes)) {
        inflated = detail::gunzip(bytes);
        bytes = inflated;
    }
    if (bytes.size() < kHeaderSize) throw Error(ErrorKind::MalformedHeader, "file shorter than 348-byte header");

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    bool swap = false;
    if (sizeof_hdr != 348) {
        if (detail::byteswap_value(sizeof_hdr) != 348)
            throw Error(ErrorKind::MalformedHeader, "sizeof_hdr is " + std::to_string(sizeof_hdr));
        swap = true;
    }
    if (std::memcmp(bytes.data() + off::magic, "n+1\0", 4) != 0)
        throw Error(ErrorKind::MalformedHeader, "magic is not n+1 (only single-file NIfTI-1 is supported)");

    const detail::HeaderReader h(bytes, swap);
    const auto ndim = h.get<std::int16_t>(off::dim);
    if (ndim < 1 || ndim > 7) throw Error(ErrorKind::MalformedHeader, "dim[0] out of range: " + std::to_string(ndim));
    if (ndim < 3) throw Error(ErrorKind::DimensionMismatch, "expected a 3D volume, dim[0]=" + std::to_string(ndim));
    for (int i = 4; i <= ndim; ++i) {
        if (h.get<std::int16_t>(off::dim + 2 * i) != 1)
            throw Error(ErrorKind::DimensionMismatch, "dimension " + std::to_string(i) + " is not singleton");
    }

    Volume v;
    std::array<std::size_t, 3> n{};
    for (int i = 0; i < 3; ++i) {
        const auto d = h.get<std::int16_t>(off::dim + 2 * (i + 1));
        if (d <= 0) throw Error(ErrorKind::MalformedHeader, "non-positive dim[" + std::to_string(i + 1) + "]");
        n[i] = static_cast<std::size_t>(d);
        const double s = h.get<float>(off::pixdim + 4 * (i + 1));
        if (!(s > 0.0) || !std::isfinite(s))
            throw Error(ErrorKind::MalformedHeader, "non-positive pixdim[" + std::to_string(i + 1) + "]");
        v.spacing[i] = s;
    }
    v.dims = {n[0], n[1], n[2]};

    const auto dtype = h.get<std::int16_t>(off::datatype);
    std::size_t elem = 0;
    switch (dtype) {
    case kUint8: elem = 1; v.source_dtype = SourceDtype::U8; break;
    case kInt16: elem = 2; v.source_dtype = SourceDtype::I16; break;
    case kInt32: elem = 4; v.source_dtype = SourceDtype::I32; break;
    case kFloat32: elem = 4; v.source_dtype = SourceDtype::F32; break;
    case kFloat64: elem = 8; v.source_dtype = SourceDtype::F64; break;
    default: throw Error(ErrorKind::UnsupportedDatatype, "datatype code " + std::to_string(dtype));
    }

    const double vox_offset = h.get<float>(off::vox_offset);
    if (!(vox_offset >= static_cast<double>(kHeaderSize)) || vox_offset != std::floor(vox_offset))
        throw Error(ErrorKind::MalformedHeader, "bad vox_offset");
    const auto start = static_cast<std::size_t>(vox_offset);
    const std::size_t payload = v.dims.count() * elem;
    if (bytes.size() < start + payload) throw Error(ErrorKind::MalformedHeader, "voxel payload truncated");

    double slope = h.get<float>(off::scl_slope);
    double inter = h.get<float>(off::scl_inter);
    if (slope == 0.0 || !std::isfinite(slope)) {
        slope = 1.0;
        inter = 0.0;
    }
    if (!std::isfinite(inter)) inter = 0.0;

    v.data.resize(v.dims.count());
    const auto raw = bytes.subspan(start, payload);
    switch (dtype) {
    case kUint8: detail::decode_payload<std::uint8_t>(raw, swap, slope, inter, v.data); break;
    case kInt16: detail::decode_payload<std::int16_t>(raw, swap, slope, inter, v.data); break;
    case kInt32: detail::decode_payload<std::int32_t>(raw, swap, slope, inter, v.data); break;
    case kFloat32: detail::decode_payload<float>(raw, swap, slope, inter, v.data); break;
    case kFloat64: detail::decode_payload<double>(raw, swap, slope, inter, v.data); break;
    }
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (!std::isfinite(v.data[i]))
            throw Error(ErrorKind::NonFiniteVoxel, "voxel " + std::to_string(i) + " is not finite");
    }

    if (h.get<std::int16_t>(off::sform_code) > 0) {
        Affine a{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) a[r][c] = h.get<float>(off::srow_x + 16 * r + 4 * c);
        a[3][3] = 1.0;
        v.affine = a;
    } else if (h.get<std::int16_t>(off::qform_code) > 0) {
        v.affine = detail::quaternion_affine(h, v.spacing);
    } else {
        v.affine = diagonal_affine(v.spacing);
    }
    return v;
}

/// Encodes as float32 NIfTI-1 with the sform taken from the volume's affine.
inline std::vector<unsigned char> encode(const Volume& v, bool compress) {
    if (v.data.size() != v.dims.count())
        throw Error(ErrorKind::DimensionMismatch, "payload length does not match dims");
    for (int i = 0; i < 3; ++i) {
        if (v.dims[i] == 0 || v.dims[i] > 32767)
            throw Error(ErrorKind::DimensionMismatch, "dimension not representable in NIfTI-1");
        if (!(v.spacing[i] > 0.0)) throw Error(ErrorKind::InvalidArgument, "spacing must be positive");
    }

    std::vector<unsigned char> out(kDataOffset + 4 * v.data.size(), 0);
    using detail::put;
    put<std::int32_t>(out, off::sizeof_hdr, 348);
    put<std::int16_t>(out, off::dim, 3);
    for (int i = 0; i < 3; ++i) put<std::int16_t>(out, off::dim + 2 * (i + 1), static_cast<std::int16_t>(v.dims[i]));
    for (int i = 4; i < 8; ++i) put<std::int16_t>(out, off::dim + 2 * i, 1);
    put<std::int16_t>(out, off::datatype, kFloat32);
    put<std::int16_t>(out, off::bitpix, 32);
    put<float>(out, off::pixdim, 1.0f);
    for (int i = 0; i < 3; ++i) put<float>(out, off::pixdim + 4 * (i + 1), static_cast<float>(v.spacing[i]));
    for (int i = 4; i < 8; ++i) put<float>(out, off::pixdim + 4 * i, 1.0f);
    put<float>(out, off::vox_offset, static_cast<float>(kDataOffset));
    put<float>(out, off::scl_slope, 1.0f);
    put<float>(out, off::scl_inter, 0.0f);
    out[off::xyzt_units] = 2; // mm
    constexpr char descrip[] = "voxpost";
    std::memcpy(out.data() + off::descrip, descrip, sizeof(descrip) - 1);
    put<std::int16_t>(out, off::qform_code, 0);
    put<std::int16_t>(out, off::sform_code, 1);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) put<float>(out, off::srow_x + 16 * r + 4 * c, static_cast<float>(v.affine[r][c]));
    std::memcpy(out.data() + off::magic, "n+1\0", 4);

    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const auto f = static_cast<float>(v.data[i]);
        if (!std::isfinite(f)) throw Error(ErrorKind::NonFiniteVoxel, "voxel " + std::to_string(i) + " not representable as float32");
        put<float>(out, kDataOffset + 4 * i, f);
    }
    return compress ? detail::gzip(out) : out;
}

} // namespace nifti

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

inline Volume read_volume(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return nifti::decode(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.message());
    }
}

inline void write_volume(const Volume& v, const std::filesystem::path& path, bool compress) {
    write_file_bytes(path, nifti::encode(v, compress));
}

/// Compression is inferred from a trailing ".gz".
inline void write_volume(const Volume& v, const std::filesystem::path& path) {
    write_volume(v, path, path.extension() == ".gz");
}

/// `<dir>/<stem>.nii.gz`, falling back to `<dir>/<stem>.nii`; empty when neither exists.
inline std::filesystem::path find_nifti(const std::filesystem::path& dir, const std::string& stem) {
    for (const char* ext : {".nii.gz", ".nii"}) {
        auto p = dir / (stem + ext);
        if (std::filesystem::is_regular_file(p)) return p;
    }
    return {};
}

inline Mask read_mask(const std::filesystem::path& path) { return to_mask(read_volume(path)); }

/// Mask as a 0/1 volume on the geometry of `like`, for writing.
inline Volume mask_volume(const Mask& m, const Volume& like) {
    check_congruent(like, m);
    Volume v = like.like();
    for (std::size_t i = 0; i < m.size(); ++i) v.data[i] = m.data[i];
    return v;
}

} // namespace voxpost
