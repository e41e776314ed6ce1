#pragma once

// Test-only helpers: synthetic volumes, a hand-rolled NIfTI-1 writer that does not share
// code with the library, and on-disk fixture datasets.

#include <voxpost/volume.hpp>

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxpost::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "voxpost-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline Volume random_volume(Dims d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Volume v(d);
    for (double& x : v.data) x = u(rng);
    return v;
}

inline Mask random_mask(Dims d, std::uint64_t seed, double p = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p);
    Mask m(d);
    for (auto& x : m.data) x = b(rng) ? 1 : 0;
    return m;
}

inline Mask sphere_mask(Dims d, double radius) {
    Mask m(d);
    const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0, cz = (d.nz - 1) / 2.0;
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz);
                m.data[x + d.nx * (y + d.ny * z)] = r2 <= radius * radius ? 1 : 0;
            }
    return m;
}

/// Smooth, seeded phantom in roughly [0.15, 0.85]: a few low-frequency cosines plus a blob.
inline Volume smooth_phantom(Dims d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    struct Wave {
        double fx, fy, fz, ph;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i) waves.push_back({freq(rng), freq(rng), freq(rng), phase(rng)});
    Volume v(d);
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const double u = double(x) / d.nx, w = double(y) / d.ny, t = double(z) / d.nz;
                double s = 0.0;
                for (const auto& wv : waves) s += std::cos(6.283185307179586 * (wv.fx * u + wv.fy * w + wv.fz * t) + wv.ph);
                v.at(x, y, z) = 0.5 + 0.085 * s;
            }
    return v;
}

/// Phantom with voxel-scale texture so blurring visibly changes it.
inline Volume textured_phantom(Dims d, std::uint64_t seed) {
    Volume v = smooth_phantom(d, seed);
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) v.at(x, y, z) += 0.08 * (((x + y + z) % 2) ? 1.0 : -1.0);
    return v;
}

inline Volume add_noise(const Volume& base, const Mask& m, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    Volume out = base;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (m.data[i]) out.data[i] += n(rng);
    return out;
}

// ---------------------------------------------------------------------------
// Reference NIfTI-1 writer, laid out field by field from the format's C struct.

struct RefNiftiOptions {
    std::int16_t datatype = 16;
    std::int16_t dim0 = 3;
    std::vector<std::int16_t> extra_dims; // dim[4..]
    float spacing[3] = {1.0f, 1.0f, 1.0f};
    float slope = 1.0f;
    float inter = 0.0f;
    std::int16_t sform_code = 0;
    std::int16_t qform_code = 0;
    float srow[3][4] = {};
    std::int32_t sizeof_hdr = 348;
    const char* magic = "n+1";
    bool gzip = false;
};

inline void write_reference_nifti(const fs::path& path, Dims d, const std::vector<double>& stored,
                                  const RefNiftiOptions& o = {}) {
    struct __attribute__((packed)) Header {
        std::int32_t sizeof_hdr;
        char data_type[10];
        char db_name[18];
        std::int32_t extents;
        std::int16_t session_error;
        char regular;
        char dim_info;
        std::int16_t dim[8];
        float intent_p1, intent_p2, intent_p3;
        std::int16_t intent_code, datatype, bitpix, slice_start;
        float pixdim[8];
        float vox_offset, scl_slope, scl_inter;
        std::int16_t slice_end;
        char slice_code, xyzt_units;
        float cal_max, cal_min, slice_duration, toffset;
        std::int32_t glmax, glmin;
        char descrip[80];
        char aux_file[24];
        std::int16_t qform_code, sform_code;
        float quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z;
        float srow_x[4], srow_y[4], srow_z[4];
        char intent_name[16];
        char magic[4];
    };
    static_assert(sizeof(Header) == 348);
    Header h{};
    h.sizeof_hdr = o.sizeof_hdr;
    h.dim[0] = o.dim0;
    h.dim[1] = static_cast<std::int16_t>(d.nx);
    h.dim[2] = static_cast<std::int16_t>(d.ny);
    h.dim[3] = static_cast<std::int16_t>(d.nz);
    for (std::size_t i = 0; i < o.extra_dims.size(); ++i) h.dim[4 + i] = o.extra_dims[i];
    h.datatype = o.datatype;
    h.bitpix = o.datatype == 2 ? 8 : o.datatype == 4 ? 16 : o.datatype == 64 ? 64 : 32;
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = o.spacing[i];
    h.vox_offset = 352.0f;
    h.scl_slope = o.slope;
    h.scl_inter = o.inter;
    h.qform_code = o.qform_code;
    h.sform_code = o.sform_code;
    std::memcpy(h.srow_x, o.srow[0], sizeof h.srow_x);
    std::memcpy(h.srow_y, o.srow[1], sizeof h.srow_y);
    std::memcpy(h.srow_z, o.srow[2], sizeof h.srow_z);
    std::memcpy(h.magic, o.magic, std::strlen(o.magic) + 1);

    std::vector<unsigned char> bytes(352, 0);
    std::memcpy(bytes.data(), &h, sizeof h);
    auto append = [&](const auto& value) {
        const auto* p = reinterpret_cast<const unsigned char*>(&value);
        bytes.insert(bytes.end(), p, p + sizeof value);
    };
    for (double x : stored) {
        switch (o.datatype) {
        case 2: append(static_cast<std::uint8_t>(x)); break;
        case 4: append(static_cast<std::int16_t>(x)); break;
        case 8: append(static_cast<std::int32_t>(x)); break;
        case 16: append(static_cast<float>(x)); break;
        case 64: append(x); break;
        default: append(static_cast<float>(x)); break; // unsupported codes still get a payload
        }
    }
    if (o.gzip) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw std::runtime_error("gzopen failed");
        gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        gzclose(f);
    } else {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
}

inline std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// On-disk pipeline fixture: <root>/cases/<id>/<id>-t1n-voided.nii.gz, <id>-mask.nii.gz,
// predictions in <root>/rank1, <root>/rank2, ground truth in <root>/gt.

struct PipelineFixture {
    fs::path input_dir, rank1, rank2, gt_dir;
    std::vector<std::string> ids;
};

inline Volume voided_from(const Volume& gt, const Mask& m) {
    Volume v = gt;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (m.data[i]) v.data[i] = 0.0;
    return v;
}

/// Writes volumes through `write` so the fixture can use the library's writer without
/// this header depending on it.
template <class Writer>
PipelineFixture make_pipeline_fixture(const fs::path& root, int n_cases, Dims d, std::uint64_t seed, double noise,
                                      Writer&& write) {
    PipelineFixture f{root / "cases", root / "rank1", root / "rank2", root / "gt", {}};
    for (const auto& p : {f.input_dir, f.rank1, f.rank2, f.gt_dir}) fs::create_directories(p);
    for (int c = 0; c < n_cases; ++c) {
        const std::string id = "case-" + std::to_string(c);
        f.ids.push_back(id);
        const Volume gt = smooth_phantom(d, seed * 1000 + c);
        const Mask m = sphere_mask(d, d.min() / 4.0);
        fs::create_directories(f.input_dir / id);
        write(voided_from(gt, m), f.input_dir / id / (id + "-t1n-voided.nii.gz"));
        Volume mv(d);
        for (std::size_t i = 0; i < mv.size(); ++i) mv.data[i] = m.data[i];
        write(mv, f.input_dir / id / (id + "-mask.nii.gz"));
        write(add_noise(gt, m, noise, seed * 1000 + c + 101), f.rank1 / (id + ".nii.gz"));
        write(add_noise(gt, m, noise, seed * 1000 + c + 202), f.rank2 / (id + ".nii.gz"));
        write(gt, f.gt_dir / (id + "-t1n.nii.gz"));
    }
    return f;
}

} // namespace voxpost::testing
