#include <voxpost/nifti.hpp>

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <limits>
#include <numeric>
#include <random>

using namespace voxpost;
using voxpost::testing::RefNiftiOptions;
using voxpost::testing::TempDir;
using voxpost::testing::write_reference_nifti;

namespace {

std::vector<double> iota_values(std::size_t n, double start = 0.0) {
    std::vector<double> v(n);
    std::iota(v.begin(), v.end(), start);
    return v;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no voxpost::Error thrown";
    return ErrorKind::InvalidArgument;
}

} // namespace

TEST(ReadVolume, MinimalFloat32IdentityScaling) {
    TempDir tmp;
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8));
    const auto v = read_volume(tmp / "a.nii");
    EXPECT_EQ(v.dims, (Dims{2, 2, 2}));
    EXPECT_EQ(v.data, iota_values(8));
    EXPECT_EQ(v.source_dtype, SourceDtype::F32);
}

TEST(ReadVolume, AppliesSlopeAndIntercept) {
    TempDir tmp;
    RefNiftiOptions o;
    o.slope = 2.0f;
    o.inter = 1.0f;
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8), o);
    const auto v = read_volume(tmp / "a.nii");
    EXPECT_EQ(v.data, (std::vector<double>{1, 3, 5, 7, 9, 11, 13, 15}));
}

TEST(ReadVolume, ZeroSlopeMeansUnscaled) {
    TempDir tmp;
    RefNiftiOptions o;
    o.slope = 0.0f;
    o.inter = 5.0f;
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8), o);
    EXPECT_EQ(read_volume(tmp / "a.nii").data, iota_values(8));
}

TEST(ReadVolume, AllSupportedDatatypes) {
    TempDir tmp;
    const std::vector<std::pair<std::int16_t, SourceDtype>> types{
        {2, SourceDtype::U8}, {4, SourceDtype::I16}, {8, SourceDtype::I32}, {16, SourceDtype::F32}, {64, SourceDtype::F64}};
    for (const auto& [code, dtype] : types) {
        RefNiftiOptions o;
        o.datatype = code;
        write_reference_nifti(tmp / "t.nii", {3, 2, 2}, iota_values(12, 3.0), o);
        const auto v = read_volume(tmp / "t.nii");
        EXPECT_EQ(v.source_dtype, dtype) << code;
        EXPECT_EQ(v.data, iota_values(12, 3.0)) << code;
    }
}

TEST(ReadVolume, ClinicalSizedGzipFileKeepsGeometry) {
    TempDir tmp;
    const Dims d{240, 240, 155};
    std::vector<double> stored(d.count());
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> u(0, 4000);
    for (auto& x : stored) x = u(rng);
    RefNiftiOptions o;
    o.datatype = 4;
    o.spacing[0] = 0.9375f;
    o.spacing[1] = 0.9375f;
    o.spacing[2] = 1.5f;
    o.gzip = true;
    write_reference_nifti(tmp / "clinical.nii.gz", d, stored, o);

    const auto v = read_volume(tmp / "clinical.nii.gz");
    EXPECT_EQ(v.dims, d);
    EXPECT_DOUBLE_EQ(v.spacing[0], 0.9375);
    EXPECT_DOUBLE_EQ(v.spacing[1], 0.9375);
    EXPECT_DOUBLE_EQ(v.spacing[2], 1.5);
    EXPECT_EQ(v.data, stored);
    // No sform/qform: affine is the spacing diagonal.
    EXPECT_DOUBLE_EQ(v.affine[0][0], 0.9375);
    EXPECT_DOUBLE_EQ(v.affine[2][2], 1.5);
    EXPECT_DOUBLE_EQ(v.affine[0][3], 0.0);

    write_volume(v, tmp / "copy.nii.gz", true);
    const auto back = read_volume(tmp / "copy.nii.gz");
    EXPECT_EQ(back.dims, d);
    EXPECT_EQ(back.spacing, v.spacing);
    EXPECT_EQ(back.data, v.data);
}

TEST(ReadVolume, SformTakesPrecedence) {
    TempDir tmp;
    RefNiftiOptions o;
    o.sform_code = 1;
    o.qform_code = 1;
    const float rows[3][4] = {{-1, 0, 0, 90}, {0, 1, 0, -126}, {0, 0, 2, -72}};
    std::memcpy(o.srow, rows, sizeof rows);
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8), o);
    const auto v = read_volume(tmp / "a.nii");
    EXPECT_DOUBLE_EQ(v.affine[0][0], -1.0);
    EXPECT_DOUBLE_EQ(v.affine[0][3], 90.0);
    EXPECT_DOUBLE_EQ(v.affine[1][3], -126.0);
    EXPECT_DOUBLE_EQ(v.affine[2][2], 2.0);
    EXPECT_DOUBLE_EQ(v.affine[3][3], 1.0);
}

TEST(ReadVolume, IdentityQformScalesBySpacing) {
    TempDir tmp;
    RefNiftiOptions o;
    o.qform_code = 1;
    o.spacing[0] = 2.0f;
    o.spacing[1] = 3.0f;
    o.spacing[2] = 4.0f;
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8), o);
    const auto v = read_volume(tmp / "a.nii");
    EXPECT_DOUBLE_EQ(v.affine[0][0], 2.0);
    EXPECT_DOUBLE_EQ(v.affine[1][1], 3.0);
    EXPECT_DOUBLE_EQ(v.affine[2][2], 4.0);
    EXPECT_DOUBLE_EQ(v.affine[0][1], 0.0);
}

TEST(ReadVolume, TrailingSingletonDimsAccepted) {
    TempDir tmp;
    RefNiftiOptions o;
    o.dim0 = 4;
    o.extra_dims = {1};
    write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(8), o);
    EXPECT_EQ(read_volume(tmp / "a.nii").data, iota_values(8));
}

TEST(ReadVolume, Errors) {
    TempDir tmp;
    const auto values = iota_values(8);
    {
        RefNiftiOptions o;
        o.datatype = 512; // uint16
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, values, o);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::UnsupportedDatatype);
    }
    {
        RefNiftiOptions o;
        o.sizeof_hdr = 540; // NIfTI-2
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, values, o);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::MalformedHeader);
    }
    {
        RefNiftiOptions o;
        o.magic = "ni1"; // .hdr/.img pair
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, values, o);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::MalformedHeader);
    }
    {
        RefNiftiOptions o;
        o.dim0 = 4;
        o.extra_dims = {3};
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(24), o);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::DimensionMismatch);
    }
    {
        RefNiftiOptions o;
        o.dim0 = 2;
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, values, o);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::DimensionMismatch);
    }
    {
        auto bad = values;
        bad[3] = std::numeric_limits<double>::quiet_NaN();
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, bad);
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::NonFiniteVoxel);
    }
    {
        write_reference_nifti(tmp / "a.nii", {2, 2, 2}, iota_values(4)); // short payload
        EXPECT_EQ(kind_of([&] { read_volume(tmp / "a.nii"); }), ErrorKind::MalformedHeader);
    }
    EXPECT_EQ(kind_of([&] { read_volume(tmp / "missing.nii"); }), ErrorKind::IoFailure);
}

TEST(WriteVolume, Float32PayloadIsBitIdentical) {
    TempDir tmp;
    Volume v = voxpost::testing::random_volume({5, 4, 3}, 11, -100.0, 100.0);
    for (double& x : v.data) x = static_cast<float>(x);
    v.spacing = {0.5, 0.75, 2.0};
    for (bool gz : {false, true}) {
        const auto path = tmp / (gz ? "v.nii.gz" : "v.nii");
        write_volume(v, path, gz);
        const auto back = read_volume(path);
        ASSERT_EQ(back.data.size(), v.data.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            EXPECT_EQ(std::bit_cast<std::uint64_t>(back.data[i]), std::bit_cast<std::uint64_t>(v.data[i]));
        EXPECT_EQ(back.dims, v.dims);
        EXPECT_EQ(back.spacing, v.spacing);
        EXPECT_EQ(back.source_dtype, SourceDtype::F32);
    }
}

TEST(WriteVolume, DoubleIsRoundedToFloat) {
    TempDir tmp;
    Volume v({1, 1, 1}, 0.1);
    write_volume(v, tmp / "v.nii", false);
    EXPECT_EQ(read_volume(tmp / "v.nii").data[0], static_cast<double>(0.1f));
}

TEST(WriteVolume, GzipMagicAndPlainHeader) {
    TempDir tmp;
    Volume v({2, 2, 2}, 1.0);
    write_volume(v, tmp / "v.nii.gz", true);
    write_volume(v, tmp / "v.nii", false);
    const auto gz = voxpost::testing::file_bytes(tmp / "v.nii.gz");
    ASSERT_GE(gz.size(), 2u);
    EXPECT_EQ(gz[0], 0x1F);
    EXPECT_EQ(gz[1], 0x8B);
    const auto plain = voxpost::testing::file_bytes(tmp / "v.nii");
    ASSERT_EQ(plain.size(), 352u + 8 * 4);
    std::int16_t datatype, sform;
    float slope, inter;
    std::memcpy(&datatype, plain.data() + 70, 2);
    std::memcpy(&slope, plain.data() + 112, 4);
    std::memcpy(&inter, plain.data() + 116, 4);
    std::memcpy(&sform, plain.data() + 254, 2);
    EXPECT_EQ(datatype, 16);
    EXPECT_EQ(slope, 1.0f);
    EXPECT_EQ(inter, 0.0f);
    EXPECT_EQ(sform, 1);
    EXPECT_EQ(std::memcmp(plain.data() + 344, "n+1\0", 4), 0);
}

TEST(WriteVolume, AffineSurvivesViaSform) {
    TempDir tmp;
    Volume v({3, 3, 3}, 2.0);
    v.affine[0] = {-1.0, 0.0, 0.0, 90.5};
    v.affine[1] = {0.0, 1.0, 0.0, -126.25};
    write_volume(v, tmp / "v.nii", false);
    EXPECT_EQ(read_volume(tmp / "v.nii").affine, v.affine);
}

TEST(WriteVolume, RejectsNonFinite) {
    TempDir tmp;
    Volume v({2, 1, 1}, 0.0);
    v.data[1] = 1e300; // overflows float32
    EXPECT_EQ(kind_of([&] { write_volume(v, tmp / "v.nii", false); }), ErrorKind::NonFiniteVoxel);
}

TEST(WriteVolume, UnwritablePathIsIoFailure) {
    Volume v({1, 1, 1}, 0.0);
    EXPECT_EQ(kind_of([&] { write_volume(v, "/nonexistent-dir/x.nii", false); }), ErrorKind::IoFailure);
}

// Randomized small volumes: writer and reader are inverse on float32 data.
TEST(NiftiProperty, RoundTripRandomSmallVolumes) {
    TempDir tmp;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 7);
    std::uniform_real_distribution<float> sp(0.25f, 3.0f);
    for (int iter = 0; iter < 60; ++iter) {
        Volume v = voxpost::testing::random_volume({dim(rng), dim(rng), dim(rng)}, rng(), -1e4, 1e4);
        for (double& x : v.data) x = static_cast<float>(x);
        v.spacing = {sp(rng), sp(rng), sp(rng)};
        v.affine = diagonal_affine(v.spacing);
        const bool gz = iter % 2 == 0;
        const auto path = tmp / (gz ? "p.nii.gz" : "p.nii");
        write_volume(v, path, gz);
        const auto back = read_volume(path);
        ASSERT_EQ(back.dims, v.dims);
        ASSERT_EQ(back.spacing, v.spacing);
        ASSERT_EQ(back.affine, v.affine);
        ASSERT_EQ(back.data, v.data);
    }
}

TEST(ReadMask, ZeroOneInt16IsUnchanged) {
    TempDir tmp;
    RefNiftiOptions o;
    o.datatype = 4;
    const std::vector<double> bits{0, 1, 1, 0, 0, 0, 1, 1};
    write_reference_nifti(tmp / "m.nii", {2, 2, 2}, bits, o);
    const auto m = read_mask(tmp / "m.nii");
    EXPECT_FALSE(m.binarized);
    for (std::size_t i = 0; i < bits.size(); ++i) EXPECT_EQ(m.data[i], bits[i]);
}

TEST(ReadMask, FractionalValuesAreThresholded) {
    TempDir tmp;
    std::vector<double> vals{0, 0.7, 0.5, 1, 0, 0, 0, 0.2};
    write_reference_nifti(tmp / "m.nii", {2, 2, 2}, vals);
    const auto m = read_mask(tmp / "m.nii");
    EXPECT_TRUE(m.binarized);
    EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 1, 0, 1, 0, 0, 0, 0}));
}

TEST(CheckCongruent, DimensionMismatch) {
    const Volume v({2, 2, 3});
    const Mask m({2, 2, 2});
    EXPECT_EQ(kind_of([&] { check_congruent(v, m); }), ErrorKind::DimensionMismatch);
    EXPECT_NO_THROW(check_congruent(Volume({2, 2, 2}), m));
}

TEST(MirrorIndex, ReflectWithoutRepeat) {
    EXPECT_EQ(mirror_index(-1, 5), 1u);
    EXPECT_EQ(mirror_index(-2, 5), 2u);
    EXPECT_EQ(mirror_index(5, 5), 3u);
    EXPECT_EQ(mirror_index(6, 5), 2u);
    EXPECT_EQ(mirror_index(-9, 5), 1u); // beyond one reflection: period 8
    EXPECT_EQ(mirror_index(-3, 1), 0u);
}
