#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "support.hpp"
#include "vit3d/binary_io.hpp"
#include "vit3d/error.hpp"
#include "vit3d/volume.hpp"

using namespace vit3d;
using testing::NiftiSpec;
using testing::TempDir;

TEST_SUITE("volume-io") {
  TEST_CASE("nifti float32 payload is read unchanged") {
    TempDir tmp;
    std::vector<float> payload(64);
    for (int i = 0; i < 64; ++i) payload[static_cast<std::size_t>(i)] = 0.25f * static_cast<float>(i) - 3.0f;
    NiftiSpec spec;
    spec.pixdim[0] = 1.5f;
    spec.pixdim[1] = 2.0f;
    spec.pixdim[2] = 0.5f;
    testing::write_bytes(tmp / "a.nii", testing::nifti_bytes(spec, payload.data(), payload.size() * 4));
    const auto v = read_nifti(tmp / "a.nii");
    CHECK(v.dims == Dims3{4, 4, 4});
    CHECK(v.spacing == Spacing3{1.5f, 2.0f, 0.5f});
    for (int i = 0; i < 64; ++i) CHECK(v.data[i] == payload[static_cast<std::size_t>(i)]);
    CHECK(v.at(1, 0, 0) == payload[1]);
    CHECK(v.at(0, 1, 0) == payload[4]);
    CHECK(v.at(0, 0, 1) == payload[16]);
  }

  TEST_CASE("nifti scl_slope and scl_inter rescale values") {
    TempDir tmp;
    std::vector<float> payload(64, 3.0f);
    NiftiSpec spec;
    spec.slope = 2.0f;
    spec.inter = 1.0f;
    testing::write_bytes(tmp / "a.nii", testing::nifti_bytes(spec, payload.data(), payload.size() * 4));
    const auto v = read_nifti(tmp / "a.nii");
    CHECK((v.data == 7.0f).all());
  }

  TEST_CASE("nifti integer and double datatypes convert to float") {
    TempDir tmp;
    std::vector<std::uint8_t> u8(64);
    std::vector<std::int16_t> i16(64);
    std::vector<double> f64(64);
    for (int i = 0; i < 64; ++i) {
      u8[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i * 3);
      i16[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(-500 + 17 * i);
      f64[static_cast<std::size_t>(i)] = 0.125 * i;
    }
    NiftiSpec s;
    s.datatype = 2;
    s.bitpix = 8;
    testing::write_bytes(tmp / "u8.nii", testing::nifti_bytes(s, u8.data(), 64));
    s.datatype = 4;
    s.bitpix = 16;
    testing::write_bytes(tmp / "i16.nii", testing::nifti_bytes(s, i16.data(), 128));
    s.datatype = 64;
    s.bitpix = 64;
    testing::write_bytes(tmp / "f64.nii", testing::nifti_bytes(s, f64.data(), 512));
    const auto a = read_nifti(tmp / "u8.nii");
    const auto b = read_nifti(tmp / "i16.nii");
    const auto c = read_nifti(tmp / "f64.nii");
    for (int i = 0; i < 64; ++i) {
      CHECK(a.data[i] == static_cast<float>(u8[static_cast<std::size_t>(i)]));
      CHECK(b.data[i] == static_cast<float>(i16[static_cast<std::size_t>(i)]));
      CHECK(c.data[i] == static_cast<float>(f64[static_cast<std::size_t>(i)]));
    }
  }

  TEST_CASE("nifti trailing singleton dims are accepted") {
    TempDir tmp;
    std::vector<float> payload(64, 1.0f);
    NiftiSpec spec;
    spec.dim = {5, 4, 4, 4, 1, 1, 1, 1};
    testing::write_bytes(tmp / "a.nii", testing::nifti_bytes(spec, payload.data(), 256));
    CHECK(read_nifti(tmp / "a.nii").dims == Dims3{4, 4, 4});
    spec.dim = {4, 4, 4, 4, 2, 1, 1, 1};
    testing::write_bytes(tmp / "b.nii", testing::nifti_bytes(spec, payload.data(), 256));
    CHECK_THROWS_AS(read_nifti(tmp / "b.nii"), UnsupportedFormatError);
  }

  TEST_CASE("nifti malformed input matrix") {
    TempDir tmp;
    std::vector<float> payload(64, 1.0f);
    const auto good = testing::nifti_bytes(NiftiSpec{}, payload.data(), 256);

    NiftiSpec bad_size;
    bad_size.sizeof_hdr = 540;
    testing::write_bytes(tmp / "size.nii", testing::nifti_bytes(bad_size, payload.data(), 256));
    CHECK_THROWS_AS(read_nifti(tmp / "size.nii"), FormatError);

    NiftiSpec bad_magic;
    bad_magic.magic = "abcd";
    testing::write_bytes(tmp / "magic.nii", testing::nifti_bytes(bad_magic, payload.data(), 256));
    CHECK_THROWS_AS(read_nifti(tmp / "magic.nii"), FormatError);

    NiftiSpec bad_type;
    bad_type.datatype = 32;  // complex64
    testing::write_bytes(tmp / "type.nii", testing::nifti_bytes(bad_type, payload.data(), 256));
    CHECK_THROWS_AS(read_nifti(tmp / "type.nii"), UnsupportedFormatError);

    auto truncated = good;
    truncated.resize(348 + 10);
    testing::write_bytes(tmp / "trunc.nii", truncated);
    CHECK_THROWS_AS(read_nifti(tmp / "trunc.nii"), TruncationError);

    testing::write_bytes(tmp / "gz.nii", {0x1f, 0x8b, 0x08, 0x00, 0, 0, 0, 0});
    try {
      read_nifti(tmp / "gz.nii");
      FAIL("gzip input accepted");
    } catch (const UnsupportedFormatError& e) {
      CHECK(std::string(e.what()).find("compressed NIfTI unsupported") != std::string::npos);
    }
  }

  TEST_CASE("raw round trip is bit exact") {
    TempDir tmp;
    Eigen::ArrayXf data(8);
    for (int i = 0; i < 8; ++i) data[i] = static_cast<float>(i);
    Volume v({2, 2, 2}, {0.5f, 1.0f, 2.0f}, data);
    write_raw(tmp / "v.vol", v);
    const auto r = read_raw(tmp / "v.vol");
    CHECK(r.dims == v.dims);
    CHECK(r.spacing == v.spacing);
    CHECK(std::memcmp(r.data.data(), v.data.data(), 8 * sizeof(float)) == 0);

    const auto noisy = testing::random_volume({5, 3, 7}, 11);
    write_raw(tmp / "n.vol", noisy);
    CHECK(std::memcmp(read_volume(tmp / "n.vol").data.data(), noisy.data.data(), 105 * sizeof(float)) == 0);
  }

  TEST_CASE("raw format errors") {
    TempDir tmp;
    Volume v = Volume::filled({2, 2, 2}, 1.0f);
    write_raw(tmp / "v.vol", v);
    auto bytes = testing::read_bytes(tmp / "v.vol");

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    testing::write_bytes(tmp / "m.vol", wrong_magic);
    CHECK_THROWS_AS(read_raw(tmp / "m.vol"), FormatError);

    auto zero_dim = bytes;
    testing::poke<std::uint32_t>(zero_dim, 8, 0);
    testing::write_bytes(tmp / "z.vol", zero_dim);
    CHECK_THROWS_AS(read_raw(tmp / "z.vol"), FormatError);

    auto short_payload = bytes;
    short_payload.pop_back();
    testing::write_bytes(tmp / "s.vol", short_payload);
    CHECK_THROWS_AS(read_raw(tmp / "s.vol"), FormatError);
  }

  TEST_CASE("resize of a constant volume stays constant") {
    const auto v = Volume::filled({3, 5, 4}, 2.5f);
    const auto r = resize_trilinear(v, {7, 2, 9});
    CHECK(r.dims == Dims3{7, 2, 9});
    CHECK((r.data - 2.5f).abs().maxCoeff() < 1e-6f);
  }

  TEST_CASE("resize to the same dims is the identity") {
    const auto v = testing::random_volume({4, 6, 5}, 3);
    const auto r = resize_trilinear(v, v.dims);
    CHECK((r.data - v.data).abs().maxCoeff() < 1e-6f);
    CHECK(r.spacing == v.spacing);
  }

  TEST_CASE("resize of a ramp matches closed-form linear interpolation") {
    Eigen::ArrayXf ramp(5);
    for (int i = 0; i < 5; ++i) ramp[i] = static_cast<float>(i);
    Volume v({5, 1, 1}, {2.0f, 1.0f, 1.0f}, ramp);
    const auto r = resize_trilinear(v, {9, 1, 1});
    for (int i = 0; i < 9; ++i) {
      const double coord = i * (5.0 - 1.0) / (9.0 - 1.0);
      const int lo = static_cast<int>(std::floor(coord));
      const int hi = std::min(lo + 1, 4);
      const double w = coord - lo;
      const double expected = (1 - w) * ramp[lo] + w * ramp[hi];
      CHECK(r.data[i] == doctest::Approx(expected).epsilon(1e-6));
      CHECK(r.data[i] == doctest::Approx(0.5 * i));
    }
    CHECK(r.spacing[0] == doctest::Approx(2.0f * 5.0f / 9.0f));
  }

  TEST_CASE("resize output stays inside the input range") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto v = testing::random_volume({5, 4, 6}, seed);
      const auto r = resize_trilinear(v, {9, 3, 11});
      CHECK(r.data.minCoeff() >= v.data.minCoeff());
      CHECK(r.data.maxCoeff() <= v.data.maxCoeff());
    }
  }

  TEST_CASE("resize to one voxel samples the source centre") {
    Eigen::ArrayXf ramp(5);
    for (int i = 0; i < 5; ++i) ramp[i] = static_cast<float>(i);
    Volume v({5, 1, 1}, {1, 1, 1}, ramp);
    CHECK(resize_trilinear(v, {1, 1, 1}).data[0] == doctest::Approx(2.0));
  }

  TEST_CASE("normalize") {
    Eigen::ArrayXf d(8);
    for (int i = 0; i < 8; ++i) d[i] = static_cast<float>(i + 1);
    Volume v({2, 2, 2}, {1, 1, 1}, d);
    const auto mm = normalize(v, Normalization::MinMax);
    CHECK(mm.data.minCoeff() == 0.0f);
    CHECK(mm.data.maxCoeff() == 1.0f);

    const auto z = normalize(testing::random_volume({8, 8, 8}, 5));
    const double mean = z.data.cast<double>().mean();
    const double sd = std::sqrt((z.data.cast<double>() - mean).square().mean());
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sd - 1.0) < 1e-5);
    const auto z2 = normalize(z);
    CHECK((z2.data - z.data).abs().maxCoeff() < 1e-5f);

    CHECK_THROWS_AS(normalize(Volume::filled({2, 2, 2}, 4.0f)), DegenerateInputError);
    CHECK_THROWS_AS(normalize(Volume::filled({2, 2, 2}, 4.0f), Normalization::MinMax), DegenerateInputError);
  }
}
