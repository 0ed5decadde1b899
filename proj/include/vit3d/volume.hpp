#pragma once

#include <array>
#include <filesystem>

#include <Eigen/Core>

namespace vit3d {

using Dims3 = std::array<int, 3>;
using Spacing3 = std::array<float, 3>;

/// Dense 3D scalar grid. Voxel (x, y, z) lives at x + dims[0] * (y + dims[1] * z).
struct Volume {
  Dims3 dims{1, 1, 1};
  Spacing3 spacing{1.0f, 1.0f, 1.0f};
  Eigen::ArrayXf data = Eigen::ArrayXf::Zero(1);

  Volume() = default;
  Volume(Dims3 dims, Spacing3 spacing, Eigen::ArrayXf data);
  static Volume filled(Dims3 dims, float value, Spacing3 spacing = {1.0f, 1.0f, 1.0f});

  Eigen::Index voxel_count() const { return data.size(); }
  Eigen::Index index(int x, int y, int z) const {
    return x + static_cast<Eigen::Index>(dims[0]) * (y + static_cast<Eigen::Index>(dims[1]) * z);
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }

  // Throws ContractError unless dims/spacing are positive, the payload length
  // matches, and every value is finite.
  void validate() const;
};

enum class Normalization { ZScore, MinMax };

/// Reads the uncompressed single-file NIfTI-1 subset: datatypes uint8, int16,
/// float32, float64; 3D images (trailing dims of 1 are accepted). Values are
/// scaled by scl_slope/scl_inter when the slope is nonzero. Orientation and
/// affine fields are ignored.
Volume read_nifti(const std::filesystem::path& path);

// Raw volume format, little-endian: "VOL1", u32 version (1), 3 x u32 dims,
// 3 x f32 spacing, then the f32 payload.
Volume read_raw(const std::filesystem::path& path);
void write_raw(const std::filesystem::path& path, const Volume& volume);

// Dispatches on extension: .nii to read_nifti, anything else to read_raw.
Volume read_volume(const std::filesystem::path& path);

/// Trilinear resampling with corner-aligned coordinates: target index i maps to
/// source coordinate i * (S - 1) / (T - 1), or the source center when T == 1.
/// Spacing scales by S / T per axis.
Volume resize_trilinear(const Volume& v, Dims3 target);

Volume normalize(const Volume& v, Normalization mode = Normalization::ZScore);

Normalization parse_normalization(std::string_view name);

}  // namespace vit3d
