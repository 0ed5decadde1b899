#include "vit3d/volume.hpp"

#include <cmath>
#include <string>

#include "vit3d/binary_io.hpp"
#include "vit3d/error.hpp"

namespace vit3d {

namespace {

constexpr char kRawMagic[] = "VOL1";
constexpr std::uint32_t kRawVersion = 1;
constexpr std::int32_t kNiftiHeaderSize = 348;

std::string dims_string(const Dims3& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")";
}

Eigen::Index product(const Dims3& d) {
  return static_cast<Eigen::Index>(d[0]) * d[1] * d[2];
}

// One axis of the separable resample: returns source coordinates per target index.
std::vector<double> axis_coords(int source, int target) {
  std::vector<double> coords(static_cast<std::size_t>(target));
  if (target == 1) {
    coords[0] = 0.5 * (source - 1);
    return coords;
  }
  const double step = static_cast<double>(source - 1) / static_cast<double>(target - 1);
  for (int i = 0; i < target; ++i) {
    coords[static_cast<std::size_t>(i)] = i * step;
  }
  return coords;
}

// Resamples along one axis; `axis` selects which dimension changes.
Eigen::ArrayXf resample_axis(const Eigen::ArrayXf& in, const Dims3& in_dims, int axis, int target) {
  Dims3 out_dims = in_dims;
  out_dims[static_cast<std::size_t>(axis)] = target;
  Eigen::ArrayXf out(product(out_dims));
  const int source = in_dims[static_cast<std::size_t>(axis)];
  const auto coords = axis_coords(source, target);

  Eigen::Index stride = 1;
  for (int a = 0; a < axis; ++a) stride *= in_dims[static_cast<std::size_t>(a)];
  Eigen::Index outer = 1;
  for (int a = axis + 1; a < 3; ++a) outer *= in_dims[static_cast<std::size_t>(a)];

  for (Eigen::Index o = 0; o < outer; ++o) {
    for (int t = 0; t < target; ++t) {
      const double c = coords[static_cast<std::size_t>(t)];
      int i0 = static_cast<int>(std::floor(c));
      i0 = std::clamp(i0, 0, source - 1);
      const int i1 = std::min(i0 + 1, source - 1);
      const double w = c - i0;
      for (Eigen::Index s = 0; s < stride; ++s) {
        const double v0 = in[(o * source + i0) * stride + s];
        const double v1 = in[(o * source + i1) * stride + s];
        out[(o * target + t) * stride + s] = static_cast<float>(w == 0.0 ? v0 : (1.0 - w) * v0 + w * v1);
      }
    }
  }
  return out;
}

template <typename T>
void decode_payload(io::Reader& r, Eigen::ArrayXf& out, bool swap) {
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    T v = r.get<T>();
    if (swap) v = io::byteswap(v);
    out[i] = static_cast<float>(v);
  }
}

}  // namespace

Volume::Volume(Dims3 d, Spacing3 s, Eigen::ArrayXf values) : dims(d), spacing(s), data(std::move(values)) {
  validate();
}

Volume Volume::filled(Dims3 d, float value, Spacing3 s) {
  return Volume(d, s, Eigen::ArrayXf::Constant(product(d), value));
}

void Volume::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (dims[static_cast<std::size_t>(i)] <= 0) {
      throw ContractError("volume dims must be positive, got " + dims_string(dims));
    }
    const float s = spacing[static_cast<std::size_t>(i)];
    if (!(s > 0.0f) || !std::isfinite(s)) {
      throw ContractError("volume spacing must be positive and finite");
    }
  }
  if (data.size() != product(dims)) {
    throw ContractError("volume payload has " + std::to_string(data.size()) + " values, dims " + dims_string(dims) +
                        " need " + std::to_string(product(dims)));
  }
  if (!data.isFinite().all()) {
    throw ContractError("volume contains non-finite values");
  }
}

Volume read_nifti(const std::filesystem::path& path) {
  const auto buf = io::read_file(path);
  const std::string what = "NIfTI " + path.string();
  if (buf.size() >= 2 && buf[0] == 0x1f && buf[1] == 0x8b) {
    throw UnsupportedFormatError(what + ": compressed NIfTI unsupported (gzip magic found)");
  }
  if (buf.size() < static_cast<std::size_t>(kNiftiHeaderSize)) {
    throw TruncationError(what + ": file shorter than the 348-byte header");
  }

  io::Reader hdr(buf, what);
  auto sizeof_hdr = hdr.get<std::int32_t>();
  bool swap = false;
  if (sizeof_hdr != kNiftiHeaderSize) {
    if (io::byteswap(sizeof_hdr) == kNiftiHeaderSize) {
      swap = true;
    } else {
      throw FormatError(what + ": malformed header, sizeof_hdr=" + std::to_string(sizeof_hdr));
    }
  }
  auto field = [&](std::size_t offset, auto tag) {
    using T = decltype(tag);
    io::Reader r(buf.data() + offset, sizeof(T), what);
    T v = r.get<T>();
    return swap ? io::byteswap(v) : v;
  };

  const std::string magic(reinterpret_cast<const char*>(buf.data() + 344), 4);
  if (magic == std::string("ni1\0", 4)) {
    throw UnsupportedFormatError(what + ": two-file NIfTI (.hdr/.img) unsupported");
  }
  if (magic != std::string("n+1\0", 4)) {
    throw FormatError(what + ": bad magic, expected \"n+1\"");
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = field(40 + 2 * i, std::int16_t{});
  const int ndim = dim[0];
  if (ndim < 3 || ndim > 7) {
    throw UnsupportedFormatError(what + ": dim[0]=" + std::to_string(ndim) + ", only 3D images are supported");
  }
  for (int i = 4; i <= ndim; ++i) {
    if (dim[static_cast<std::size_t>(i)] != 1) {
      throw UnsupportedFormatError(what + ": non-singleton dimension " + std::to_string(i));
    }
  }
  Dims3 dims{dim[1], dim[2], dim[3]};
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) {
    throw FormatError(what + ": non-positive dims " + dims_string(dims));
  }

  const auto datatype = field(70, std::int16_t{});
  Spacing3 spacing{};
  for (std::size_t i = 0; i < 3; ++i) {
    float p = std::fabs(field(80 + 4 * (i + 1), float{}));
    spacing[i] = (p > 0.0f && std::isfinite(p)) ? p : 1.0f;
  }
  const float vox_offset = field(108, float{});
  const float slope = field(112, float{});
  const float inter = field(116, float{});

  std::size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;
    case 4: elem = 2; break;
    case 16: elem = 4; break;
    case 64: elem = 8; break;
    default:
      throw UnsupportedFormatError(what + ": unsupported datatype " + std::to_string(datatype));
  }
  if (!(vox_offset >= static_cast<float>(kNiftiHeaderSize)) || !std::isfinite(vox_offset)) {
    throw FormatError(what + ": invalid vox_offset");
  }
  const auto offset = static_cast<std::size_t>(vox_offset);
  const auto count = static_cast<std::size_t>(product(dims));
  if (buf.size() < offset || buf.size() - offset < count * elem) {
    throw TruncationError(what + ": payload truncated, need " + std::to_string(count * elem) + " bytes at offset " +
                          std::to_string(offset) + ", file has " + std::to_string(buf.size()));
  }

  io::Reader payload(buf.data() + offset, count * elem, what);
  Eigen::ArrayXf data(static_cast<Eigen::Index>(count));
  switch (datatype) {
    case 2: decode_payload<std::uint8_t>(payload, data, swap); break;
    case 4: decode_payload<std::int16_t>(payload, data, swap); break;
    case 16: decode_payload<float>(payload, data, swap); break;
    case 64: decode_payload<double>(payload, data, swap); break;
    default: break;
  }
  if (slope != 0.0f && std::isfinite(slope) && std::isfinite(inter)) {
    data = data * slope + inter;
  }
  if (!data.isFinite().all()) {
    throw FormatError(what + ": payload contains non-finite values");
  }
  return Volume(dims, spacing, std::move(data));
}

Volume read_raw(const std::filesystem::path& path) {
  const auto buf = io::read_file(path);
  const std::string what = "raw volume " + path.string();
  io::Reader r(buf, what);
  if (buf.size() < 4 || r.get_bytes(4) != kRawMagic) {
    throw FormatError(what + ": bad magic, expected VOL1");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kRawVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  Dims3 dims{};
  for (auto& d : dims) {
    const auto v = r.get<std::uint32_t>();
    if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
      throw FormatError(what + ": invalid dims");
    }
    d = static_cast<int>(v);
  }
  Spacing3 spacing{};
  for (auto& s : spacing) s = r.get<float>();
  const auto count = static_cast<std::size_t>(product(dims));
  if (r.remaining() != count * sizeof(float)) {
    throw TruncationError(what + ": payload length " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(count * sizeof(float)));
  }
  Eigen::ArrayXf data(static_cast<Eigen::Index>(count));
  r.get_array(data.data(), count);
  try {
    return Volume(dims, spacing, std::move(data));
  } catch (const ContractError& e) {
    throw FormatError(what + ": " + e.what());
  }
}

void write_raw(const std::filesystem::path& path, const Volume& volume) {
  volume.validate();
  io::Writer w;
  w.put_bytes(kRawMagic);
  w.put(kRawVersion);
  for (int d : volume.dims) w.put(static_cast<std::uint32_t>(d));
  for (float s : volume.spacing) w.put(s);
  w.put_array(volume.data.data(), static_cast<std::size_t>(volume.data.size()));
  io::write_file(path, w.bytes());
}

Volume read_volume(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii") return read_nifti(path);
  if (ext == ".gz") {
    throw UnsupportedFormatError(path.string() + ": compressed NIfTI unsupported");
  }
  return read_raw(path);
}

Volume resize_trilinear(const Volume& v, Dims3 target) {
  v.validate();
  for (int t : target) {
    if (t <= 0) throw ContractError("resize target dims must be positive, got " + dims_string(target));
  }
  Eigen::ArrayXf cur = v.data;
  Dims3 cur_dims = v.dims;
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = static_cast<std::size_t>(axis);
    if (cur_dims[a] == target[a]) continue;
    cur = resample_axis(cur, cur_dims, axis, target[a]);
    cur_dims[a] = target[a];
  }
  Spacing3 spacing{};
  for (std::size_t a = 0; a < 3; ++a) {
    spacing[a] = static_cast<float>(static_cast<double>(v.spacing[a]) * v.dims[a] / target[a]);
  }
  return Volume(target, spacing, std::move(cur));
}

Volume normalize(const Volume& v, Normalization mode) {
  v.validate();
  const Eigen::ArrayXd d = v.data.cast<double>();
  Volume out = v;
  if (mode == Normalization::ZScore) {
    const double mean = d.mean();
    const double var = (d - mean).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      throw DegenerateInputError("z-score normalization of a constant volume");
    }
    out.data = ((d - mean) / sd).cast<float>();
  } else {
    const double lo = d.minCoeff();
    const double hi = d.maxCoeff();
    if (!(hi > lo)) {
      throw DegenerateInputError("min-max normalization of a constant volume");
    }
    out.data = ((d - lo) / (hi - lo)).cast<float>();
  }
  return out;
}

Normalization parse_normalization(std::string_view name) {
  if (name == "zscore") return Normalization::ZScore;
  if (name == "minmax") return Normalization::MinMax;
  throw ConfigError("unknown normalization '" + std::string(name) + "', expected zscore or minmax");
}

}  // namespace vit3d
