#pragma once

#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "vit3d/autodiff.hpp"
#include "vit3d/rng.hpp"
#include "vit3d/vit.hpp"
#include "vit3d/volume.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("vit3d_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void poke(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

// Minimal single-file NIfTI-1 image, built field by field from the standard layout.
struct NiftiSpec {
  std::vector<std::int16_t> dim{3, 4, 4, 4, 1, 1, 1, 1};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  float pixdim[3] = {1.0f, 1.0f, 1.0f};
  float slope = 0.0f;
  float inter = 0.0f;
  std::string magic = std::string("n+1\0", 4);
  std::int32_t sizeof_hdr = 348;
};

inline std::vector<unsigned char> nifti_bytes(const NiftiSpec& s, const void* payload, std::size_t payload_bytes) {
  std::vector<unsigned char> buf(352, 0);
  poke(buf, 0, s.sizeof_hdr);
  for (std::size_t i = 0; i < 8; ++i) poke(buf, 40 + 2 * i, s.dim[i]);
  poke(buf, 70, s.datatype);
  poke(buf, 72, s.bitpix);
  poke(buf, 76, 1.0f);
  for (std::size_t i = 0; i < 3; ++i) poke(buf, 80 + 4 * (i + 1), s.pixdim[i]);
  poke(buf, 108, 352.0f);
  poke(buf, 112, s.slope);
  poke(buf, 116, s.inter);
  std::memcpy(buf.data() + 344, s.magic.data(), 4);
  buf.resize(352 + payload_bytes);
  if (payload_bytes) std::memcpy(buf.data() + 352, payload, payload_bytes);
  return buf;
}

inline vit3d::ModelConfig tiny_config() { return vit3d::ModelConfig{16, 8, 32, 2, 2, 4.0, 0.0, 2}; }

inline vit3d::Volume random_volume(vit3d::Dims3 dims, std::uint64_t seed, std::uint64_t stream = 0) {
  vit3d::CounterRng rng(seed, stream);
  Eigen::ArrayXf data(static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2]);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return vit3d::Volume(dims, {1.0f, 1.0f, 1.0f}, std::move(data));
}

template <typename S>
vit3d::Tensor<S> random_tensor(vit3d::Shape shape, vit3d::CounterRng& rng, double scale = 1.0) {
  vit3d::Tensor<S> t(std::move(shape));
  for (vit3d::Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(scale * rng.normal());
  return t;
}

// Rebuilds the name -> Var table grad_check hands to a loss closure.
template <typename S>
vit3d::ModelVars<S> vars_from(const vit3d::NamedTensors<S>& params, const std::vector<vit3d::Var<S>>& vars) {
  vit3d::ModelVars<S> out;
  for (std::size_t i = 0; i < vars.size(); ++i) out.add(params[i].first, vars[i]);
  return out;
}

}  // namespace testing
