#include "vit3d/checkpoint.hpp"

#include "vit3d/binary_io.hpp"
#include "vit3d/error.hpp"

namespace vit3d {

namespace {
constexpr char kMagic[] = "VTCK";
constexpr std::uint32_t kVersion = 1;
}  // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"input_dim", cfg.input_dim},   {"patch_size", cfg.patch_size}, {"hidden_dim", cfg.hidden_dim},
          {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},       {"mlp_ratio", cfg.mlp_ratio},
          {"dropout_rate", cfg.dropout_rate}, {"n_classes", cfg.n_classes}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_dim = j.at("input_dim").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<double>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.n_classes = j.at("n_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<unsigned char> encode_checkpoint(const ModelConfig& cfg, const ParamStore<float>& params,
                                             const nlohmann::json& metadata) {
  check_params(params, cfg);
  const std::string meta = nlohmann::json{{"config", config_to_json(cfg)}, {"metadata", metadata}}.dump();
  io::Writer w;
  w.put_bytes(kMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint64_t>(meta.size()));
  w.put_bytes(meta);
  for (const auto& [name, t] : params) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_array(t.data(), static_cast<std::size_t>(t.size()));
  }
  return w.bytes();
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ParamStore<float>& params,
                     const nlohmann::json& metadata) {
  const auto bytes = encode_checkpoint(cfg, params, metadata);
  io::write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& what) {
  io::Reader r(bytes, what);
  Checkpoint ck;
  try {
    if (r.get_bytes(4) != kMagic) throw CorruptCheckpointError(what + ": bad magic, expected VTCK");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw CorruptCheckpointError(what + ": unsupported version " + std::to_string(version));
    const auto meta_len = r.get<std::uint64_t>();
    if (meta_len > r.remaining()) throw CorruptCheckpointError(what + ": metadata length exceeds file size");
    const auto meta = nlohmann::json::parse(r.get_bytes(static_cast<std::size_t>(meta_len)));
    ck.config = config_from_json(meta.at("config"));
    ck.metadata = meta.value("metadata", nlohmann::json::object());
    for (const auto& [name, shape] : param_shapes(ck.config)) {
      const auto name_len = r.get<std::uint16_t>();
      const auto stored_name = r.get_bytes(name_len);
      if (stored_name != name) {
        throw CorruptCheckpointError(what + ": expected tensor " + name + ", found " + stored_name);
      }
      const auto rank = r.get<std::uint8_t>();
      Shape stored(rank);
      for (auto& d : stored) d = static_cast<Index>(r.get<std::uint32_t>());
      if (stored != shape) {
        throw CorruptCheckpointError(what + ": tensor " + name + " has shape " + to_string(stored) +
                                     ", config implies " + to_string(shape));
      }
      Tensor<float> t(shape);
      r.get_array(t.data(), static_cast<std::size_t>(t.size()));
      ck.params.insert(name, std::move(t));
    }
    if (r.remaining() != 0) throw CorruptCheckpointError(what + ": trailing bytes after last tensor");
  } catch (const TruncationError& e) {
    throw CorruptCheckpointError(what + ": truncated (" + e.what() + ")");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(what + ": bad metadata (" + e.what() + ")");
  } catch (const CorruptCheckpointError&) {
    throw;
  } catch (const ConfigError& e) {
    throw CorruptCheckpointError(what + ": " + e.what());
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), "checkpoint " + path.string());
}

void check_compatible(const ModelConfig& stored, const ModelConfig& expected) {
  auto field = [](const char* name, auto a, auto b) {
    if (a != b) {
      throw CheckpointMismatchError(std::string("checkpoint ") + name + " is " + std::to_string(a) +
                                    " but the model expects " + std::to_string(b));
    }
  };
  field("input_dim", stored.input_dim, expected.input_dim);
  field("patch_size", stored.patch_size, expected.patch_size);
  field("hidden_dim", stored.hidden_dim, expected.hidden_dim);
  field("n_layers", stored.n_layers, expected.n_layers);
  field("n_heads", stored.n_heads, expected.n_heads);
  field("mlp_hidden", stored.mlp_hidden(), expected.mlp_hidden());
  if (stored.n_classes != expected.n_classes) {
    throw HeadMismatchError("checkpoint head has " + std::to_string(stored.n_classes) +
                            " classes but the model expects " + std::to_string(expected.n_classes));
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ck = load_checkpoint(path);
  check_compatible(ck.config, expected);
  return ck;
}

}  // namespace vit3d
