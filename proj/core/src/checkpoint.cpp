#include "capkit/checkpoint.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "capkit/data.hpp"
#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"
#include "capkit/version.hpp"

namespace capkit {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const std::string& path) {
  if (pos + 4 > buf.size()) {
    throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
  pos += 4;
  return v;
}

std::string get_bytes(const std::string& buf, std::size_t& pos, std::size_t n,
                      const std::string& path) {
  if (pos + n > buf.size()) {
    throw IoError(IoError::Kind::Truncated, path + ": truncated checkpoint");
  }
  std::string s = buf.substr(pos, n);
  pos += n;
  return s;
}

std::string config_json(const ArchConfig& cfg, const Vocabulary& vocab) {
  JsonWriter w;
  w.begin_object();
  w.key("format").value("ickp");
  w.key("arch").raw_value(cfg.to_json());
  w.key("vocab").raw_value(vocab.to_json());
  w.end_object();
  return w.str();
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ArchConfig& cfg, const Vocabulary& vocab,
                     const Params<T>& params) {
  const auto manifest = param_manifest(cfg);
  std::string buf;
  buf += kCheckpointMagic;
  put_u32(buf, kCheckpointVersion);
  const std::string meta = config_json(cfg, vocab);
  put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  buf += meta;
  for (const auto& spec : manifest) {
    const Tensor<T>& t = params.at(spec.name);
    if (t.shape() != spec.shape) {
      throw ValidationError("save_checkpoint: '" + spec.name + "' shape mismatch");
    }
    put_u32(buf, static_cast<std::uint32_t>(spec.name.size()));
    buf += spec.name;
    put_u32(buf, static_cast<std::uint32_t>(spec.shape.size()));
    for (const std::size_t d : spec.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (const T v : t.values()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw ValidationError("save_checkpoint: non-finite value in '" + spec.name + "'");
      }
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(buf, bits);
    }
  }
  write_text_file(path, buf);
}

template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path) {
  const std::string buf = read_text_file(path);
  std::size_t pos = 0;
  if (get_bytes(buf, pos, 4, path) != kCheckpointMagic) {
    throw IoError(IoError::Kind::BadMagic, path + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(buf, pos, path);
  if (version != kCheckpointVersion) {
    throw IoError(IoError::Kind::BadVersion,
                  path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t meta_len = get_u32(buf, pos, path);
  const std::string meta = get_bytes(buf, pos, meta_len, path);

  LoadedModel<T> out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::SizeMismatch, path + ": bad config JSON: " + e.what());
  }
  out.arch = ArchConfig::from_json_text(j.at("arch").dump());
  out.vocab = Vocabulary::from_json_text(j.at("vocab").dump());
  if (out.vocab.size() != out.arch.vocab_size) {
    throw ValidationError(path + ": vocabulary size disagrees with architecture");
  }

  const auto manifest = param_manifest(out.arch);
  for (const auto& spec : manifest) {
    const std::uint32_t name_len = get_u32(buf, pos, path);
    const std::string name = get_bytes(buf, pos, name_len, path);
    if (name != spec.name) {
      throw IoError(IoError::Kind::SizeMismatch,
                    path + ": expected parameter '" + spec.name + "', found '" + name + "'");
    }
    const std::uint32_t rank = get_u32(buf, pos, path);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u32(buf, pos, path);
    if (shape != spec.shape) {
      throw IoError(IoError::Kind::SizeMismatch, path + ": parameter '" + name +
                                                     "' has shape " + shape_str(shape) +
                                                     ", manifest requires " +
                                                     shape_str(spec.shape));
    }
    const std::size_t count = shape_numel(shape);
    std::vector<T> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t bits = get_u32(buf, pos, path);
      float f;
      std::memcpy(&f, &bits, 4);
      if (!std::isfinite(f)) {
        throw ValidationError(path + ": non-finite value in parameter '" + name + "'");
      }
      values[i] = static_cast<T>(f);
    }
    out.params.add(spec.name, Tensor<T>::from(spec.shape, std::move(values), true));
  }
  if (pos != buf.size()) {
    throw IoError(IoError::Kind::SizeMismatch,
                  path + ": " + std::to_string(buf.size() - pos) + " trailing bytes");
  }
  return out;
}

template void save_checkpoint<float>(const std::string&, const ArchConfig&, const Vocabulary&,
                                     const Params<float>&);
template void save_checkpoint<double>(const std::string&, const ArchConfig&, const Vocabulary&,
                                      const Params<double>&);
template LoadedModel<float> load_checkpoint<float>(const std::string&);
template LoadedModel<double> load_checkpoint<double>(const std::string&);

}  // namespace capkit
