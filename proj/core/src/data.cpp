#include "capkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"
#include "capkit/rng.hpp"
#include "capkit/version.hpp"

namespace capkit {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_f32_block(float* dst, std::size_t count) {
    need(count * 4);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) {
        bits = (bits << 8) | static_cast<unsigned char>(buf_[pos_ + i * 4 + b]);
      }
      std::memcpy(dst + i, &bits, 4);
    }
    pos_ += count * 4;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw IoError(IoError::Kind::Truncated, path_ + ": truncated (need " + std::to_string(n) +
                                                  " bytes at offset " + std::to_string(pos_) + ")");
    }
  }

  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot open " + path + " for writing");
  out << content;
  if (!out) throw IoError(IoError::Kind::WriteFailed, "failed writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_features(const std::string& path, const std::vector<FeatureEntry>& entries) {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) {
      throw IoError(IoError::Kind::DuplicateId, "duplicate image id '" + e.id + "'");
    }
    if (e.data.size() != static_cast<std::size_t>(e.rows) * e.cols) {
      throw IoError(IoError::Kind::SizeMismatch,
                    "entry '" + e.id + "': payload does not match rows x cols");
    }
    for (const float v : e.data) {
      if (!std::isfinite(v)) {
        throw ValidationError("entry '" + e.id + "': non-finite feature value");
      }
    }
  }
  std::string buf;
  buf += kFeatureMagic;
  put_u32(buf, kFeatureVersion);
  put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(buf, static_cast<std::uint32_t>(e.id.size()));
    buf += e.id;
    put_u32(buf, e.rows);
    put_u32(buf, e.cols);
    for (const float v : e.data) put_f32(buf, v);
  }
  write_text_file(path, buf);
}

std::vector<FeatureEntry> read_features(const std::string& path) {
  const std::string buf = read_text_file(path);
  ByteReader r(buf, path);
  if (r.bytes(4) != kFeatureMagic) {
    throw IoError(IoError::Kind::BadMagic, path + ": not a feature file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw IoError(IoError::Kind::BadVersion,
                  path + ": unsupported feature file version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<FeatureEntry> entries;
  entries.reserve(count);
  std::set<std::string> ids;
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureEntry e;
    const std::uint32_t id_len = r.u32();
    e.id = r.bytes(id_len);
    if (!ids.insert(e.id).second) {
      throw IoError(IoError::Kind::DuplicateId, path + ": duplicate image id '" + e.id + "'");
    }
    e.rows = r.u32();
    e.cols = r.u32();
    if (e.rows == 0 || e.cols == 0) {
      throw IoError(IoError::Kind::SizeMismatch, path + ": entry '" + e.id + "' has empty shape");
    }
    e.data.resize(static_cast<std::size_t>(e.rows) * e.cols);
    r.read_f32_block(e.data.data(), e.data.size());
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) {
    throw IoError(IoError::Kind::SizeMismatch,
                  path + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return entries;
}

CaptionDataset load_captions(const std::string& path, bool allow_fewer) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("images") || !j.at("images").is_object()) {
    throw ValidationError(path + ": expected {\"images\": {id: [captions]}}");
  }
  CaptionDataset ds;
  std::vector<std::string> bad;
  for (const auto& [id, caps] : j.at("images").items()) {
    if (!caps.is_array()) {
      throw ValidationError(path + ": captions for '" + id + "' must be an array");
    }
    std::vector<std::string> list;
    for (const auto& c : caps) list.push_back(c.get<std::string>());
    const bool ok = allow_fewer ? (list.size() >= 1 && list.size() <= 5) : list.size() == 5;
    if (!ok) {
      bad.push_back(id + " (" + std::to_string(list.size()) + " captions)");
      continue;
    }
    ds.ids.push_back(id);
    ds.captions.emplace(id, std::move(list));
  }
  if (!bad.empty()) {
    std::string msg = path + ": images without exactly 5 captions:";
    for (const auto& b : bad) msg += " " + b;
    throw ValidationError(msg);
  }
  if (ds.ids.empty()) {
    throw ValidationError(path + ": no images");
  }
  std::sort(ds.ids.begin(), ds.ids.end());
  return ds;
}

const FeatureEntry& Dataset::features(std::size_t stream, const std::string& id) const {
  const auto it = streams.at(stream).find(id);
  if (it == streams.at(stream).end()) {
    throw ValidationError("no features for image '" + id + "' in stream " +
                          std::to_string(stream));
  }
  return it->second;
}

Dataset load_dataset(const std::string& captions_path,
                     const std::vector<std::string>& feature_paths, bool allow_fewer) {
  if (feature_paths.empty() || feature_paths.size() > 2) {
    throw ValidationError("load_dataset: 1 or 2 feature streams required");
  }
  Dataset ds;
  ds.captions = load_captions(captions_path, allow_fewer);
  for (const auto& path : feature_paths) {
    std::unordered_map<std::string, FeatureEntry> stream;
    for (auto& e : read_features(path)) {
      stream.emplace(e.id, std::move(e));
    }
    std::vector<std::string> missing;
    for (const auto& id : ds.captions.ids) {
      if (!stream.count(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::string msg = path + ": missing features for:";
      for (const auto& id : missing) msg += " " + id;
      throw ValidationError(msg);
    }
    ds.streams.push_back(std::move(stream));
  }
  return ds;
}

namespace {

// word pools for the caption grammar; extended with numbered variants when a
// larger vocabulary is requested
std::vector<std::string> pool(const std::vector<std::string>& base, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < base.size()) {
      out.push_back(base[i]);
    } else {
      out.push_back(base[i % base.size()] + std::to_string(i / base.size() + 1));
    }
  }
  return out;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_images < 1 || spec.feature_dim < 1 || spec.rows < 1 ||
      (spec.streams != 1 && spec.streams != 2)) {
    throw ValidationError("gen_synthetic: sizes must be >= 1 and streams 1 or 2");
  }
  // four latent factors; pool sizes scale with the vocab target
  const std::size_t content = spec.vocab_size > 7 ? spec.vocab_size - 7 : 4;
  const std::size_t per_factor = std::max<std::size_t>(2, content / 4);
  const auto colors = pool({"red", "blue", "green", "white", "black", "brown", "gray", "golden"},
                           per_factor);
  const auto animals =
      pool({"cat", "dog", "bird", "fox", "horse", "sheep", "duck", "rabbit"}, per_factor);
  const auto actions =
      pool({"sits", "runs", "sleeps", "jumps", "walks", "stands", "plays", "waits"}, per_factor);
  const auto places =
      pool({"river", "hill", "barn", "field", "tree", "road", "lake", "wall"}, per_factor);

  // factor blocks laid out one-hot per stream
  const std::size_t dims_a = spec.streams == 1 ? 4 * per_factor : 2 * per_factor;
  if (spec.feature_dim < dims_a) {
    throw ValidationError("gen_synthetic: feature_dim " + std::to_string(spec.feature_dim) +
                          " too small for " + std::to_string(dims_a) + " factor dims");
  }

  Rng rng(spec.seed);
  SyntheticData data;
  data.stream_entries.resize(spec.streams);
  for (std::size_t img = 0; img < spec.num_images; ++img) {
    char id_buf[16];
    std::snprintf(id_buf, sizeof(id_buf), "img%04zu", img);
    const std::string id = id_buf;

    const std::size_t f_color = rng.uniform_index(per_factor);
    const std::size_t f_animal = rng.uniform_index(per_factor);
    const std::size_t f_action = rng.uniform_index(per_factor);
    const std::size_t f_place = rng.uniform_index(per_factor);

    const std::string caption = "a " + colors[f_color] + " " + animals[f_animal] + " " +
                                actions[f_action] + " near the " + places[f_place];
    data.ids.push_back(id);
    data.captions.emplace(id, std::vector<std::string>(5, caption));

    auto make_entry = [&](const std::vector<std::size_t>& factor_values) {
      FeatureEntry e;
      e.id = id;
      e.rows = static_cast<std::uint32_t>(spec.rows);
      e.cols = static_cast<std::uint32_t>(spec.feature_dim);
      e.data.resize(spec.rows * spec.feature_dim, 0.0f);
      for (std::size_t row = 0; row < spec.rows; ++row) {
        float* out = e.data.data() + row * spec.feature_dim;
        for (std::size_t f = 0; f < factor_values.size(); ++f) {
          out[f * per_factor + factor_values[f]] = 1.0f;
        }
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
          out[d] += static_cast<float>(spec.noise * rng.normal());
        }
      }
      return e;
    };

    if (spec.streams == 1) {
      data.stream_entries[0].push_back(make_entry({f_color, f_animal, f_action, f_place}));
    } else {
      data.stream_entries[0].push_back(make_entry({f_color, f_animal}));
      data.stream_entries[1].push_back(make_entry({f_action, f_place}));
    }
  }
  return data;
}

std::string captions_to_json(
    const std::unordered_map<std::string, std::vector<std::string>>& caps) {
  std::vector<std::string> ids;
  ids.reserve(caps.size());
  for (const auto& [id, unused] : caps) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  JsonWriter w;
  w.begin_object();
  w.key("images").begin_object();
  for (const auto& id : ids) {
    w.key(id).begin_array();
    for (const auto& c : caps.at(id)) w.value(c);
    w.end_array();
  }
  w.end_object();
  w.end_object();
  return w.str();
}

void write_synthetic(const SyntheticData& data, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file((std::filesystem::path(out_dir) / "captions.json").string(),
                  captions_to_json(data.captions) + "\n");
  const char* names[] = {"features_a.icfr", "features_b.icfr"};
  for (std::size_t s = 0; s < data.stream_entries.size(); ++s) {
    write_features((std::filesystem::path(out_dir) / names[s]).string(),
                   data.stream_entries[s]);
  }
}

void write_metric_report_file(const std::string& path, const MetricReport& report) {
  write_text_file(path, metric_report_to_json(report) + "\n");
}

}  // namespace capkit
