#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "capkit/metrics.hpp"

namespace capkit {

// One image's feature matrix as stored in an ICFR file: row-major float32,
// rows = encoder tokens, cols = feature dim.
struct FeatureEntry {
  std::string id;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;
};

void write_features(const std::string& path, const std::vector<FeatureEntry>& entries);
std::vector<FeatureEntry> read_features(const std::string& path);

// image id -> reference captions (exactly 5 unless allow_fewer)
struct CaptionDataset {
  std::vector<std::string> ids;  // sorted
  std::unordered_map<std::string, std::vector<std::string>> captions;
};

CaptionDataset load_captions(const std::string& path, bool allow_fewer = false);

// Captions plus one feature map per stream, cross-validated: every image id
// must appear in every referenced feature file.
struct Dataset {
  CaptionDataset captions;
  std::vector<std::unordered_map<std::string, FeatureEntry>> streams;

  const FeatureEntry& features(std::size_t stream, const std::string& id) const;
};

Dataset load_dataset(const std::string& captions_path,
                     const std::vector<std::string>& feature_paths, bool allow_fewer = false);

// Synthetic desk-scale dataset. Each image draws one value per latent factor;
// the caption is a fixed template over the factor words and the features are
// one-hot factor blocks plus Gaussian noise, so features genuinely determine
// captions. With two streams, stream a carries (color, animal) and stream b
// carries (action, place) — complementary halves of the caption.
struct SyntheticSpec {
  std::size_t num_images = 32;
  std::size_t vocab_size = 30;   // approximate target, specials included
  std::size_t feature_dim = 32;  // per stream
  std::size_t streams = 1;       // 1 or 2
  std::size_t rows = 1;          // encoder tokens per stream
  double noise = 0.05;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::vector<std::string>> captions;
  std::vector<std::vector<FeatureEntry>> stream_entries;  // per stream, id order
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

// captions.json + features_a.icfr (+ features_b.icfr) under out_dir.
void write_synthetic(const SyntheticData& data, const std::string& out_dir);

std::string captions_to_json(const std::unordered_map<std::string, std::vector<std::string>>& caps);

// Small file helpers shared by the CLI and training outputs.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

void write_metric_report_file(const std::string& path, const MetricReport& report);

}  // namespace capkit
