#pragma once

#include <string>

#include "capkit/model.hpp"
#include "capkit/text.hpp"

namespace capkit {

// ICKP checkpoint: magic "ICKP", format version u32, length-prefixed config
// JSON (architecture + vocabulary), then per parameter in manifest order:
// length-prefixed UTF-8 name, rank u32, dims u32 x rank, raw little-endian
// float32 data. Values are stored as float32 regardless of the training
// precision.
template <typename T>
void save_checkpoint(const std::string& path, const ArchConfig& cfg, const Vocabulary& vocab,
                     const Params<T>& params);

template <typename T>
struct LoadedModel {
  ArchConfig arch;
  Vocabulary vocab;
  Params<T> params;
};

template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path);

}  // namespace capkit
