#pragma once

namespace capkit {

inline constexpr const char* kVersion = "0.1.0";

// File format magics and versions. All multi-byte integers in these
// formats are little-endian.
inline constexpr const char* kFeatureMagic = "ICFR";
inline constexpr unsigned kFeatureVersion = 1;
inline constexpr const char* kCheckpointMagic = "ICKP";
inline constexpr unsigned kCheckpointVersion = 1;

}  // namespace capkit
