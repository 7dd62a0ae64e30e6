#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace capkit {

std::string json_escape(std::string_view s);

// Shortest %.17g rendering; 17 significant digits round-trip any binary64.
std::string json_double(double v);

// Streaming JSON writer with insertion-ordered keys. nlohmann::json is used
// for parsing throughout the toolkit, but report and manifest files are
// written with this so that key order and floating-point rendering are fully
// specified by us (reports must be byte-reproducible across runs).
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array();
  JsonWriter& end_array();

  JsonWriter& key(std::string_view k);

  JsonWriter& value(std::string_view s);
  JsonWriter& value(const char* s) { return value(std::string_view(s)); }
  // Splice a pre-rendered JSON value verbatim.
  JsonWriter& raw_value(std::string_view json);
  JsonWriter& value(double v);
  JsonWriter& value(std::int64_t v);
  JsonWriter& value(std::uint64_t v);
  JsonWriter& value(int v) { return value(static_cast<std::int64_t>(v)); }
  JsonWriter& value(bool v);

  const std::string& str() const { return out_; }

 private:
  void pre_value();

  std::string out_;
  std::vector<bool> needs_comma_;
};

}  // namespace capkit
