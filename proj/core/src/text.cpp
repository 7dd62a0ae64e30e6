#include "capkit/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"

namespace capkit {

namespace {

bool is_detached_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':': case '"': case '\'':
      return true;
    default:
      return false;
  }
}

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s = {kPadToken, kSosToken, kEosToken, kUnkToken};
  return s;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : raw) {
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && is_detached_punct(static_cast<char>(c))) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& captions,
                             int min_count) {
  if (min_count < 1) {
    throw ValidationError("build_vocab: min_count must be >= 1");
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& caption : captions) {
    for (const auto& token : caption) counts[token] += 1;
  }
  // (count desc, token asc) via ordered map keyed on the inverse.
  std::map<std::pair<std::size_t, std::string>, int> ordered;
  for (const auto& [token, count] : counts) {
    if (count < static_cast<std::size_t>(min_count)) continue;
    // The special literals can never receive a corpus id.
    if (std::find(special_tokens().begin(), special_tokens().end(), token) !=
        special_tokens().end()) {
      continue;
    }
    ordered.emplace(std::make_pair(~count, token), 0);
  }
  std::vector<std::string> tokens;
  tokens.reserve(ordered.size());
  for (const auto& [key, unused] : ordered) tokens.push_back(key.second);
  return from_tokens(std::move(tokens), min_count);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int min_count) {
  Vocabulary v;
  v.min_count_ = min_count;
  v.id_to_token_ = special_tokens();
  v.id_to_token_.insert(v.id_to_token_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    const auto [it, inserted] = v.token_to_id_.emplace(v.id_to_token_[i], static_cast<int>(i));
    if (!inserted) {
      throw ValidationError("vocabulary: duplicate token '" + v.id_to_token_[i] + "'");
    }
  }
  return v;
}

int Vocabulary::id_of(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? SpecialIds::unk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ValidationError("vocabulary: id " + std::to_string(id) + " out of range (size " +
                          std::to_string(id_to_token_.size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::vector<std::string> Vocabulary::corpus_tokens() const {
  return {id_to_token_.begin() + 4, id_to_token_.end()};
}

std::string Vocabulary::to_json() const {
  JsonWriter w;
  w.begin_object();
  w.key("min_count").value(static_cast<std::int64_t>(min_count_));
  w.key("tokens").begin_array();
  for (std::size_t i = 4; i < id_to_token_.size(); ++i) w.value(id_to_token_[i]);
  w.end_array();
  w.end_object();
  return w.str();
}

Vocabulary Vocabulary::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("vocabulary file: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("min_count") || !j.contains("tokens")) {
    throw ValidationError("vocabulary file: expected {\"min_count\", \"tokens\"}");
  }
  std::vector<std::string> tokens;
  for (const auto& t : j.at("tokens")) tokens.push_back(t.get<std::string>());
  return from_tokens(std::move(tokens), j.at("min_count").get<int>());
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot open " + path + " for writing");
  out << to_json() << "\n";
  if (!out) throw IoError(IoError::Kind::WriteFailed, "failed writing " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t max_len) {
  if (max_len < 2) {
    throw ValidationError("encode: max_len must be >= 2");
  }
  std::vector<int> ids;
  ids.reserve(std::min(tokens.size() + 2, max_len));
  ids.push_back(SpecialIds::sos);
  for (const auto& token : tokens) {
    if (ids.size() + 1 >= max_len) break;  // leave room for eos
    ids.push_back(vocab.id_of(token));
  }
  ids.push_back(SpecialIds::eos);
  return ids;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  for (const int id : ids) vocab.token_of(id);  // reject corrupt sequences up front
  std::string out;
  for (const int id : ids) {
    if (id == SpecialIds::eos) break;
    if (id == SpecialIds::pad || id == SpecialIds::sos || id == SpecialIds::unk) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token_of(id);
  }
  return out;
}

}  // namespace capkit
