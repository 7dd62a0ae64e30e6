#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace capkit {

// Reserved token ids. Every vocabulary starts with these four.
struct SpecialIds {
  static constexpr int pad = 0;
  static constexpr int sos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;
};

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kSosToken = "<sos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kUnkToken = "<unk>";

// Lowercase, split on whitespace, detach . , ! ? ; : " ' into their own
// tokens. Bytes >= 0x80 pass through untouched.
std::vector<std::string> tokenize(const std::string& raw);

class Vocabulary {
 public:
  Vocabulary() = default;

  // Deterministic construction: specials first, then corpus tokens with
  // count >= min_count ordered by (count desc, token asc).
  static Vocabulary build(const std::vector<std::vector<std::string>>& captions,
                          int min_count);

  // `tokens` are the non-special entries in id order (ids 4..).
  static Vocabulary from_tokens(std::vector<std::string> tokens, int min_count);

  std::size_t size() const { return id_to_token_.size(); }
  int min_count() const { return min_count_; }

  int id_of(const std::string& token) const;  // unk for OOV
  const std::string& token_of(int id) const;  // throws on out-of-range
  bool contains(const std::string& token) const;

  // Non-special tokens in id order, as stored in the vocabulary file.
  std::vector<std::string> corpus_tokens() const;

  std::string to_json() const;
  static Vocabulary from_json_text(const std::string& text);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_count_ = 1;
};

// SOS + mapped ids (OOV -> unk) + EOS, truncated to max_len with the last id
// forced to EOS.
std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        std::size_t max_len);

// Specials stripped (decoding stops at the first EOS), tokens joined by
// single spaces. Out-of-range ids signal a corrupt sequence.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace capkit
