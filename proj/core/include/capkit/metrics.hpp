#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace capkit {

using TokenList = std::vector<std::string>;
using RefSet = std::vector<TokenList>;  // all references for one image

// N-gram keys join tokens with 0x1f so multi-token grams cannot collide.
std::string ngram_key(const TokenList& tokens, std::size_t start, std::size_t n);

// Sliding-window counts of contiguous n-grams, 1 <= n <= 4.
std::unordered_map<std::string, int> ngram_counts(const TokenList& tokens, int n);

// Corpus BLEU-4: modified n-gram precision with per-reference clipping,
// pooled over the corpus, multiplied by the brevity penalty. Any pooled
// precision of zero makes the score zero (no smoothing).
double bleu4_corpus(const std::vector<TokenList>& candidates,
                    const std::vector<RefSet>& references);

// Exact-match METEOR ("meteor-exact"): unigram alignment maximizing matches,
// then minimizing chunks; F = 10PR/(R+9P); penalty = 0.5*(chunks/m)^3;
// sentence score = max over references; corpus score = mean over sentences.
double meteor_sentence(const TokenList& candidate, const RefSet& references);
double meteor_corpus(const std::vector<TokenList>& candidates,
                     const std::vector<RefSet>& references);

// CIDEr with IDF = max(0, log(|I| / (1 + df))) computed from this corpus's
// reference sets, plain cosine per n-gram order, x10 scaling.
std::vector<double> cider_sentences(const std::vector<TokenList>& candidates,
                                    const std::vector<RefSet>& references);
double cider_corpus(const std::vector<TokenList>& candidates,
                    const std::vector<RefSet>& references);

struct PerImageScore {
  std::string image_id;
  std::string candidate;
  std::vector<std::string> references;
  double bleu4 = 0.0;
  double meteor = 0.0;
  double cider = 0.0;
};

struct MetricReport {
  double bleu4 = 0.0;
  double meteor = 0.0;  // labeled "meteor-exact" in serialized reports
  double cider = 0.0;
  std::vector<PerImageScore> per_image;
};

// Raw caption strings; tokenization is the toolkit tokenizer. Corpus BLEU-4
// comes from pooled counts, never from averaging the per-image scores.
MetricReport evaluate_corpus(const std::vector<std::string>& image_ids,
                             const std::vector<std::string>& candidates,
                             const std::vector<std::vector<std::string>>& references);

std::string metric_report_to_json(const MetricReport& report);

}  // namespace capkit
