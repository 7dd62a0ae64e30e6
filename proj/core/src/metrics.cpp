#include "capkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <unordered_set>

#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"
#include "capkit/text.hpp"

namespace capkit {

std::string ngram_key(const TokenList& tokens, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += tokens[start + i];
  }
  return key;
}

std::unordered_map<std::string, int> ngram_counts(const TokenList& tokens, int n) {
  if (n < 1 || n > 4) {
    throw ValidationError("ngram_counts: n must be in 1..4");
  }
  std::unordered_map<std::string, int> counts;
  const std::size_t un = static_cast<std::size_t>(n);
  if (tokens.size() < un) return counts;
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    counts[ngram_key(tokens, i, un)] += 1;
  }
  return counts;
}

namespace {

void require_aligned(const std::vector<TokenList>& candidates,
                     const std::vector<RefSet>& references, const char* metric) {
  if (candidates.empty()) {
    throw ValidationError(std::string(metric) + ": empty candidate corpus");
  }
  if (candidates.size() != references.size()) {
    throw ValidationError(std::string(metric) + ": candidate/reference count mismatch");
  }
  for (const auto& refs : references) {
    if (refs.empty()) {
      throw ValidationError(std::string(metric) + ": empty reference set");
    }
  }
}

}  // namespace

double bleu4_corpus(const std::vector<TokenList>& candidates,
                    const std::vector<RefSet>& references) {
  require_aligned(candidates, references, "bleu4");
  double matches[4] = {0, 0, 0, 0};
  double totals[4] = {0, 0, 0, 0};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenList& cand = candidates[i];
    cand_len += cand.size();
    // closest reference length, ties toward the shorter
    std::size_t best_ref = references[i][0].size();
    for (const auto& ref : references[i]) {
      const auto d_new = std::llabs(static_cast<long long>(ref.size()) -
                                    static_cast<long long>(cand.size()));
      const auto d_old = std::llabs(static_cast<long long>(best_ref) -
                                    static_cast<long long>(cand.size()));
      if (d_new < d_old || (d_new == d_old && ref.size() < best_ref)) best_ref = ref.size();
    }
    ref_len += best_ref;
    for (int n = 1; n <= 4; ++n) {
      const auto cand_grams = ngram_counts(cand, n);
      std::unordered_map<std::string, int> max_ref;
      for (const auto& ref : references[i]) {
        for (const auto& [gram, count] : ngram_counts(ref, n)) {
          auto& slot = max_ref[gram];
          slot = std::max(slot, count);
        }
      }
      for (const auto& [gram, count] : cand_grams) {
        totals[n - 1] += count;
        const auto it = max_ref.find(gram);
        if (it != max_ref.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (totals[n] == 0.0 || matches[n] == 0.0) return 0.0;
    log_sum += 0.25 * std::log(matches[n] / totals[n]);
  }
  const double c = static_cast<double>(cand_len);
  const double r = static_cast<double>(ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

namespace {

// One unigram alignment problem: same-token candidate/reference position
// pairs, injective both ways. The match count m is forced by the counts; the
// chunk count is minimized over all maximum alignments, exactly for m <= 12
// (branch and bound over candidate positions) and greedily beyond.
struct AlignResult {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

constexpr std::size_t kExactMatchLimit = 12;
constexpr std::size_t kNodeBudget = 2'000'000;

struct AlignSearch {
  const TokenList& cand;
  const TokenList& ref;
  std::unordered_map<std::string, std::vector<std::size_t>> ref_positions;
  std::vector<bool> ref_used;
  std::size_t target_m = 0;
  std::size_t best_chunks = 0;
  std::size_t nodes = 0;
  bool aborted = false;

  AlignSearch(const TokenList& c, const TokenList& r) : cand(c), ref(r) {
    for (std::size_t j = 0; j < ref.size(); ++j) ref_positions[ref[j]].push_back(j);
    ref_used.assign(ref.size(), false);
  }

  // upper bound on matches achievable from candidate position i on
  std::size_t max_matches() const {
    std::unordered_map<std::string, std::size_t> cand_counts;
    for (const auto& t : cand) cand_counts[t] += 1;
    std::size_t m = 0;
    for (const auto& [token, count] : cand_counts) {
      const auto it = ref_positions.find(token);
      if (it != ref_positions.end()) m += std::min(count, it->second.size());
    }
    return m;
  }

  void search(std::size_t i, std::size_t matched, std::size_t chunks, long long prev_j) {
    if (aborted) return;
    if (++nodes > kNodeBudget) {
      aborted = true;
      return;
    }
    if (chunks >= best_chunks) return;  // chunks never decrease
    if (matched == target_m) {
      best_chunks = chunks;
      return;
    }
    if (i >= cand.size() || matched + (cand.size() - i) < target_m) return;
    const auto it = ref_positions.find(cand[i]);
    if (it != ref_positions.end()) {
      // continuing the current chunk first reaches good solutions early
      std::vector<std::size_t> order(it->second.begin(), it->second.end());
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const bool ca = prev_j >= 0 && a == static_cast<std::size_t>(prev_j) + 1;
        const bool cb = prev_j >= 0 && b == static_cast<std::size_t>(prev_j) + 1;
        return ca > cb;
      });
      for (const std::size_t j : order) {
        if (ref_used[j]) continue;
        const bool continues = prev_j >= 0 && j == static_cast<std::size_t>(prev_j) + 1;
        ref_used[j] = true;
        search(i + 1, matched + 1, chunks + (continues ? 0 : 1),
               static_cast<long long>(j));
        ref_used[j] = false;
      }
    }
    // skipping this candidate position breaks any running chunk
    search(i + 1, matched, chunks, -2);
  }
};

AlignResult align_exact(const TokenList& cand, const TokenList& ref) {
  AlignSearch s(cand, ref);
  s.target_m = s.max_matches();
  AlignResult out;
  out.matches = s.target_m;
  if (s.target_m == 0) return out;
  s.best_chunks = s.target_m + 1;
  s.search(0, 0, 0, -2);
  if (s.aborted) return {0, 0};  // caller falls back to greedy
  out.chunks = s.best_chunks;
  return out;
}

AlignResult align_greedy(const TokenList& cand, const TokenList& ref) {
  std::unordered_map<std::string, std::vector<std::size_t>> ref_positions;
  for (std::size_t j = 0; j < ref.size(); ++j) ref_positions[ref[j]].push_back(j);
  std::vector<bool> used(ref.size(), false);
  std::size_t matches = 0, chunks = 0;
  long long prev_j = -2;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const auto it = ref_positions.find(cand[i]);
    if (it == ref_positions.end()) {
      prev_j = -2;
      continue;
    }
    long long pick = -1;
    if (prev_j >= 0 && static_cast<std::size_t>(prev_j) + 1 < ref.size() &&
        !used[static_cast<std::size_t>(prev_j) + 1] &&
        ref[static_cast<std::size_t>(prev_j) + 1] == cand[i]) {
      pick = prev_j + 1;  // extend the current chunk when possible
    } else {
      for (const std::size_t j : it->second) {
        if (!used[j]) {
          pick = static_cast<long long>(j);
          break;
        }
      }
    }
    if (pick < 0) {
      prev_j = -2;
      continue;
    }
    used[static_cast<std::size_t>(pick)] = true;
    ++matches;
    if (!(prev_j >= 0 && pick == prev_j + 1)) ++chunks;
    prev_j = pick;
  }
  return {matches, chunks};
}

double meteor_one_ref(const TokenList& cand, const TokenList& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  AlignResult a;
  // forced match count first; it bounds the search
  {
    std::unordered_map<std::string, std::size_t> cc, rc;
    for (const auto& t : cand) cc[t] += 1;
    for (const auto& t : ref) rc[t] += 1;
    std::size_t m = 0;
    for (const auto& [token, count] : cc) {
      const auto it = rc.find(token);
      if (it != rc.end()) m += std::min(count, it->second);
    }
    if (m == 0) return 0.0;
    if (m <= kExactMatchLimit) {
      a = align_exact(cand, ref);
      if (a.matches == 0) a = align_greedy(cand, ref);  // node budget exceeded
    } else {
      a = align_greedy(cand, ref);
    }
  }
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f * (1.0 - penalty);
}

}  // namespace

double meteor_sentence(const TokenList& candidate, const RefSet& references) {
  double best = 0.0;
  for (const auto& ref : references) {
    best = std::max(best, meteor_one_ref(candidate, ref));
  }
  return best;
}

double meteor_corpus(const std::vector<TokenList>& candidates,
                     const std::vector<RefSet>& references) {
  require_aligned(candidates, references, "meteor");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += meteor_sentence(candidates[i], references[i]);
  }
  return sum / static_cast<double>(candidates.size());
}

namespace {

using TfIdf = std::unordered_map<std::string, double>;

double cosine(const TfIdf& a, const TfIdf& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [gram, w] : a) {
    na += w * w;
    const auto it = b.find(gram);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& [gram, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<double> cider_sentences(const std::vector<TokenList>& candidates,
                                    const std::vector<RefSet>& references) {
  require_aligned(candidates, references, "cider");
  const double num_images = static_cast<double>(candidates.size());
  // document frequency per order: an n-gram counts once per image whose
  // reference set contains it
  std::unordered_map<std::string, double> idf[4];
  for (int n = 0; n < 4; ++n) {
    std::unordered_map<std::string, int> df;
    for (const auto& refs : references) {
      std::unordered_set<std::string> seen;
      for (const auto& ref : refs) {
        for (const auto& [gram, count] : ngram_counts(ref, n + 1)) seen.insert(gram);
      }
      for (const auto& gram : seen) df[gram] += 1;
    }
    for (const auto& [gram, count] : df) {
      idf[n][gram] = std::max(0.0, std::log(num_images / (1.0 + count)));
    }
  }
  auto tfidf = [&](const TokenList& tokens, int n) {
    TfIdf vec;
    for (const auto& [gram, count] : ngram_counts(tokens, n + 1)) {
      const auto it = idf[n].find(gram);
      // n-grams unseen in any reference set have df = 0
      const double w = it != idf[n].end()
                           ? it->second
                           : std::max(0.0, std::log(num_images / 1.0));
      if (w > 0.0) vec[gram] = static_cast<double>(count) * w;
    }
    return vec;
  };
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double order_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
      const TfIdf cand_vec = tfidf(candidates[i], n);
      double ref_mean = 0.0;
      for (const auto& ref : references[i]) {
        ref_mean += cosine(cand_vec, tfidf(ref, n));
      }
      order_sum += ref_mean / static_cast<double>(references[i].size());
    }
    scores.push_back(10.0 * 0.25 * order_sum);
  }
  return scores;
}

double cider_corpus(const std::vector<TokenList>& candidates,
                    const std::vector<RefSet>& references) {
  const auto scores = cider_sentences(candidates, references);
  double sum = 0.0;
  for (const double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

MetricReport evaluate_corpus(const std::vector<std::string>& image_ids,
                             const std::vector<std::string>& candidates,
                             const std::vector<std::vector<std::string>>& references) {
  if (image_ids.size() != candidates.size() || candidates.size() != references.size()) {
    throw ValidationError("evaluate_corpus: ids, candidates, references must align");
  }
  std::vector<TokenList> cand_tokens;
  std::vector<RefSet> ref_tokens;
  cand_tokens.reserve(candidates.size());
  ref_tokens.reserve(references.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_tokens.push_back(tokenize(candidates[i]));
    RefSet refs;
    for (const auto& r : references[i]) refs.push_back(tokenize(r));
    ref_tokens.push_back(std::move(refs));
  }
  MetricReport report;
  report.bleu4 = bleu4_corpus(cand_tokens, ref_tokens);
  report.meteor = meteor_corpus(cand_tokens, ref_tokens);
  report.cider = cider_corpus(cand_tokens, ref_tokens);
  const auto cider_per = cider_sentences(cand_tokens, ref_tokens);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    PerImageScore s;
    s.image_id = image_ids[i];
    s.candidate = candidates[i];
    s.references = references[i];
    s.bleu4 = bleu4_corpus({cand_tokens[i]}, {ref_tokens[i]});
    s.meteor = meteor_sentence(cand_tokens[i], ref_tokens[i]);
    s.cider = cider_per[i];
    report.per_image.push_back(std::move(s));
  }
  return report;
}

std::string metric_report_to_json(const MetricReport& report) {
  JsonWriter w;
  w.begin_object();
  w.key("bleu4").value(report.bleu4);
  w.key("meteor-exact").value(report.meteor);
  w.key("cider").value(report.cider);
  w.key("per_image").begin_array();
  for (const auto& s : report.per_image) {
    w.begin_object();
    w.key("image_id").value(s.image_id);
    w.key("candidate").value(s.candidate);
    w.key("references").begin_array();
    for (const auto& r : s.references) w.value(r);
    w.end_array();
    w.key("bleu4").value(s.bleu4);
    w.key("meteor-exact").value(s.meteor);
    w.key("cider").value(s.cider);
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

}  // namespace capkit
