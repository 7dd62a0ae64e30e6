#include "capkit/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "capkit/errors.hpp"
#include "capkit/text.hpp"

namespace capkit {

namespace {

std::vector<double> log_softmax_values(std::vector<double> logits) {
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : logits) v -= lse;
  return logits;
}

std::vector<double> step_scores(const NextTokenFn& next_logits, const std::vector<int>& prefix,
                                std::size_t vocab_size) {
  std::vector<double> logits = next_logits(prefix);
  if (logits.size() != vocab_size) {
    throw ValidationError("decode: model returned " + std::to_string(logits.size()) +
                          " logits, expected " + std::to_string(vocab_size));
  }
  std::vector<double> scores = log_softmax_values(std::move(logits));
  // control tokens are never generated
  scores[SpecialIds::pad] = -std::numeric_limits<double>::infinity();
  scores[SpecialIds::sos] = -std::numeric_limits<double>::infinity();
  return scores;
}

bool better_expansion(const Hypothesis& a, const Hypothesis& b) {
  if (a.logprob_sum != b.logprob_sum) return a.logprob_sum > b.logprob_sum;
  return a.ids < b.ids;
}

}  // namespace

std::vector<int> greedy_decode(const NextTokenFn& next_logits, std::size_t vocab_size,
                               std::size_t max_len) {
  if (max_len < 2) throw ValidationError("greedy_decode: max_len must be >= 2");
  std::vector<int> ids = {SpecialIds::sos};
  while (ids.size() < max_len) {
    const std::vector<double> scores = step_scores(next_logits, ids, vocab_size);
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j) {
      if (scores[j] > scores[best]) best = j;  // first max wins: lowest id on ties
    }
    ids.push_back(static_cast<int>(best));
    if (static_cast<int>(best) == SpecialIds::eos) break;
  }
  return ids;
}

std::vector<int> beam_search_decode(const NextTokenFn& next_logits, std::size_t vocab_size,
                                    std::size_t max_len, std::size_t beam_width,
                                    BeamTrace* trace) {
  if (max_len < 2) throw ValidationError("beam_search_decode: max_len must be >= 2");
  if (beam_width < 1) throw ValidationError("beam_search_decode: beam_width must be >= 1");

  std::vector<Hypothesis> live = {{{SpecialIds::sos}, 0.0, false}};
  std::vector<Hypothesis> pool;

  while (!live.empty()) {
    std::vector<Hypothesis> expansions;
    expansions.reserve(live.size() * vocab_size);
    for (const Hypothesis& hyp : live) {
      const std::vector<double> scores = step_scores(next_logits, hyp.ids, vocab_size);
      for (std::size_t tok = 0; tok < vocab_size; ++tok) {
        if (std::isinf(scores[tok])) continue;
        Hypothesis next;
        next.ids = hyp.ids;
        next.ids.push_back(static_cast<int>(tok));
        next.logprob_sum = hyp.logprob_sum + scores[tok];
        next.finished =
            static_cast<int>(tok) == SpecialIds::eos || next.ids.size() == max_len;
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), better_expansion);
    if (expansions.size() > beam_width) expansions.resize(beam_width);
    if (trace) trace->steps.push_back(expansions);
    live.clear();
    for (Hypothesis& hyp : expansions) {
      if (hyp.finished) {
        pool.push_back(std::move(hyp));
      } else {
        live.push_back(std::move(hyp));
      }
    }
  }

  const Hypothesis* best = nullptr;
  for (const Hypothesis& hyp : pool) {
    if (!best || hyp.normalized_score() > best->normalized_score() ||
        (hyp.normalized_score() == best->normalized_score() && hyp.ids < best->ids)) {
      best = &hyp;
    }
  }
  return best->ids;
}

double score_sequence(const NextTokenFn& next_logits, const std::vector<int>& ids) {
  if (ids.size() < 2 || ids[0] != SpecialIds::sos) {
    throw ValidationError("score_sequence: ids must start at SOS and contain a step");
  }
  double total = 0.0;
  std::vector<int> prefix = {SpecialIds::sos};
  for (std::size_t t = 1; t < ids.size(); ++t) {
    const std::vector<double> logits = next_logits(prefix);
    const std::vector<double> scores = log_softmax_values(logits);
    total += scores[static_cast<std::size_t>(ids[t])];
    prefix.push_back(ids[t]);
  }
  return total;
}

}  // namespace capkit
