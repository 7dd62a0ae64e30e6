#pragma once

#include <functional>
#include <vector>

namespace capkit {

// Decoders work against anything that maps a token prefix (starting at SOS)
// to raw next-token logits over the vocabulary. Models and hand-set logit
// tables both fit.
using NextTokenFn = std::function<std::vector<double>(const std::vector<int>&)>;

// Partial decoded sequence with its cumulative log-probability.
struct Hypothesis {
  std::vector<int> ids;  // starts at SOS
  double logprob_sum = 0.0;
  bool finished = false;  // last id == EOS or length == max_len

  // token count excluding SOS; the final-selection normalizer
  std::size_t length() const { return ids.size() - 1; }
  double normalized_score() const { return logprob_sum / static_cast<double>(length()); }
};

// Per-step snapshot of the hypotheses the beam kept (finished + live), used
// by tests to verify the pruning invariant.
struct BeamTrace {
  std::vector<std::vector<Hypothesis>> steps;
};

// Iterated argmax from SOS until EOS or max_len; ties break toward the lowest
// token id. PAD and SOS are masked out of the choice.
std::vector<int> greedy_decode(const NextTokenFn& next_logits, std::size_t vocab_size,
                               std::size_t max_len);

// Beam search scored by summed log-softmax. Each step expands every live
// hypothesis over all non-control tokens and keeps the top `beam_width` by
// cumulative log-probability; finished hypotheses retire to a pool and shrink
// the live beam. The answer maximizes logprob_sum / length over the pool,
// ties toward the lexicographically smallest id sequence.
std::vector<int> beam_search_decode(const NextTokenFn& next_logits, std::size_t vocab_size,
                                    std::size_t max_len, std::size_t beam_width = 3,
                                    BeamTrace* trace = nullptr);

// Sum over t >= 1 of log_softmax(next_logits(ids[0..t-1]))[ids[t]]. The
// reference scorer the decoders are tested against.
double score_sequence(const NextTokenFn& next_logits, const std::vector<int>& ids);

}  // namespace capkit
