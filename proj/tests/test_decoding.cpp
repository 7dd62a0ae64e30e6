#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "capkit/decode.hpp"
#include "capkit/errors.hpp"
#include "support/oracles.hpp"

using namespace capkit;

namespace {

// explicit logit tables keyed by prefix, for hand-built scenarios
class HandTable {
 public:
  HandTable(std::size_t vocab, std::vector<double> fallback)
      : vocab_(vocab), fallback_(std::move(fallback)) {}

  void set(std::vector<int> prefix, std::vector<double> logits) {
    table_[std::move(prefix)] = std::move(logits);
  }

  std::vector<double> operator()(const std::vector<int>& prefix) const {
    const auto it = table_.find(prefix);
    return it == table_.end() ? fallback_ : it->second;
  }

 private:
  std::size_t vocab_;
  std::vector<double> fallback_;
  std::map<std::vector<int>, std::vector<double>> table_;
};

double log_softmax_at(const std::vector<double>& logits, std::size_t idx) {
  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double sum = 0;
  for (const double v : logits) sum += std::exp(v - mx);
  return logits[idx] - mx - std::log(sum);
}

}  // namespace

TEST_CASE("greedy decode basics") {
  // eos dominates immediately
  HandTable force_eos(5, {0, 0, 100, 0, 0});
  CHECK(greedy_decode(force_eos, 5, 10) == std::vector<int>{1, 2});

  // deterministic across calls
  const oracles::TableModel model(7, 6);
  CHECK(greedy_decode(model, 6, 8) == greedy_decode(model, 6, 8));

  // ties break toward the lowest token id (pad/sos are masked)
  HandTable tie(5, {9, 9, 0, 0, 0});
  tie.set({1}, {0, 0, 1, 5, 5});
  CHECK(greedy_decode(tie, 5, 4) == std::vector<int>{1, 3, 2});
}

TEST_CASE("greedy decode follows the argmax walk of a hand-set table") {
  HandTable table(5, {0, 0, 10, 0, 0});
  table.set({1}, {0, 0, -1, 5, 1});        // pick 3
  table.set({1, 3}, {0, 0, 0, 1, 8});      // pick 4
  table.set({1, 3, 4}, {0, 0, 9, 2, 1});   // pick eos
  CHECK(greedy_decode(table, 5, 10) == std::vector<int>{1, 3, 4, 2});
  // max_len cuts the walk short
  CHECK(greedy_decode(table, 5, 3) == std::vector<int>{1, 3, 4});
}

TEST_CASE("beam with width 1 is exactly greedy") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const oracles::TableModel model(seed, 5);
    CHECK(beam_search_decode(model, 5, 4, 1) == greedy_decode(model, 5, 4));
  }
}

TEST_CASE("beam recovers a sequence greedy misses") {
  // greedy takes token 3 first but the continuation after 4 is far better
  HandTable table(5, {0, 0, 0, 0, 0});
  table.set({1}, {-100, -100, -100, 1.0, 0.25});
  table.set({1, 3}, {-100, -100, 1.0, 1.0, 1.0});   // flat: eos logp ~ -1.1
  table.set({1, 4}, {-100, -100, 100.0, 0.0, 0.0});  // eos certain
  const auto greedy = greedy_decode(table, 5, 4);
  CHECK(greedy == std::vector<int>{1, 3, 2});
  const auto beam = beam_search_decode(table, 5, 4, 3);
  CHECK(beam == std::vector<int>{1, 4, 2});
  CHECK(score_sequence(table, beam) / 2.0 > score_sequence(table, greedy) / 2.0);
}

TEST_CASE("beam hypotheses carry exact summed log-softmax scores") {
  const oracles::TableModel model(3, 5);
  BeamTrace trace;
  const auto out = beam_search_decode(model, 5, 4, 3, &trace);
  for (const auto& step : trace.steps) {
    for (const auto& hyp : step) {
      CHECK(hyp.logprob_sum ==
            doctest::Approx(score_sequence(model, hyp.ids)).epsilon(1e-12));
      // no tokens after EOS
      for (std::size_t i = 0; i + 1 < hyp.ids.size(); ++i) CHECK(hyp.ids[i] != 2);
    }
  }
  CHECK(!out.empty());
}

TEST_CASE("beam pruning invariant against exhaustive expansion") {
  // at every step the kept set must be the top-W single-token expansions of
  // the previous live set
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const oracles::TableModel model(seed + 1000, 5);
    const std::size_t beam_width = 3, max_len = 4;
    BeamTrace trace;
    beam_search_decode(model, 5, max_len, beam_width, &trace);

    std::vector<std::vector<int>> live = {{1}};
    std::vector<double> live_scores = {0.0};
    for (const auto& step : trace.steps) {
      // brute-force expansions of the live set
      struct Exp {
        std::vector<int> ids;
        double score;
      };
      std::vector<Exp> expansions;
      for (std::size_t h = 0; h < live.size(); ++h) {
        const auto logits = model(live[h]);
        for (int tok = 2; tok < 5; ++tok) {
          auto ids = live[h];
          ids.push_back(tok);
          expansions.push_back({ids, live_scores[h] + log_softmax_at(logits, tok)});
        }
      }
      std::sort(expansions.begin(), expansions.end(), [](const Exp& a, const Exp& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ids < b.ids;
      });
      const std::size_t kept = std::min(beam_width, expansions.size());
      REQUIRE(step.size() == kept);
      for (std::size_t i = 0; i < kept; ++i) {
        CHECK(step[i].ids == expansions[i].ids);
        CHECK(step[i].logprob_sum == doctest::Approx(expansions[i].score).epsilon(1e-12));
      }
      // next live set: kept hypotheses that are not finished
      live.clear();
      live_scores.clear();
      for (const auto& hyp : step) {
        if (!hyp.finished) {
          live.push_back(hyp.ids);
          live_scores.push_back(hyp.logprob_sum);
        }
      }
    }
    CHECK(live.empty());  // everything retires by eos or max_len
  }
}

TEST_CASE("beam3 result never beats the exhaustive optimum and never loses to greedy") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const oracles::TableModel model(seed + 5000, 5);
    const std::size_t max_len = 4;
    const auto sequences = oracles::all_sequences(model, 5, max_len);
    double best_norm = -1e300;
    for (const auto& s : sequences) {
      best_norm = std::max(best_norm, s.score / static_cast<double>(s.ids.size() - 1));
    }
    const auto beam = beam_search_decode(model, 5, max_len, 3);
    const double beam_norm =
        score_sequence(model, beam) / static_cast<double>(beam.size() - 1);
    const auto greedy = greedy_decode(model, 5, max_len);
    const double greedy_norm =
        score_sequence(model, greedy) / static_cast<double>(greedy.size() - 1);
    CHECK(beam_norm <= best_norm + 1e-12);
    CHECK(beam_norm >= greedy_norm - 1e-12);
  }
}

TEST_CASE("score_sequence definitions") {
  HandTable table(4, {0, 0, 1, 3});
  table.set({1}, {0, 0, 2, 0});
  // one step: log softmax of the forced distribution
  const double s = score_sequence(table, {1, 2});
  CHECK(s == doctest::Approx(log_softmax_at({0, 0, 2, 0}, 2)).epsilon(1e-12));

  // concatenation additivity
  const oracles::TableModel model(11, 6);
  const std::vector<int> full = {1, 3, 4, 5, 2};
  double manual = 0;
  std::vector<int> prefix = {1};
  for (std::size_t t = 1; t < full.size(); ++t) {
    manual += log_softmax_at(model(prefix), static_cast<std::size_t>(full[t]));
    prefix.push_back(full[t]);
  }
  CHECK(score_sequence(model, full) == doctest::Approx(manual).epsilon(1e-12));
  const std::vector<int> head = {1, 3, 4};
  CHECK(score_sequence(model, full) ==
        doctest::Approx(score_sequence(model, head) +
                        (manual - score_sequence(model, head)))
            .epsilon(1e-12));

  CHECK_THROWS_AS(score_sequence(model, {3, 4}), ValidationError);
}

TEST_CASE("decoded sequences never contain pad or sos after the start") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const oracles::TableModel model(seed + 400, 6);
    for (const auto& ids :
         {greedy_decode(model, 6, 6), beam_search_decode(model, 6, 6, 3)}) {
      CHECK(ids.front() == 1);
      for (std::size_t i = 1; i < ids.size(); ++i) {
        CHECK(ids[i] != 0);
        CHECK(ids[i] != 1);
      }
    }
  }
}
