#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "capkit/data.hpp"
#include "capkit/decode.hpp"
#include "capkit/model.hpp"
#include "capkit/rng.hpp"
#include "capkit/text.hpp"

namespace capkit {

enum class Optimizer { Sgd, Adam };
enum class EvalMethod { Greedy, Beam3 };

// Hyperparameter grids from the tuning setup. When strict_grid is on, the
// run config rejects values outside these.
inline const std::vector<std::size_t> kGridBatchSizes = {64, 128};
inline const std::vector<double> kGridLearningRates = {1e-3, 5e-4};
inline const std::vector<std::size_t> kGridEmbedSizes = {256, 512};
inline const std::vector<std::size_t> kGridNumLayers = {1, 2, 4};

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  Optimizer optimizer = Optimizer::Adam;  // sgd selectable
  std::uint64_t seed = 0;
  std::size_t max_len = 30;
  int min_count = 5;
  EvalMethod eval_method = EvalMethod::Beam3;
  std::size_t beam_eval_every = 5;  // beam validation cadence; greedy otherwise
  double grad_clip = 5.0;
  std::string precision = "f32";  // f32 | f64
  bool strict_grid = true;

  void validate() const;
};

struct DataSpec {
  std::string captions;
  std::vector<std::string> features;  // 1 or 2 streams
  std::uint64_t split_seed = 0;
  bool allow_fewer_refs = false;
};

struct GridSpec {
  std::vector<std::size_t> batch_sizes = kGridBatchSizes;
  std::vector<double> learning_rates = kGridLearningRates;
  std::vector<std::size_t> embed_sizes = kGridEmbedSizes;
  std::vector<std::size_t> num_layers = kGridNumLayers;
  std::size_t epochs = 50;
};

// One training run as described by a JSON config file. Unknown keys anywhere
// in the document are rejected.
struct RunSpec {
  std::string name = "run";
  std::string out_dir = "runs";
  DataSpec data;
  ArchConfig arch;
  TrainConfig train;
  std::optional<GridSpec> grid;
};

RunSpec parse_run_spec(const std::string& json_text);
std::string run_spec_to_json(const RunSpec& spec);

// --- dataset splitting and reference sampling ---

struct SplitIds {
  std::vector<std::string> train, val, test;
};

// Deterministic shuffle by seed, then floor(0.85 n) / floor(0.10 n) /
// remainder. Requires at least 20 images.
SplitIds split_dataset(const std::vector<std::string>& ids, std::uint64_t seed);

const std::string& sample_reference(const std::vector<std::string>& refs, Rng& rng);

// --- optimizers ---

template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::unordered_map<std::string, std::vector<T>> m, v;
};

template <typename T>
struct OptState {
  Optimizer kind = Optimizer::Adam;
  AdamState<T> adam;
};

template <typename T>
void sgd_step(Params<T>& params, double lr);

template <typename T>
void adam_step(Params<T>& params, AdamState<T>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Scales all gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
template <typename T>
double clip_grad_norm(Params<T>& params, double max_norm);

// --- epoch loop ---

template <typename T>
struct TrainItem {
  std::string id;
  std::vector<Tensor<T>> streams;
  const std::vector<std::string>* refs = nullptr;
};

template <typename T>
std::vector<TrainItem<T>> make_items(const Dataset& dataset, const std::vector<std::string>& ids);

// Shuffled batches (last partial batch kept); one sampled reference per item;
// teacher-forced cross-entropy; one optimizer step per batch. Returns the
// token-weighted mean loss.
template <typename T>
double train_epoch(Captioner<T>& model, const std::vector<TrainItem<T>>& items,
                   const Vocabulary& vocab, const TrainConfig& cfg, OptState<T>& opt, Rng& rng);

struct ValScores {
  double bleu4 = 0.0, meteor = 0.0, cider = 0.0;
};

template <typename T>
ValScores validate(const Captioner<T>& model, const std::vector<TrainItem<T>>& items,
                   const Vocabulary& vocab, std::size_t max_len, bool beam,
                   std::size_t beam_width = 3);

template <typename T>
NextTokenFn make_next_token_fn(const Captioner<T>& model, const Tensor<T>& enc) {
  return [&model, enc](const std::vector<int>& prefix) {
    return model.next_token_logits(prefix, enc);
  };
}

// --- full runs ---

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double bleu4 = 0.0, meteor = 0.0, cider = 0.0;
  double wall_time_sec = 0.0;  // logged, not serialized: epochs.jsonl is byte-reproducible
  std::string eval_method = "greedy";
};

std::string epoch_record_to_json(const EpochRecord& rec);

struct RunResult {
  std::vector<EpochRecord> epochs;
  double final_beam3_bleu4 = 0.0;
  ValScores final_scores;
  std::size_t best_epoch = 0;
  double best_bleu4 = 0.0;
  double final_train_loss = 0.0;
  std::string run_dir;
  bool failed = false;
  std::string error;
};

// Full pipeline for one config: load data, split, build the vocabulary from
// the training split, train, validate per epoch, write epochs.jsonl plus
// best.ickp / final.ickp under <out_dir>/<name>/.
template <typename T>
RunResult run_training(const RunSpec& spec, std::ostream& log);

// Dispatches on spec.train.precision.
RunResult run_training_auto(const RunSpec& spec, std::ostream& log);

struct GridEntry {
  std::size_t index = 0;  // position in declared grid order
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  std::size_t embed_size = 0;
  std::size_t num_layers = 0;
  RunResult result;
};

// Full Cartesian product in declared order, identical seeds, ranked by
// final-epoch validation BLEU-4 under beam width 3 (ties keep grid order).
// Writes summary.json under <out_dir>/<name>/.
std::vector<GridEntry> grid_search(const RunSpec& base, const GridSpec& grid, std::ostream& log);

}  // namespace capkit
