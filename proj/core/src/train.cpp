#include "capkit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <nlohmann/json.hpp>

#include "capkit/checkpoint.hpp"
#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"
#include "capkit/metrics.hpp"

namespace capkit {

namespace {

template <typename V>
bool in_grid(const std::vector<V>& grid, V value) {
  return std::find(grid.begin(), grid.end(), value) != grid.end();
}

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, unused] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("config: unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (max_len < 2) throw ValidationError("train: max_len must be >= 2");
  if (min_count < 1) throw ValidationError("train: min_count must be >= 1");
  if (precision != "f32" && precision != "f64") {
    throw ValidationError("train: precision must be f32 or f64");
  }
  if (strict_grid) {
    if (!in_grid(kGridBatchSizes, batch_size)) {
      throw ValidationError("train: batch_size " + std::to_string(batch_size) +
                            " outside the declared grid {64,128}; set strict_grid=false to "
                            "experiment off-grid");
    }
    if (!in_grid(kGridLearningRates, learning_rate)) {
      throw ValidationError("train: learning_rate outside the declared grid {1e-3,5e-4}; set "
                            "strict_grid=false to experiment off-grid");
    }
  }
}

RunSpec parse_run_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"name", "out_dir", "data", "arch", "train", "grid"}, "document root");
  RunSpec spec;
  spec.name = j.value("name", std::string("run"));
  spec.out_dir = j.value("out_dir", std::string("runs"));

  if (!j.contains("data")) throw ValidationError("run config: missing 'data'");
  const auto& jd = j.at("data");
  reject_unknown_keys(jd, {"captions", "features", "split_seed", "allow_fewer_refs"}, "data");
  spec.data.captions = jd.at("captions").get<std::string>();
  for (const auto& f : jd.at("features")) spec.data.features.push_back(f.get<std::string>());
  spec.data.split_seed = jd.value("split_seed", std::uint64_t{0});
  spec.data.allow_fewer_refs = jd.value("allow_fewer_refs", false);
  if (spec.data.features.empty() || spec.data.features.size() > 2) {
    throw ValidationError("run config: data.features must list 1 or 2 files");
  }

  const auto& ja = j.at("arch");
  reject_unknown_keys(ja,
                      {"decoder", "adapter", "embed_size", "num_layers", "num_heads", "ffn_size",
                       "dropout", "max_boxes", "num_classes"},
                      "arch");
  spec.arch.decoder = decoder_kind_from_string(ja.value("decoder", std::string("transformer")));
  spec.arch.adapter = adapter_kind_from_string(ja.value("adapter", std::string("single")));
  spec.arch.embed_size = ja.value("embed_size", std::size_t{256});
  spec.arch.num_layers = ja.value("num_layers", std::size_t{1});
  spec.arch.num_heads = ja.value("num_heads", std::size_t{0});
  spec.arch.ffn_size = ja.value("ffn_size", std::size_t{0});
  spec.arch.dropout = ja.value("dropout", 0.1);
  spec.arch.max_boxes = ja.value("max_boxes", std::size_t{16});
  spec.arch.num_classes = ja.value("num_classes", std::size_t{0});

  const auto& jt = j.at("train");
  reject_unknown_keys(jt,
                      {"batch_size", "learning_rate", "epochs", "optimizer", "seed", "max_len",
                       "min_count", "eval_method", "beam_eval_every", "grad_clip", "precision",
                       "strict_grid"},
                      "train");
  spec.train.batch_size = jt.value("batch_size", std::size_t{64});
  spec.train.learning_rate = jt.value("learning_rate", 1e-3);
  spec.train.epochs = jt.value("epochs", std::size_t{50});
  const std::string opt = jt.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    spec.train.optimizer = Optimizer::Adam;
  } else if (opt == "sgd") {
    spec.train.optimizer = Optimizer::Sgd;
  } else {
    throw ValidationError("train: optimizer must be adam or sgd");
  }
  spec.train.seed = jt.value("seed", std::uint64_t{0});
  spec.train.max_len = jt.value("max_len", std::size_t{30});
  spec.train.min_count = jt.value("min_count", 5);
  const std::string ev = jt.value("eval_method", std::string("beam3"));
  if (ev == "greedy") {
    spec.train.eval_method = EvalMethod::Greedy;
  } else if (ev == "beam3") {
    spec.train.eval_method = EvalMethod::Beam3;
  } else {
    throw ValidationError("train: eval_method must be greedy or beam3");
  }
  spec.train.beam_eval_every = jt.value("beam_eval_every", std::size_t{5});
  spec.train.grad_clip = jt.value("grad_clip", 5.0);
  spec.train.precision = jt.value("precision", std::string("f32"));
  spec.train.strict_grid = jt.value("strict_grid", true);
  spec.train.validate();

  if (j.contains("grid")) {
    const auto& jg = j.at("grid");
    reject_unknown_keys(jg, {"batch_size", "learning_rate", "embed_size", "num_layers", "epochs"},
                        "grid");
    GridSpec grid;
    if (jg.contains("batch_size")) {
      grid.batch_sizes.clear();
      for (const auto& v : jg.at("batch_size")) grid.batch_sizes.push_back(v.get<std::size_t>());
    }
    if (jg.contains("learning_rate")) {
      grid.learning_rates.clear();
      for (const auto& v : jg.at("learning_rate")) grid.learning_rates.push_back(v.get<double>());
    }
    if (jg.contains("embed_size")) {
      grid.embed_sizes.clear();
      for (const auto& v : jg.at("embed_size")) grid.embed_sizes.push_back(v.get<std::size_t>());
    }
    if (jg.contains("num_layers")) {
      grid.num_layers.clear();
      for (const auto& v : jg.at("num_layers")) grid.num_layers.push_back(v.get<std::size_t>());
    }
    grid.epochs = jg.value("epochs", std::size_t{50});
    if (grid.batch_sizes.empty() || grid.learning_rates.empty() || grid.embed_sizes.empty() ||
        grid.num_layers.empty() || grid.epochs < 1) {
      throw ValidationError("grid: every axis needs at least one value");
    }
    if (spec.train.strict_grid) {
      for (const auto v : grid.batch_sizes)
        if (!in_grid(kGridBatchSizes, v)) throw ValidationError("grid: batch_size off-grid");
      for (const auto v : grid.learning_rates)
        if (!in_grid(kGridLearningRates, v)) throw ValidationError("grid: learning_rate off-grid");
      for (const auto v : grid.embed_sizes)
        if (!in_grid(kGridEmbedSizes, v)) throw ValidationError("grid: embed_size off-grid");
      for (const auto v : grid.num_layers)
        if (!in_grid(kGridNumLayers, v)) throw ValidationError("grid: num_layers off-grid");
    }
    spec.grid = grid;
  }
  return spec;
}

std::string run_spec_to_json(const RunSpec& spec) {
  JsonWriter w;
  w.begin_object();
  w.key("name").value(spec.name);
  w.key("out_dir").value(spec.out_dir);
  w.key("data").begin_object();
  w.key("captions").value(spec.data.captions);
  w.key("features").begin_array();
  for (const auto& f : spec.data.features) w.value(f);
  w.end_array();
  w.key("split_seed").value(static_cast<std::uint64_t>(spec.data.split_seed));
  w.key("allow_fewer_refs").value(spec.data.allow_fewer_refs);
  w.end_object();
  w.key("arch").raw_value(spec.arch.to_json());
  w.key("train").begin_object();
  w.key("batch_size").value(spec.train.batch_size);
  w.key("learning_rate").value(spec.train.learning_rate);
  w.key("epochs").value(spec.train.epochs);
  w.key("optimizer").value(spec.train.optimizer == Optimizer::Adam ? "adam" : "sgd");
  w.key("seed").value(static_cast<std::uint64_t>(spec.train.seed));
  w.key("max_len").value(spec.train.max_len);
  w.key("min_count").value(spec.train.min_count);
  w.key("eval_method").value(spec.train.eval_method == EvalMethod::Beam3 ? "beam3" : "greedy");
  w.key("beam_eval_every").value(spec.train.beam_eval_every);
  w.key("grad_clip").value(spec.train.grad_clip);
  w.key("precision").value(spec.train.precision);
  w.key("strict_grid").value(spec.train.strict_grid);
  w.end_object();
  if (spec.grid) {
    w.key("grid").begin_object();
    w.key("batch_size").begin_array();
    for (const auto v : spec.grid->batch_sizes) w.value(v);
    w.end_array();
    w.key("learning_rate").begin_array();
    for (const auto v : spec.grid->learning_rates) w.value(v);
    w.end_array();
    w.key("embed_size").begin_array();
    for (const auto v : spec.grid->embed_sizes) w.value(v);
    w.end_array();
    w.key("num_layers").begin_array();
    for (const auto v : spec.grid->num_layers) w.value(v);
    w.end_array();
    w.key("epochs").value(spec.grid->epochs);
    w.end_object();
  }
  w.end_object();
  return w.str();
}

SplitIds split_dataset(const std::vector<std::string>& ids, std::uint64_t seed) {
  if (ids.size() < 20) {
    throw ValidationError("split_dataset: need at least 20 images, got " +
                          std::to_string(ids.size()));
  }
  std::vector<std::string> shuffled = ids;
  std::sort(shuffled.begin(), shuffled.end());  // canonical order before the seeded shuffle
  Rng rng(seed);
  rng.shuffle(shuffled);
  const std::size_t n = shuffled.size();
  const std::size_t n_train = static_cast<std::size_t>(0.85 * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(0.10 * static_cast<double>(n));
  SplitIds split;
  split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  split.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
  split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return split;
}

const std::string& sample_reference(const std::vector<std::string>& refs, Rng& rng) {
  if (refs.empty()) throw ValidationError("sample_reference: empty reference set");
  return refs[rng.uniform_index(refs.size())];
}

template <typename T>
void sgd_step(Params<T>& params, double lr) {
  for (const auto& name : params.order) {
    Tensor<T>& p = params.at(name);
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw ValidationError("sgd_step: non-finite gradient in '" + name + "'");
      }
      v[i] -= static_cast<T>(lr) * g[i];
    }
  }
}

template <typename T>
void adam_step(Params<T>& params, AdamState<T>& state, double lr, double beta1, double beta2,
               double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const auto& name : params.order) {
    Tensor<T>& p = params.at(name);
    if (!p.has_grad()) continue;
    auto& g = p.grad();
    auto& v = p.values();
    auto& m_buf = state.m[name];
    auto& v_buf = state.v[name];
    if (m_buf.empty()) m_buf.assign(v.size(), T(0));
    if (v_buf.empty()) v_buf.assign(v.size(), T(0));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) {
        throw ValidationError("adam_step: non-finite gradient in '" + name + "'");
      }
      const double m_new = beta1 * static_cast<double>(m_buf[i]) + (1.0 - beta1) * gi;
      const double v_new = beta2 * static_cast<double>(v_buf[i]) + (1.0 - beta2) * gi * gi;
      m_buf[i] = static_cast<T>(m_new);
      v_buf[i] = static_cast<T>(v_new);
      const double m_hat = m_new / bc1;
      const double v_hat = v_new / bc2;
      v[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

template <typename T>
double clip_grad_norm(Params<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.order) {
    const Tensor<T>& p = params.at(name);
    if (!p.has_grad()) continue;
    for (const T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& name : params.order) {
      Tensor<T>& p = params.at(name);
      if (!p.has_grad()) continue;
      for (T& g : p.grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
std::vector<TrainItem<T>> make_items(const Dataset& dataset,
                                     const std::vector<std::string>& ids) {
  std::vector<TrainItem<T>> items;
  items.reserve(ids.size());
  for (const auto& id : ids) {
    TrainItem<T> item;
    item.id = id;
    item.refs = &dataset.captions.captions.at(id);
    for (std::size_t s = 0; s < dataset.streams.size(); ++s) {
      const FeatureEntry& e = dataset.features(s, id);
      std::vector<T> values(e.data.begin(), e.data.end());
      item.streams.push_back(
          Tensor<T>::from({e.rows, e.cols}, std::move(values)));
    }
    items.push_back(std::move(item));
  }
  return items;
}

template <typename T>
double train_epoch(Captioner<T>& model, const std::vector<TrainItem<T>>& items,
                   const Vocabulary& vocab, const TrainConfig& cfg, OptState<T>& opt, Rng& rng) {
  if (items.empty()) throw ValidationError("train_epoch: empty training set");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  double epoch_loss = 0.0;
  std::size_t epoch_tokens = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    model.params().zero_grads();
    Tensor<T> batch_loss_sum;
    std::size_t batch_tokens = 0;
    for (std::size_t i = start; i < end; ++i) {
      const TrainItem<T>& item = items[order[i]];
      const std::string& ref = sample_reference(*item.refs, rng);
      const std::vector<int> ids = encode(tokenize(ref), vocab, cfg.max_len);
      const std::vector<int> inputs(ids.begin(), ids.end() - 1);
      const std::vector<int> targets(ids.begin() + 1, ids.end());
      const Tensor<T> enc = model.encode(item.streams);
      const Tensor<T> logits = model.forward(inputs, enc, &rng);
      const Tensor<T> ce = cross_entropy_loss(logits, targets, SpecialIds::pad);
      const std::size_t count = targets.size();
      const Tensor<T> weighted = scale(ce, static_cast<T>(count));
      batch_loss_sum = batch_loss_sum.defined() ? add(batch_loss_sum, weighted) : weighted;
      batch_tokens += count;
    }
    Tensor<T> batch_loss = scale(batch_loss_sum, T(1) / static_cast<T>(batch_tokens));
    const double loss_value = static_cast<double>(batch_loss.item());
    if (!std::isfinite(loss_value)) {
      throw ValidationError("train_epoch: non-finite batch loss at item offset " +
                            std::to_string(start));
    }
    batch_loss.backward();
    clip_grad_norm(model.params(), cfg.grad_clip);
    if (cfg.optimizer == Optimizer::Adam) {
      adam_step(model.params(), opt.adam, cfg.learning_rate);
    } else {
      sgd_step(model.params(), cfg.learning_rate);
    }
    epoch_loss += loss_value * static_cast<double>(batch_tokens);
    epoch_tokens += batch_tokens;
  }
  return epoch_loss / static_cast<double>(epoch_tokens);
}

template <typename T>
ValScores validate(const Captioner<T>& model, const std::vector<TrainItem<T>>& items,
                   const Vocabulary& vocab, std::size_t max_len, bool beam,
                   std::size_t beam_width) {
  if (items.empty()) throw ValidationError("validate: empty validation set");
  NoGradGuard ng;
  std::vector<std::string> ids, candidates;
  std::vector<std::vector<std::string>> references;
  for (const auto& item : items) {
    const Tensor<T> enc = model.encode(item.streams);
    const NextTokenFn fn = make_next_token_fn(model, enc);
    const std::vector<int> tokens =
        beam ? beam_search_decode(fn, model.config().vocab_size, max_len, beam_width)
             : greedy_decode(fn, model.config().vocab_size, max_len);
    ids.push_back(item.id);
    candidates.push_back(decode(tokens, vocab));
    references.push_back(*item.refs);
  }
  const MetricReport report = evaluate_corpus(ids, candidates, references);
  return {report.bleu4, report.meteor, report.cider};
}

std::string epoch_record_to_json(const EpochRecord& rec) {
  JsonWriter w;
  w.begin_object();
  w.key("epoch").value(rec.epoch);
  w.key("train_loss").value(rec.train_loss);
  w.key("bleu4").value(rec.bleu4);
  w.key("meteor-exact").value(rec.meteor);
  w.key("cider").value(rec.cider);
  w.key("eval_method").value(rec.eval_method);
  w.end_object();
  return w.str();
}

namespace {

// Vocabulary from the training split only.
Vocabulary build_train_vocab(const Dataset& dataset, const std::vector<std::string>& train_ids,
                             int min_count) {
  std::vector<std::vector<std::string>> token_lists;
  for (const auto& id : train_ids) {
    for (const auto& caption : dataset.captions.captions.at(id)) {
      token_lists.push_back(tokenize(caption));
    }
  }
  return Vocabulary::build(token_lists, min_count);
}

std::size_t stream_feature_dim(const Dataset& dataset, std::size_t stream) {
  std::size_t dim = 0;
  for (const auto& [id, entry] : dataset.streams.at(stream)) {
    if (dim == 0) dim = entry.cols;
    if (entry.cols != dim) {
      throw ValidationError("feature stream " + std::to_string(stream) +
                            ": inconsistent feature dims (" + std::to_string(dim) + " vs " +
                            std::to_string(entry.cols) + " for '" + id + "')");
    }
  }
  return dim;
}

}  // namespace

template <typename T>
RunResult run_training(const RunSpec& spec, std::ostream& log) {
  spec.train.validate();
  const Dataset dataset =
      load_dataset(spec.data.captions, spec.data.features, spec.data.allow_fewer_refs);
  const SplitIds split = split_dataset(dataset.captions.ids, spec.data.split_seed);
  const Vocabulary vocab = build_train_vocab(dataset, split.train, spec.train.min_count);

  ArchConfig arch = spec.arch;
  arch.vocab_size = vocab.size();
  arch.max_len = spec.train.max_len;
  switch (arch.adapter) {
    case AdapterKind::Single:
      arch.feature_dim_a = stream_feature_dim(dataset, 0);
      break;
    case AdapterKind::Detection: {
      const std::size_t cols = stream_feature_dim(dataset, 0);
      if (arch.num_classes == 0 || cols != arch.detection_row_dim()) {
        throw ValidationError("detection features must be [boxes x 4+num_classes]; got cols " +
                              std::to_string(cols));
      }
      break;
    }
    case AdapterKind::Stacked:
      if (dataset.streams.size() != 2) {
        throw ValidationError("stacked adapter needs two feature streams");
      }
      arch.feature_dim_a = stream_feature_dim(dataset, 0);
      arch.feature_dim_b = stream_feature_dim(dataset, 1);
      break;
  }
  arch.validate();
  if (spec.train.strict_grid) {
    if (std::find(kGridEmbedSizes.begin(), kGridEmbedSizes.end(), arch.embed_size) ==
        kGridEmbedSizes.end()) {
      throw ValidationError("arch: embed_size outside the declared grid {256,512}; set "
                            "strict_grid=false to experiment off-grid");
    }
    if (std::find(kGridNumLayers.begin(), kGridNumLayers.end(), arch.num_layers) ==
        kGridNumLayers.end()) {
      throw ValidationError("arch: num_layers outside the declared grid {1,2,4}; set "
                            "strict_grid=false to experiment off-grid");
    }
  }

  const auto run_dir = std::filesystem::path(spec.out_dir) / spec.name;
  std::filesystem::create_directories(run_dir);

  Captioner<T> model(arch, init_params<T>(arch, spec.train.seed));
  OptState<T> opt;
  opt.kind = spec.train.optimizer;
  Rng rng(spec.train.seed);

  const auto train_items = make_items<T>(dataset, split.train);
  const auto val_items = make_items<T>(dataset, split.val);

  log << "run '" << spec.name << "': " << split.train.size() << " train / " << split.val.size()
      << " val / " << split.test.size() << " test images, vocab " << vocab.size() << "\n";

  vocab.save((run_dir / "vocab.json").string());

  RunResult result;
  result.run_dir = run_dir.string();
  std::string epochs_jsonl;
  std::vector<std::vector<T>> best_values;
  for (std::size_t epoch = 1; epoch <= spec.train.epochs; ++epoch) {
    const auto tic = std::chrono::steady_clock::now();
    const double loss = train_epoch(model, train_items, vocab, spec.train, opt, rng);
    const bool beam_epoch = spec.train.eval_method == EvalMethod::Beam3 &&
                            (epoch == spec.train.epochs ||
                             (spec.train.beam_eval_every > 0 &&
                              epoch % spec.train.beam_eval_every == 0));
    const ValScores scores = validate(model, val_items, vocab, spec.train.max_len, beam_epoch);
    const auto toc = std::chrono::steady_clock::now();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss;
    rec.bleu4 = scores.bleu4;
    rec.meteor = scores.meteor;
    rec.cider = scores.cider;
    rec.eval_method = beam_epoch ? "beam3" : "greedy";
    rec.wall_time_sec = std::chrono::duration<double>(toc - tic).count();
    result.epochs.push_back(rec);
    epochs_jsonl += epoch_record_to_json(rec) + "\n";
    log << "epoch " << epoch << ": loss " << loss << ", val bleu4 " << scores.bleu4 << " ("
        << rec.eval_method << "), " << rec.wall_time_sec << "s\n";

    if (result.epochs.size() == 1 || scores.bleu4 > result.best_bleu4) {
      result.best_bleu4 = scores.bleu4;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& name : model.params().order) {
        best_values.push_back(model.params().at(name).values());
      }
    }
    result.final_train_loss = loss;
  }

  // final-epoch beam-3 validation is the ranking score
  const ValScores final_beam = validate(model, val_items, vocab, spec.train.max_len, true);
  result.final_scores = final_beam;
  result.final_beam3_bleu4 = final_beam.bleu4;

  write_text_file((run_dir / "epochs.jsonl").string(), epochs_jsonl);
  save_checkpoint((run_dir / "final.ickp").string(), arch, vocab, model.params());
  {
    Params<T> best;
    std::size_t i = 0;
    for (const auto& name : model.params().order) {
      best.add(name, Tensor<T>::from(model.params().at(name).shape(), best_values[i++]));
    }
    save_checkpoint((run_dir / "best.ickp").string(), arch, vocab, best);
  }
  return result;
}

RunResult run_training_auto(const RunSpec& spec, std::ostream& log) {
  return spec.train.precision == "f64" ? run_training<double>(spec, log)
                                       : run_training<float>(spec, log);
}

std::vector<GridEntry> grid_search(const RunSpec& base, const GridSpec& grid, std::ostream& log) {
  std::vector<GridEntry> entries;
  std::size_t index = 0;
  for (const std::size_t bs : grid.batch_sizes) {
    for (const double lr : grid.learning_rates) {
      for (const std::size_t es : grid.embed_sizes) {
        for (const std::size_t nl : grid.num_layers) {
          GridEntry entry;
          entry.index = index++;
          entry.batch_size = bs;
          entry.learning_rate = lr;
          entry.embed_size = es;
          entry.num_layers = nl;

          RunSpec spec = base;
          spec.grid.reset();
          char cfg_name[96];
          std::snprintf(cfg_name, sizeof(cfg_name), "cfg_%03zu_bs%zu_lr%g_es%zu_nl%zu",
                        entry.index, bs, lr, es, nl);
          spec.out_dir = (std::filesystem::path(base.out_dir) / base.name).string();
          spec.name = cfg_name;
          spec.train.batch_size = bs;
          spec.train.learning_rate = lr;
          spec.train.epochs = grid.epochs;
          spec.arch.embed_size = es;
          spec.arch.num_layers = nl;

          log << "[grid " << entry.index << "] " << cfg_name << "\n";
          try {
            entry.result = run_training_auto(spec, log);
          } catch (const std::exception& e) {
            entry.result.failed = true;
            entry.result.error = e.what();
            log << "[grid " << entry.index << "] failed: " << e.what() << "\n";
          }
          entries.push_back(std::move(entry));
        }
      }
    }
  }

  std::vector<std::size_t> ranked(entries.size());
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = entries[a];
    const auto& eb = entries[b];
    if (ea.result.failed != eb.result.failed) return !ea.result.failed;
    return ea.result.final_beam3_bleu4 > eb.result.final_beam3_bleu4;
  });

  JsonWriter w;
  w.begin_object();
  w.key("grid").begin_object();
  w.key("batch_size").begin_array();
  for (const auto v : grid.batch_sizes) w.value(v);
  w.end_array();
  w.key("learning_rate").begin_array();
  for (const auto v : grid.learning_rates) w.value(v);
  w.end_array();
  w.key("embed_size").begin_array();
  for (const auto v : grid.embed_sizes) w.value(v);
  w.end_array();
  w.key("num_layers").begin_array();
  for (const auto v : grid.num_layers) w.value(v);
  w.end_array();
  w.key("epochs").value(grid.epochs);
  w.end_object();
  w.key("results").begin_array();
  for (const std::size_t idx : ranked) {
    const GridEntry& e = entries[idx];
    w.begin_object();
    w.key("index").value(e.index);
    w.key("batch_size").value(e.batch_size);
    w.key("learning_rate").value(e.learning_rate);
    w.key("embed_size").value(e.embed_size);
    w.key("num_layers").value(e.num_layers);
    if (e.result.failed) {
      w.key("failed").value(true);
      w.key("error").value(e.result.error);
    } else {
      w.key("final_beam3_bleu4").value(e.result.final_beam3_bleu4);
      w.key("final_meteor").value(e.result.final_scores.meteor);
      w.key("final_cider").value(e.result.final_scores.cider);
      w.key("best_epoch").value(e.result.best_epoch);
      w.key("run_dir").value(e.result.run_dir);
    }
    w.end_object();
  }
  w.end_array();
  if (!ranked.empty() && !entries[ranked[0]].result.failed) {
    const GridEntry& b = entries[ranked[0]];
    w.key("best").begin_object();
    w.key("batch_size").value(b.batch_size);
    w.key("learning_rate").value(b.learning_rate);
    w.key("embed_size").value(b.embed_size);
    w.key("num_layers").value(b.num_layers);
    w.key("final_beam3_bleu4").value(b.result.final_beam3_bleu4);
    w.end_object();
  }
  w.end_object();

  const auto grid_dir = std::filesystem::path(base.out_dir) / base.name;
  std::filesystem::create_directories(grid_dir);
  write_text_file((grid_dir / "summary.json").string(), w.str() + "\n");

  std::vector<GridEntry> out;
  out.reserve(entries.size());
  for (const std::size_t idx : ranked) out.push_back(entries[idx]);
  return out;
}

// ---- explicit instantiations ----

template struct AdamState<float>;
template struct AdamState<double>;
template struct OptState<float>;
template struct OptState<double>;
template void sgd_step<float>(Params<float>&, double);
template void sgd_step<double>(Params<double>&, double);
template void adam_step<float>(Params<float>&, AdamState<float>&, double, double, double, double);
template void adam_step<double>(Params<double>&, AdamState<double>&, double, double, double,
                                double);
template double clip_grad_norm<float>(Params<float>&, double);
template double clip_grad_norm<double>(Params<double>&, double);
template struct TrainItem<float>;
template struct TrainItem<double>;
template std::vector<TrainItem<float>> make_items<float>(const Dataset&,
                                                         const std::vector<std::string>&);
template std::vector<TrainItem<double>> make_items<double>(const Dataset&,
                                                           const std::vector<std::string>&);
template double train_epoch<float>(Captioner<float>&, const std::vector<TrainItem<float>>&,
                                   const Vocabulary&, const TrainConfig&, OptState<float>&, Rng&);
template double train_epoch<double>(Captioner<double>&, const std::vector<TrainItem<double>>&,
                                    const Vocabulary&, const TrainConfig&, OptState<double>&,
                                    Rng&);
template ValScores validate<float>(const Captioner<float>&, const std::vector<TrainItem<float>>&,
                                   const Vocabulary&, std::size_t, bool, std::size_t);
template ValScores validate<double>(const Captioner<double>&,
                                    const std::vector<TrainItem<double>>&, const Vocabulary&,
                                    std::size_t, bool, std::size_t);
template RunResult run_training<float>(const RunSpec&, std::ostream&);
template RunResult run_training<double>(const RunSpec&, std::ostream&);

}  // namespace capkit
