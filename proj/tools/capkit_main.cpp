// capkit command-line front end: vocabulary building, synthetic data
// generation, training, grid search, captioning, and metric evaluation over
// the binary feature/checkpoint formats defined in the core library.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "capkit/checkpoint.hpp"
#include "capkit/data.hpp"
#include "capkit/decode.hpp"
#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"
#include "capkit/metrics.hpp"
#include "capkit/model.hpp"
#include "capkit/text.hpp"
#include "capkit/train.hpp"
#include "capkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> g_argv;

// Relative output paths resolve under CAPKIT_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("CAPKIT_OUT_ROOT");
  if (root && *root && fs::path(path).is_relative()) {
    return (fs::path(root) / path).string();
  }
  return path;
}

std::string manifest_json(const std::string& command, std::uint64_t seed,
                          const std::string& config) {
  capkit::JsonWriter w;
  w.begin_object();
  w.key("tool").value("capkit");
  w.key("version").value(capkit::kVersion);
  w.key("command").value(command);
  w.key("seed").value(static_cast<std::uint64_t>(seed));
  w.key("argv").begin_array();
  for (const auto& a : g_argv) w.value(a);
  w.end_array();
  if (!config.empty()) w.key("config").raw_value(config);
  w.end_object();
  return w.str();
}

void write_manifest_beside_file(const std::string& out_file, const std::string& command,
                                std::uint64_t seed, const std::string& config = "") {
  capkit::write_text_file(out_file + ".manifest.json", manifest_json(command, seed, config) + "\n");
}

void write_manifest_in_dir(const std::string& dir, const std::string& command,
                           std::uint64_t seed, const std::string& config = "") {
  capkit::write_text_file((fs::path(dir) / "manifest.json").string(),
                          manifest_json(command, seed, config) + "\n");
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(capkit::read_text_file(path));
  } catch (const json::exception& e) {
    throw capkit::ValidationError(path + ": invalid JSON: " + e.what());
  }
}

capkit::Tensor<double> feature_tensor(const capkit::FeatureEntry& e) {
  std::vector<double> values(e.data.begin(), e.data.end());
  return capkit::Tensor<double>::from({e.rows, e.cols}, std::move(values));
}

// --- subcommand bodies ---

struct BuildVocabArgs {
  std::string captions;
  std::string out = "vocab.json";
  int min_count = 5;
  std::string split = "all";
  std::uint64_t split_seed = 0;
  bool allow_fewer = false;
};

int run_build_vocab(const BuildVocabArgs& args) {
  const capkit::CaptionDataset ds = capkit::load_captions(args.captions, args.allow_fewer);
  std::vector<std::string> ids = ds.ids;
  if (args.split != "all") {
    const capkit::SplitIds split = capkit::split_dataset(ds.ids, args.split_seed);
    if (args.split == "train") {
      ids = split.train;
    } else if (args.split == "val") {
      ids = split.val;
    } else if (args.split == "test") {
      ids = split.test;
    } else {
      throw capkit::ValidationError("--split must be all, train, val, or test");
    }
  }
  std::vector<std::vector<std::string>> token_lists;
  for (const auto& id : ids) {
    for (const auto& caption : ds.captions.at(id)) {
      token_lists.push_back(capkit::tokenize(caption));
    }
  }
  const capkit::Vocabulary vocab = capkit::Vocabulary::build(token_lists, args.min_count);
  const std::string out = resolve_out(args.out);
  vocab.save(out);
  write_manifest_beside_file(out, "build-vocab", args.split_seed);
  std::cout << "vocabulary: " << vocab.size() << " ids (" << vocab.size() - 4
            << " corpus tokens), written to " << out << "\n";
  return 0;
}

struct GenSyntheticArgs {
  capkit::SyntheticSpec spec;
  std::string out = "synthetic";
};

int run_gen_synthetic(const GenSyntheticArgs& args) {
  const capkit::SyntheticData data = capkit::gen_synthetic(args.spec);
  const std::string out = resolve_out(args.out);
  capkit::write_synthetic(data, out);
  capkit::JsonWriter cfg;
  cfg.begin_object();
  cfg.key("images").value(args.spec.num_images);
  cfg.key("vocab_size").value(args.spec.vocab_size);
  cfg.key("feature_dim").value(args.spec.feature_dim);
  cfg.key("streams").value(args.spec.streams);
  cfg.key("rows").value(args.spec.rows);
  cfg.key("noise").value(args.spec.noise);
  cfg.end_object();
  write_manifest_in_dir(out, "gen-synthetic", args.spec.seed, cfg.str());
  std::cout << "wrote " << data.ids.size() << " images (" << args.spec.streams
            << " stream(s)) to " << out << "\n";
  return 0;
}

int run_train(const std::string& config_path) {
  capkit::RunSpec spec = capkit::parse_run_spec(capkit::read_text_file(config_path));
  spec.out_dir = resolve_out(spec.out_dir);
  const capkit::RunResult result = capkit::run_training_auto(spec, std::cout);
  write_manifest_in_dir(result.run_dir, "train", spec.train.seed,
                        capkit::run_spec_to_json(spec));
  std::cout << "final beam3 val bleu4 " << result.final_beam3_bleu4 << ", best epoch "
            << result.best_epoch << " (bleu4 " << result.best_bleu4 << ")\n"
            << "outputs in " << result.run_dir << "\n";
  return 0;
}

int run_gridsearch(const std::string& config_path) {
  capkit::RunSpec spec = capkit::parse_run_spec(capkit::read_text_file(config_path));
  spec.out_dir = resolve_out(spec.out_dir);
  const capkit::GridSpec grid = spec.grid ? *spec.grid : capkit::GridSpec{};
  const auto ranked = capkit::grid_search(spec, grid, std::cout);
  const std::string grid_dir = (fs::path(spec.out_dir) / spec.name).string();
  write_manifest_in_dir(grid_dir, "gridsearch", spec.train.seed,
                        capkit::run_spec_to_json(spec));
  if (!ranked.empty() && !ranked.front().result.failed) {
    const auto& best = ranked.front();
    std::cout << "best config: bs " << best.batch_size << ", lr " << best.learning_rate
              << ", embed " << best.embed_size << ", layers " << best.num_layers << " (bleu4 "
              << best.result.final_beam3_bleu4 << ")\n";
  }
  std::cout << "summary in " << grid_dir << "/summary.json\n";
  return 0;
}

struct CaptionArgs {
  std::string checkpoint;
  std::vector<std::string> features;
  std::string image_id;
  std::string method = "beam";
  std::size_t beam_width = 3;
  std::size_t max_len = 0;  // 0 -> checkpoint max_len
  std::string out;
};

int run_caption(const CaptionArgs& args) {
  const auto loaded = capkit::load_checkpoint<double>(args.checkpoint);
  const capkit::Captioner<double> model(loaded.arch, loaded.params);

  std::vector<capkit::Tensor<double>> streams;
  for (const auto& path : args.features) {
    bool found = false;
    for (const auto& entry : capkit::read_features(path)) {
      if (entry.id == args.image_id) {
        streams.push_back(feature_tensor(entry));
        found = true;
        break;
      }
    }
    if (!found) {
      throw capkit::ValidationError(path + ": no features for image '" + args.image_id + "'");
    }
  }

  capkit::NoGradGuard ng;
  const auto enc = model.encode(streams);
  const auto fn = capkit::make_next_token_fn(model, enc);
  const std::size_t max_len = args.max_len ? args.max_len : loaded.arch.max_len;
  std::vector<int> ids;
  if (args.method == "greedy") {
    ids = capkit::greedy_decode(fn, loaded.arch.vocab_size, max_len);
  } else if (args.method == "beam") {
    ids = capkit::beam_search_decode(fn, loaded.arch.vocab_size, max_len, args.beam_width);
  } else {
    throw capkit::ValidationError("--method must be greedy or beam");
  }
  const std::string caption = capkit::decode(ids, loaded.vocab);
  std::cout << caption << "\n";

  if (!args.out.empty()) {
    const std::string out = resolve_out(args.out);
    capkit::JsonWriter w;
    w.begin_object();
    w.key("image_id").value(args.image_id);
    w.key("caption").value(caption);
    w.key("method").value(args.method);
    w.key("beam_width").value(args.beam_width);
    w.key("max_len").value(max_len);
    w.key("score").value(capkit::score_sequence(fn, ids));
    w.end_object();
    capkit::write_text_file(out, w.str() + "\n");
    write_manifest_beside_file(out, "caption", 0);
  }
  return 0;
}

struct EvaluateArgs {
  std::string config;
  std::string checkpoint;
  std::string split = "test";
  std::string method = "beam";
  std::size_t beam_width = 3;
  std::string out = "report.json";
};

int run_evaluate(const EvaluateArgs& args) {
  const capkit::RunSpec spec = capkit::parse_run_spec(capkit::read_text_file(args.config));
  const capkit::Dataset dataset =
      capkit::load_dataset(spec.data.captions, spec.data.features, spec.data.allow_fewer_refs);
  const capkit::SplitIds split = capkit::split_dataset(dataset.captions.ids, spec.data.split_seed);
  const std::vector<std::string>* ids = nullptr;
  if (args.split == "train") {
    ids = &split.train;
  } else if (args.split == "val") {
    ids = &split.val;
  } else if (args.split == "test") {
    ids = &split.test;
  } else {
    throw capkit::ValidationError("--split must be train, val, or test");
  }
  if (ids->empty()) throw capkit::ValidationError("selected split is empty");

  const auto loaded = capkit::load_checkpoint<double>(args.checkpoint);
  const capkit::Captioner<double> model(loaded.arch, loaded.params);

  capkit::NoGradGuard ng;
  std::vector<std::string> image_ids, candidates;
  std::vector<std::vector<std::string>> references;
  for (const auto& id : *ids) {
    std::vector<capkit::Tensor<double>> streams;
    for (std::size_t s = 0; s < dataset.streams.size(); ++s) {
      streams.push_back(feature_tensor(dataset.features(s, id)));
    }
    const auto enc = model.encode(streams);
    const auto fn = capkit::make_next_token_fn(model, enc);
    const auto tokens =
        args.method == "greedy"
            ? capkit::greedy_decode(fn, loaded.arch.vocab_size, loaded.arch.max_len)
            : capkit::beam_search_decode(fn, loaded.arch.vocab_size, loaded.arch.max_len,
                                         args.beam_width);
    image_ids.push_back(id);
    candidates.push_back(capkit::decode(tokens, loaded.vocab));
    references.push_back(dataset.captions.captions.at(id));
  }
  const capkit::MetricReport report =
      capkit::evaluate_corpus(image_ids, candidates, references);
  const std::string out = resolve_out(args.out);
  capkit::write_metric_report_file(out, report);
  write_manifest_beside_file(out, "evaluate", spec.train.seed);
  std::cout << "split " << args.split << " (" << image_ids.size() << " images, " << args.method
            << "): bleu4 " << report.bleu4 << ", meteor-exact " << report.meteor << ", cider "
            << report.cider << "\n"
            << "report in " << out << "\n";
  return 0;
}

struct MetricsArgs {
  std::string candidates;
  std::string references;
  std::string out;
};

int run_metrics(const MetricsArgs& args) {
  const json jc = parse_json_file(args.candidates);
  const json jr = parse_json_file(args.references);
  if (!jc.is_object() || !jr.is_object()) {
    throw capkit::ValidationError("metrics: candidates and references must be JSON objects");
  }
  std::vector<std::string> ids;
  for (const auto& [id, unused] : jc.items()) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  if (ids.size() != jr.size()) {
    throw capkit::ValidationError("metrics: candidate and reference id sets differ in size");
  }
  std::vector<std::string> candidates;
  std::vector<std::vector<std::string>> references;
  for (const auto& id : ids) {
    if (!jr.contains(id)) {
      throw capkit::ValidationError("metrics: no references for image '" + id + "'");
    }
    candidates.push_back(jc.at(id).get<std::string>());
    std::vector<std::string> refs;
    for (const auto& r : jr.at(id)) refs.push_back(r.get<std::string>());
    if (refs.empty()) {
      throw capkit::ValidationError("metrics: empty reference list for image '" + id + "'");
    }
    references.push_back(std::move(refs));
  }
  const capkit::MetricReport report = capkit::evaluate_corpus(ids, candidates, references);
  std::cout << "bleu4 " << report.bleu4 << ", meteor-exact " << report.meteor << ", cider "
            << report.cider << " over " << ids.size() << " images\n";
  if (!args.out.empty()) {
    const std::string out = resolve_out(args.out);
    capkit::write_metric_report_file(out, report);
    write_manifest_beside_file(out, "metrics", 0);
    std::cout << "report in " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_argv.emplace_back(argv[i]);

  CLI::App app{"capkit: image-captioning toolkit over precomputed features"};
  app.set_version_flag("--version", capkit::kVersion);
  app.require_subcommand(1);

  BuildVocabArgs bv;
  auto* cmd_bv = app.add_subcommand("build-vocab", "Build a vocabulary file from captions JSON");
  cmd_bv->add_option("--captions", bv.captions, "captions JSON file")->required();
  cmd_bv->add_option("--min-count", bv.min_count, "frequency threshold (default 5)");
  cmd_bv->add_option("--out", bv.out, "output vocabulary path");
  cmd_bv->add_option("--split", bv.split, "all|train|val|test (default all)");
  cmd_bv->add_option("--split-seed", bv.split_seed, "seed for split selection");
  cmd_bv->add_flag("--allow-fewer", bv.allow_fewer, "accept 1-5 captions per image");

  GenSyntheticArgs gs;
  auto* cmd_gs = app.add_subcommand("gen-synthetic", "Generate a synthetic captioning dataset");
  cmd_gs->add_option("--images", gs.spec.num_images, "number of images")->required();
  cmd_gs->add_option("--seed", gs.spec.seed, "RNG seed")->required();
  cmd_gs->add_option("--out", gs.out, "output directory");
  cmd_gs->add_option("--vocab-size", gs.spec.vocab_size, "approximate vocabulary target");
  cmd_gs->add_option("--feature-dim", gs.spec.feature_dim, "feature dim per stream");
  cmd_gs->add_option("--streams", gs.spec.streams, "1 or 2 feature streams");
  cmd_gs->add_option("--rows", gs.spec.rows, "encoder tokens per stream");
  cmd_gs->add_option("--noise", gs.spec.noise, "feature noise stddev");

  std::string train_config;
  auto* cmd_train = app.add_subcommand("train", "Train a captioner from a run config");
  cmd_train->add_option("--config", train_config, "run config JSON")->required();

  std::string grid_config;
  auto* cmd_grid = app.add_subcommand("gridsearch", "Grid search over the declared grids");
  cmd_grid->add_option("--config", grid_config, "run config JSON (optional grid section)")
      ->required();

  CaptionArgs cap;
  auto* cmd_cap = app.add_subcommand("caption", "Caption one image from a checkpoint");
  cmd_cap->add_option("--checkpoint", cap.checkpoint, "ICKP checkpoint")->required();
  cmd_cap->add_option("--features", cap.features, "feature file(s), one per stream")
      ->required()
      ->expected(1, 2);
  cmd_cap->add_option("--image-id", cap.image_id, "image id")->required();
  cmd_cap->add_option("--method", cap.method, "greedy|beam (default beam)");
  cmd_cap->add_option("--beam-width", cap.beam_width, "beam width (default 3)");
  cmd_cap->add_option("--max-len", cap.max_len, "max sequence length (default: checkpoint)");
  cmd_cap->add_option("--out", cap.out, "optional JSON output");

  EvaluateArgs ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "Decode a split and score it");
  cmd_ev->add_option("--config", ev.config, "run config JSON")->required();
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "ICKP checkpoint")->required();
  cmd_ev->add_option("--split", ev.split, "train|val|test (default test)");
  cmd_ev->add_option("--method", ev.method, "greedy|beam (default beam)");
  cmd_ev->add_option("--beam-width", ev.beam_width, "beam width (default 3)");
  cmd_ev->add_option("--out", ev.out, "report path (default report.json)");

  MetricsArgs mt;
  auto* cmd_mt = app.add_subcommand("metrics", "Score candidate captions against references");
  cmd_mt->add_option("--candidates", mt.candidates, "candidates JSON {id: caption}")->required();
  cmd_mt->add_option("--references", mt.references, "references JSON {id: [captions]}")
      ->required();
  cmd_mt->add_option("--out", mt.out, "optional report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (cmd_bv->parsed()) return run_build_vocab(bv);
    if (cmd_gs->parsed()) return run_gen_synthetic(gs);
    if (cmd_train->parsed()) return run_train(train_config);
    if (cmd_grid->parsed()) return run_gridsearch(grid_config);
    if (cmd_cap->parsed()) return run_caption(cap);
    if (cmd_ev->parsed()) return run_evaluate(ev);
    if (cmd_mt->parsed()) return run_metrics(mt);
  } catch (const capkit::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
