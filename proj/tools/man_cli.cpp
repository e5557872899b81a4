// Command-line entry point: generate, train, predict, eval, gradcheck, export-graph.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "man/errors.hpp"
#include "man/eval.hpp"
#include "man/gradcheck_suite.hpp"
#include "man/io.hpp"
#include "man/synth.hpp"
#include "man/trainer.hpp"

namespace fs = std::filesystem;
using namespace man;

namespace {

struct Options {
  std::string preset = "didemo";
  std::uint64_t seed = 0;
  std::string features;
  std::string annotations;
  std::string vocab;
  std::string checkpoint;
  std::string predictions;
  std::string out;
  std::string sample;
  HyperParams hp;
  std::string negatives = "zero";
  bool no_alignment = false;
  bool no_rank1 = false;
  GenerationSpec generation;
};

// Paths are recorded exactly as given so that runs with identical relative
// arguments in different directories produce identical artifacts.
json run_config(const std::string& subcommand, const Options& o) {
  json paths = json::object();
  auto put = [&](const char* key, const std::string& value) {
    if (!value.empty()) paths[key] = value;
  };
  put("features", o.features);
  put("annotations", o.annotations);
  put("vocab", o.vocab);
  put("checkpoint", o.checkpoint);
  put("predictions", o.predictions);
  put("out", o.out);
  json config = {{"subcommand", subcommand}, {"preset", o.preset}, {"seed", o.seed}, {"paths", paths}};
  if (subcommand == "generate") config["generation"] = o.generation.to_json();
  if (subcommand == "train") config["hyperparameters"] = o.hp.to_json();
  if (subcommand == "export-graph") config["sample"] = o.sample;
  return config;
}

void write_sidecar(const fs::path& artifact, const json& config) {
  write_file_atomic(fs::path(artifact.string() + ".run.json"), config.dump(2) + "\n");
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InputError(std::string("missing required flag ") + flag);
}

int cmd_generate(const Options& o) {
  require(o.out, "--out");
  GenerationSpec spec = o.generation;
  spec.preset = o.preset;
  spec.seed = o.seed;
  const SyntheticDataset data = generate(spec);
  write_dataset(o.out, data, run_config("generate", o));
  fmt::print("wrote {} samples to {}\n", data.samples.size(), o.out);
  return 0;
}

HyperParams train_params(const Options& o) {
  HyperParams hp = o.hp;
  hp.preset = o.preset;
  hp.seed = o.seed;
  hp.feature_alignment = !o.no_alignment;
  hp.track_rank1 = !o.no_rank1;
  hp.negatives = negative_targets_from_string(o.negatives);
  hp.validate();
  return hp;
}

Dataset dataset_from_flags(const Options& o) {
  require(o.features, "--features");
  require(o.annotations, "--annotations");
  require(o.vocab, "--vocab");
  return load_dataset(o.annotations, o.features, o.vocab);
}

int cmd_train(Options o) {
  require(o.out, "--out");
  o.hp = train_params(o);
  const Dataset data = dataset_from_flags(o);
  const json config = run_config("train", o);
  std::unique_ptr<Trainer> trainer;
  if (o.checkpoint.empty()) {
    trainer = std::make_unique<Trainer>(data, o.hp);
  } else {
    Checkpoint resume = load_checkpoint(o.checkpoint);
    resume.hp.epochs = o.hp.epochs;
    trainer = std::make_unique<Trainer>(data, resume);
  }
  const fs::path dir(o.out);
  const fs::path checkpoint_path = dir / "checkpoint.json";
  const fs::path log_path = dir / "train_log.csv";
  std::vector<EpochLog> log;
  train(*trainer, [&](const EpochLog& e) {
    log.push_back(e);
    if (e.rank1 >= 0.0) {
      fmt::print("epoch {:>3}  loss {:.6f}  rank1 {:.2f}\n", e.epoch, e.loss, 100.0 * e.rank1);
    } else {
      fmt::print("epoch {:>3}  loss {:.6f}\n", e.epoch, e.loss);
    }
    std::fflush(stdout);
    Checkpoint c = trainer->checkpoint();
    c.provenance = config;
    save_checkpoint(checkpoint_path, c);
    write_file_atomic(log_path, format_training_log(log));
  });
  write_sidecar(log_path, config);
  fmt::print("checkpoint: {}\n", checkpoint_path.string());
  return 0;
}

// A trainer restored from a checkpoint checks the dataset against the saved
// model and owns its parameters and embeddings.
std::unique_ptr<Trainer> restore(const Options& o, const Dataset& data) {
  require(o.checkpoint, "--checkpoint");
  return std::make_unique<Trainer>(data, load_checkpoint(o.checkpoint));
}

int cmd_predict(const Options& o) {
  require(o.out, "--out");
  const Dataset data = dataset_from_flags(o);
  const auto m = restore(o, data);
  std::vector<RankedPrediction> preds;
  for (const auto& s : data.samples) {
    preds.push_back(predict(m->model(), m->embeddings(), data.vocab, s, data.features.at(s.video_id)));
  }
  save_predictions(o.out, preds);
  write_sidecar(o.out, run_config("predict", o));
  fmt::print("wrote {} ranked predictions to {}\n", preds.size(), o.out);
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.predictions, "--predictions");
  require(o.annotations, "--annotations");
  const auto preds = load_predictions(o.predictions);
  std::map<std::string, Interval> truth;
  for (const auto& s : load_annotations(o.annotations)) truth[s.query_id] = s.interval;
  std::vector<Interval> gts;
  for (const auto& p : preds) {
    const auto it = truth.find(p.query_id);
    if (it == truth.end()) throw InputError("prediction for unknown query_id " + p.query_id);
    gts.push_back(it->second);
  }
  PyramidConfig::by_name(o.preset);
  const RetrievalReport report = o.preset == "didemo" ? eval_didemo(preds, gts) : eval_r_at_n(preds, gts);
  fmt::print("{}", format_report(report));
  if (!o.out.empty()) {
    json j = report_to_json(report);
    j["run_config"] = run_config("eval", o);
    write_file_atomic(o.out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto checks = run_gradcheck_suite(o.seed);
  bool ok = true;
  json rows = json::array();
  fmt::print("{:<26} {:>12} {:>8}\n", "component", "max rel err", "coords");
  for (const auto& c : checks) {
    ok = ok && c.passed();
    fmt::print("{:<26} {:>12.3e} {:>8} {}\n", c.component, c.result.max_relative_error, c.result.coordinates,
               c.passed() ? "ok" : "FAIL");
    rows.push_back({{"component", c.component},
                    {"max_relative_error", c.result.max_relative_error},
                    {"coordinates", c.result.coordinates}});
  }
  if (!o.out.empty()) {
    const json j = {{"tolerance", kGradCheckTolerance}, {"checks", rows}, {"run_config", run_config("gradcheck", o)}};
    write_file_atomic(o.out, j.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

int cmd_export_graph(const Options& o) {
  require(o.out, "--out");
  const Dataset data = dataset_from_flags(o);
  const auto m = restore(o, data);
  const TrainingSample* sample = &data.samples.front();
  if (!o.sample.empty()) {
    const auto it = std::ranges::find_if(data.samples, [&](const auto& s) { return s.query_id == o.sample; });
    if (it == data.samples.end()) throw InputError("no sample with query_id " + o.sample);
    sample = &*it;
  }
  const ClipFeatures& clip = data.features.at(sample->video_id);
  NoGradScope no_grad;
  const auto pass = m->model().forward(tokenize(sample->query, data.vocab), clip.features, m->embeddings());
  const auto moments = enumerate_moments(m->model().config().pyramid, clip.duration_seconds());
  json j = graph_to_json(moments, pass.graph.adjacency);
  j["query_id"] = sample->query_id;
  j["video_id"] = sample->video_id;
  j["query"] = sample->query;
  j["igan_steps"] = pass.graph.step;
  j["run_config"] = run_config("export-graph", o);
  write_file_atomic(o.out, j.dump(2) + "\n");
  fmt::print("wrote {}x{} adjacency for {} to {}\n", moments.size(), moments.size(), sample->query_id, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moment retrieval with dynamic filters and iterative graph adjustment"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--preset", o.preset, "Pyramid preset")->check(CLI::IsMember({"charades", "didemo"}));
    sub->add_option("--seed", o.seed, "Random seed");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--features", o.features, "Directory of clip feature files");
    sub->add_option("--annotations", o.annotations, "Annotations (JSON lines)");
    sub->add_option("--vocab", o.vocab, "Vocabulary file, one token per line");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", o.out, "Output directory");
  gen->add_option("--plain", o.generation.plain, "Number of plain queries");
  gen->add_option("--ordinal", o.generation.ordinal, "Number of ordinal queries");
  gen->add_option("--relational", o.generation.relational, "Number of relational queries");
  gen->add_option("--events", o.generation.events, "Number of event classes");
  gen->add_option("--dim", o.generation.dim, "Feature dimension");
  gen->add_option("--noise", o.generation.noise_sigma, "Feature noise standard deviation");
  gen->add_option("--max-ordinal", o.generation.max_ordinal, "Largest ordinal k (at most 3)");
  gen->add_option("--first-sample", o.generation.first_sample, "Index of the first sample (for held-out splits)");

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr);
  add_data(tr);
  tr->add_option("--out", o.out, "Output directory for checkpoint and log");
  tr->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  tr->add_option("--lr", o.hp.lr, "Adam learning rate");
  tr->add_option("--epochs", o.hp.epochs, "Total epochs");
  tr->add_option("--batch", o.hp.batch, "Samples per optimizer step");
  tr->add_option("--cells", o.hp.cells, "IGAN cells");
  tr->add_option("--dim", o.hp.dim, "Hidden dimension d");
  tr->add_option("--context-width", o.hp.context_width, "Width of the first pyramid convolution");
  tr->add_option("--negatives", o.negatives, "Target of candidates with IoU <= 0.5")
      ->check(CLI::IsMember({"zero", "iou"}));
  tr->add_flag("--no-alignment", o.no_alignment, "Feed clip features to the pyramid without alignment");
  tr->add_flag("--no-rank1", o.no_rank1, "Skip the per-epoch train-set Rank@1");

  auto* pr = app.add_subcommand("predict", "Rank candidate moments for every annotated query");
  add_common(pr);
  add_data(pr);
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint manifest");
  pr->add_option("--out", o.out, "Predictions file (JSON lines)");

  auto* ev = app.add_subcommand("eval", "Score predictions against annotations");
  add_common(ev);
  ev->add_option("--predictions", o.predictions, "Predictions file (JSON lines)");
  ev->add_option("--annotations", o.annotations, "Annotations (JSON lines)");
  ev->add_option("--out", o.out, "Report JSON");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every component");
  gc->add_option("--seed", o.seed, "Random seed");
  gc->add_option("--out", o.out, "Results JSON");

  auto* eg = app.add_subcommand("export-graph", "Write the learned adjacency for one sample");
  add_common(eg);
  add_data(eg);
  eg->add_option("--checkpoint", o.checkpoint, "Checkpoint manifest");
  eg->add_option("--sample", o.sample, "query_id of the sample (default: first)");
  eg->add_option("--out", o.out, "Graph JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*tr) return cmd_train(o);
    if (*pr) return cmd_predict(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*eg) return cmd_export_graph(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
