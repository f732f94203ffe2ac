// uasa: generate data, train, evaluate, run ablation suites, export plots.
//
//   uasa gen    [-c config.json] [key=value ...]
//   uasa train  [-c config.json] [key=value ...]
//   uasa eval   [-c config.json] [key=value ...]
//   uasa ablate <suite> [-c config.json] [key=value ...]
//   uasa plot   [-c config.json] [key=value ...]
//
// Outputs go under out_dir (UASA_OUT_DIR wins over the config). Failures print
// one line to stderr:  uasa: error kind=<kind> message="<text>"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uasa/checkpoint.hpp"
#include "uasa/config.hpp"
#include "uasa/data.hpp"
#include "uasa/eval.hpp"
#include "uasa/report.hpp"
#include "uasa/trainer.hpp"

namespace fs = std::filesystem;
using namespace uasa;

namespace {

struct Paths {
  fs::path root;
  std::string source, target, checkpoint, metrics, plots;

  std::string out(const std::string& name) const { return (root / name).string(); }
};

Paths resolve_paths(const ExperimentConfig& c) {
  Paths p;
  const char* env = std::getenv("UASA_OUT_DIR");
  p.root = env && *env ? fs::path(env) : fs::path(c.out_dir);
  const std::string ext = c.format == "csv" ? ".csv" : ".bin";
  p.source = c.source.empty() ? p.out("source" + ext) : c.source;
  p.target = c.target.empty() ? p.out("target" + ext) : c.target;
  p.checkpoint = c.checkpoint.empty() ? p.out("model.ckpt") : c.checkpoint;
  p.metrics = c.metrics.empty() ? p.out("metrics.csv") : c.metrics;
  p.plots = c.plots_dir.empty() ? p.out("plots") : c.plots_dir;
  return p;
}

// save_features / save_checkpoint expect the directory to exist already
void make_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

void write_manifest(const Paths& p, const std::string& command, const ExperimentConfig& c,
                    const std::vector<std::string>& outputs, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = c.seed;
  m["config"] = to_json(c);
  m["outputs"] = outputs;
  for (auto& [k, v] : extra.items()) m[k] = v;
  const std::string path = p.out(command + ".manifest.json");
  auto out = open_output(path);
  out << m.dump(2) << '\n';
  finish_output(out, path);
}

ExperimentConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  for (const auto& kv : overrides) apply_override(c, kv);
  c.validate();
  return c;
}

SourceDataset load_source(const std::string& path) { return to_source(load_features(path)); }

int cmd_gen(const ExperimentConfig& c) {
  const Paths p = resolve_paths(c);
  const auto data = generate_synthetic_ccod(c.synth);
  make_parent(p.source);
  make_parent(p.target);
  save_features(p.source, data.source.features, data.source.labels);
  save_features(p.target, data.target.features, data.target.ground_truth);
  nlohmann::json extra;
  extra["source_class_sizes"] = data.source_class_sizes;
  extra["target_class_sizes"] = data.target_class_sizes;
  write_manifest(p, "gen", c, {p.source, p.target}, extra);
  std::printf("source %s (%zu samples)\ntarget %s (%zu samples)\n", p.source.c_str(), data.source.size(),
              p.target.c_str(), data.target.size());
  return 0;
}

int cmd_train(const ExperimentConfig& c) {
  const Paths p = resolve_paths(c);
  require_file(p.source, "source dataset");
  require_file(p.target, "target dataset");
  const auto source = load_source(p.source);
  const auto target = to_target(load_features(p.target), source.num_classes);

  auto hook = ground_truth_metrics(target);
  std::size_t epochs_done = 0;
  MetricsHook logged = [&](std::span<const TargetDecision> d) {
    MetricsSummary m = hook ? hook(d) : MetricsSummary{};
    ++epochs_done;
    std::fprintf(stderr, "epoch %zu/%zu", epochs_done, c.train.epochs);
    if (hook) std::fprintf(stderr, " os* %.4f unk %.4f hos %.4f", m.os_star, m.unk, m.hos);
    std::fprintf(stderr, "\n");
    return m;
  };
  auto result = train(c.train, source, target.features, logged);
  if (!hook)
    for (auto& r : result.log) r.metrics.reset();

  const std::string thresholds = p.out("thresholds.csv"), clusters = p.out("clusters.csv"),
                    predictions = p.out("predictions.csv");
  make_parent(p.checkpoint);
  save_checkpoint(p.checkpoint, result.state);
  write_metrics_csv(p.metrics, result.log);
  write_thresholds_csv(thresholds, result.log);
  write_clusters_csv(clusters, result.log);
  write_predictions_csv(predictions, result.final_snapshot.decisions, target.ground_truth);
  write_manifest(p, "train", c, {p.checkpoint, p.metrics, thresholds, clusters, predictions});
  if (!result.log.empty() && result.log.back().metrics) {
    const auto& m = *result.log.back().metrics;
    std::printf("os_star %.4f unk %.4f hos %.4f\n", m.os_star, m.unk, m.hos);
  }
  std::printf("checkpoint %s\nmetrics %s\n", p.checkpoint.c_str(), p.metrics.c_str());
  return 0;
}

int cmd_eval(const ExperimentConfig& c) {
  const Paths p = resolve_paths(c);
  require_file(p.checkpoint, "checkpoint");
  require_file(p.target, "target dataset");
  const auto state = load_checkpoint(p.checkpoint);
  const std::size_t ks = state.prototypes.num_classes();
  const auto target = to_target(load_features(p.target), ks);
  if (target.dim() != state.encoder.input_dim())
    throw InvalidInput("target dimension " + std::to_string(target.dim()) + " does not match the checkpoint (" +
                       std::to_string(state.encoder.input_dim()) + ")");
  const auto snap = snapshot_targets(state, c.train, target.features);

  const std::string eval_csv = p.out("eval.csv"), predictions = p.out("eval_predictions.csv");
  auto out = open_output(eval_csv);
  out << "epoch,loss_lpb,loss_pda,loss_atg,loss_uc,loss_total,os_star,unk,hos\n" << state.epoch << ",,,,,,";
  nlohmann::json extra;
  if (target.has_ground_truth()) {
    const auto m = evaluate(snap.decisions, target.ground_truth, ks);
    out << fmt_real(m.os_star) << ',';
    if (m.unk_defined) out << fmt_real(m.unk) << ',' << fmt_real(m.hos);
    else out << ',';
    std::size_t present = 0;
    for (auto f : m.class_present) present += f;
    extra["id_classes_present"] = present;
    extra["unk_defined"] = m.unk_defined;
    char unk[32] = "undefined";
    if (m.unk_defined) std::snprintf(unk, sizeof unk, "%.4f", m.unk);
    std::printf("os_star %.4f unk %s hos %.4f (ID classes present: %zu of %zu)\n", m.os_star, unk, m.hos, present,
                ks);
  } else {
    out << ",,";
    std::printf("no ground truth in %s; wrote predictions only\n", p.target.c_str());
  }
  out << '\n';
  finish_output(out, eval_csv);
  write_predictions_csv(predictions, snap.decisions, target.ground_truth);
  write_manifest(p, "eval", c, {eval_csv, predictions}, extra);
  std::printf("metrics %s\n", eval_csv.c_str());
  return 0;
}

int cmd_ablate(const ExperimentConfig& c, const std::string& suite_name) {
  const auto suite = parse_suite(suite_name);
  const Paths p = resolve_paths(c);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < c.seeds; ++i) seeds.push_back(c.seed + i);
  const auto variants = ablation_variants(suite, c.train);
  for (const auto& v : variants) v.config.validate();
  const auto rows = run_ablation(variants, c.synth, seeds, [](const AblationRow& r) {
    std::fprintf(stderr, "%-12s seed %llu  hos %.4f\n", r.variant.c_str(), static_cast<unsigned long long>(r.seed),
                 r.metrics.hos);
  });
  std::string file_suite = suite_name;
  for (auto& ch : file_suite)
    if (ch == '/') ch = '_';
  const std::string csv = p.out("ablation_" + file_suite + ".csv");
  write_ablation_csv(csv, rows);
  nlohmann::json summary = nlohmann::json::array();
  std::printf("%-12s %8s %8s %8s %8s\n", "variant", "HOS", "std", "OS*", "UNK");
  for (const auto& s : summarize(rows)) {
    std::printf("%-12s %8.4f %8.4f %8.4f %8.4f\n", s.variant.c_str(), s.mean_hos, s.std_hos, s.mean_os_star,
                s.mean_unk);
    summary.push_back({{"variant", s.variant}, {"mean_hos", s.mean_hos}, {"std_hos", s.std_hos},
                       {"mean_os_star", s.mean_os_star}, {"mean_unk", s.mean_unk}});
  }
  write_manifest(p, "ablate", c, {csv}, {{"suite", suite_name}, {"seeds", seeds}, {"summary", summary}});
  std::printf("ablation %s\n", csv.c_str());
  return 0;
}

int cmd_plot(const ExperimentConfig& c) {
  const Paths p = resolve_paths(c);
  require_file(p.metrics, "metrics CSV");
  const auto log = read_metrics_csv(p.metrics);
  PlotFiles files;
  if (fs::is_regular_file(p.checkpoint) && fs::is_regular_file(p.source) && fs::is_regular_file(p.target)) {
    const auto state = load_checkpoint(p.checkpoint);
    const auto source = load_source(p.source);
    const auto target = to_target(load_features(p.target), state.prototypes.num_classes());
    const auto src = embed(state.encoder, source.features);
    const auto snap = snapshot_targets(state, c.train, target.features);
    files = export_plots(log, p.plots, &src.normalized, &snap.features, snap.decisions);
  } else {
    files = export_plots(log, p.plots);
  }
  std::vector<std::string> outs{files.losses, files.metrics};
  if (!files.scatter.empty()) outs.push_back(files.scatter);
  write_manifest(p, "plot", c, outs);
  for (const auto& f : outs) std::printf("plot %s\n", f.c_str());
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "uasa: error kind=%s message=\"%s\"\n", kind, one_line(msg).c_str());
  return code;
}

int exit_code(const Error& e) {
  const std::string k = e.kind();
  if (k == "invalid-config") return 2;
  if (k == "io-error") return 3;
  if (k == "parse-error") return 4;
  if (k == "divergence") return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-imbalanced cross-domain OOD detection: data, training, evaluation, ablations, plots"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string suite;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "flat JSON config file");
    sub->add_option("overrides", overrides, "key=value overrides");
  };
  auto* gen = app.add_subcommand("gen", "generate the synthetic source and target datasets");
  auto* tr = app.add_subcommand("train", "train on source/target feature files");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the target set");
  auto* ab = app.add_subcommand("ablate", "run an ablation suite over several seeds");
  ab->add_option("suite", suite, "loss-removal | threshold-mode | sigma-sweep | delta-sweep | A-sweep")->required();
  auto* pl = app.add_subcommand("plot", "export SVG plots from a metrics CSV (and checkpoint)");
  for (auto* s : {gen, tr, ev, ab, pl}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const ExperimentConfig cfg = build_config(config_path, overrides);
    if (*gen) return cmd_gen(cfg);
    if (*tr) return cmd_train(cfg);
    if (*ev) return cmd_eval(cfg);
    if (*ab) return cmd_ablate(cfg, suite);
    if (*pl) return cmd_plot(cfg);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), exit_code(e));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
