// bgnn: train, evaluate and sweep uncertainty-aware GraphSAGE models, and
// check the moment propagation against the Monte-Carlo oracle.
//
// Exit codes: 0 success, 1 validation failure (bad input, failed check),
// 2 runtime or numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bgnn/csv.hpp"
#include "bgnn/errors.hpp"
#include "bgnn/experiment.hpp"

namespace fs = std::filesystem;
using namespace bgnn;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> mc_samples;
  std::string noise_levels;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "Master seed (overrides the config)");
  cmd->add_option("--mc-samples", f.mc_samples, "MC dropout samples per evaluation");
  cmd->add_option("--noise-levels", f.noise_levels, "Comma-separated input variance levels in percent");
  cmd->add_option("--out", f.out, "Output directory");
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> levels;
  for (auto field : csv::split(text)) levels.push_back(csv::to_double(field, "--noise-levels", 1));
  return levels;
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = load_experiment_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  cfg.train.seed = cfg.seed;
  if (f.mc_samples) cfg.mc_samples = *f.mc_samples;
  if (!f.noise_levels.empty()) cfg.noise_levels = parse_levels(f.noise_levels);
  if (!f.out.empty()) cfg.output_dir = f.out;
  validate(cfg);
  fs::create_directories(cfg.output_dir);
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write");
  out << text;
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void print_sweep(const std::vector<SweepRow>& rows) {
  std::printf("%-10s %-10s %-10s %-12s %-12s\n", "variance%", "accuracy", "loss", "nll", "out.var");
  for (const SweepRow& r : rows) {
    std::printf("%-10s %-10s %-10s %-12s %-12s\n", fmt("%.1f", r.noise_level_pct).c_str(),
                fmt("%.4f", r.accuracy).c_str(), fmt("%.4f", r.prediction_loss).c_str(),
                r.nll ? fmt("%.4f", *r.nll).c_str() : "-",
                r.output_variance ? fmt("%.4g", *r.output_variance).c_str() : "-");
  }
}

ModelParams checkpoint_or_train(const std::string& checkpoint, const Graph& g,
                                const ExperimentConfig& cfg) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint);
  TrainResult tr = train_model(g, cfg);
  save_checkpoint(tr.params, cfg.output_dir / "checkpoint.json");
  write_trace_csv(tr.trace, cfg.output_dir / "trace.csv");
  return tr.params;
}

int cmd_gen_synthetic(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  if (cfg.manifest) throw ValidationError("gen-synthetic needs a synthetic dataset spec");
  RngStream rng(cfg.seed, 101);
  const Graph g = generate_synthetic(cfg.synthetic, rng);
  save_dataset(g, "synthetic", cfg.output_dir);
  write_run_manifest("gen-synthetic", cfg, cfg.output_dir / "run_manifest.json");
  std::printf("wrote %zu nodes, %zu links to %s\n", g.num_nodes(), g.num_links,
              cfg.output_dir.string().c_str());
  return 0;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  const Graph g = prepare_graph(cfg);
  const TrainResult tr = train_model(g, cfg);
  save_checkpoint(tr.params, cfg.output_dir / "checkpoint.json");
  write_trace_csv(tr.trace, cfg.output_dir / "trace.csv");
  write_run_manifest("train", cfg, cfg.output_dir / "run_manifest.json");
  const Matrix probs = full_forward(tr.params, g, g.features);
  std::printf("epochs %zu  final train loss %.4f  val accuracy %.4f  test accuracy %.4f\n",
              tr.trace.size(), tr.trace.back().train_loss, tr.trace.back().val_accuracy,
              accuracy(probs, g, g.test));
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(f);
  const Graph g = prepare_graph(cfg);
  const ModelParams params = checkpoint_or_train(checkpoint, g, cfg);
  const double level = cfg.noise_levels.empty() ? 0.0 : cfg.noise_levels.front();
  const UQReport report =
      evaluate(params, g, derive_noise_variance(g, level), cfg.mc_samples, cfg.seed);
  const double det = accuracy(full_forward(params, g, g.features), g, g.test);
  auto j = nlohmann::ordered_json::parse(summary_json(report.summary));
  j["deterministic_accuracy"] = det;
  write_file(cfg.output_dir / "report.json", j.dump(2) + "\n");
  write_node_csv(report, cfg.output_dir / "nodes.csv");
  write_run_manifest("eval", cfg, cfg.output_dir / "run_manifest.json");
  std::printf("variance %.1f%%  accuracy %.4f  deterministic accuracy %.4f  loss %.4f  nll %s  "
              "output variance %.4g\n",
              level, report.summary.accuracy, det, report.summary.prediction_loss,
              report.summary.nll ? fmt("%.4f", *report.summary.nll).c_str() : "-",
              report.summary.mean_total_variance);
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(f);
  const Graph g = prepare_graph(cfg);
  const ModelParams params = checkpoint_or_train(checkpoint, g, cfg);
  const auto rows = run_sweep(params, g, cfg.noise_levels, cfg.mc_samples, cfg.seed);
  write_sweep_csv(rows, cfg.output_dir / "sweep.csv");
  write_file(cfg.output_dir / "sweep.json", sweep_json(rows) + "\n");
  write_run_manifest("sweep", cfg, cfg.output_dir / "run_manifest.json");
  print_sweep(rows);
  return 0;
}

int cmd_oracle_check(const std::string& fixture, std::size_t samples, std::uint64_t seed,
                     double tolerance, bool corrupt, const std::string& out) {
  const OracleFixture fx = make_oracle_fixture(fixture, seed);
  const OracleCheckReport report = run_oracle_check(fx, samples, seed, tolerance, corrupt);
  const std::string text = report.text();
  std::fputs(text.c_str(), stdout);
  if (!out.empty()) {
    fs::create_directories(out);
    write_file(fs::path(out) / "oracle_check.txt", text);
  }
  return report.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty propagation for GraphSAGE node classifiers"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, sweep_flags;
  std::string eval_ckpt, sweep_ckpt;

  auto* gen = app.add_subcommand("gen-synthetic", "Write a planted-partition dataset");
  add_common(gen, gen_flags);
  auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint.json and trace.csv");
  add_common(tr, train_flags);
  auto* ev = app.add_subcommand("eval", "Evaluate at the first noise level; writes report.json");
  add_common(ev, eval_flags);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint (trains one when omitted)");
  auto* sw = app.add_subcommand("sweep", "Evaluate every noise level; writes sweep.csv/json");
  add_common(sw, sweep_flags);
  sw->add_option("--checkpoint", sweep_ckpt, "Checkpoint (trains one when omitted)");

  std::string fixture = "linear";
  std::size_t samples = 100000;
  std::uint64_t oracle_seed = 0;
  double tolerance = 0.10;
  bool corrupt = false;
  std::string oracle_out;
  auto* oc = app.add_subcommand("oracle-check", "Compare ADF moments with the Monte-Carlo oracle");
  oc->add_option("--fixture", fixture, "linear or relu")->check(CLI::IsMember({"linear", "relu"}));
  oc->add_option("--samples", samples, "Oracle samples (>= 100)");
  oc->add_option("--seed", oracle_seed, "Fixture and oracle seed");
  oc->add_option("--tolerance", tolerance, "Relative variance tolerance for nonlinear fixtures");
  oc->add_flag("--corrupt-variance", corrupt, "Negative control: double the ADF variances");
  oc->add_option("--out", oracle_out, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_synthetic(gen_flags);
    if (*tr) return cmd_train(train_flags);
    if (*ev) return cmd_eval(eval_flags, eval_ckpt);
    if (*sw) return cmd_sweep(sweep_flags, sweep_ckpt);
    if (*oc) return cmd_oracle_check(fixture, samples, oracle_seed, tolerance, corrupt, oracle_out);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
