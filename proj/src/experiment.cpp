#include "bgnn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bgnn/csv.hpp"
#include "bgnn/errors.hpp"

#ifndef BGNN_VERSION
#define BGNN_VERSION "0.0.0"
#endif

namespace bgnn {

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kSyntheticStream = 101;
constexpr std::uint64_t kSplitStream = 102;

std::string style_name(FeatureStyle s) { return s == FeatureStyle::binary ? "binary" : "gaussian"; }

FeatureStyle style_from(const std::string& s) {
  if (s == "gaussian") return FeatureStyle::gaussian;
  if (s == "binary") return FeatureStyle::binary;
  throw ValidationError("unknown feature style '" + s + "'");
}

template <typename T>
void read_if(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ordered_json synthetic_json(const SyntheticSpec& s) {
  ordered_json j;
  j["nodes"] = s.nodes;
  j["classes"] = s.classes;
  j["intra_p"] = s.intra_p;
  j["inter_p"] = s.inter_p;
  j["feature_dim"] = s.feature_dim;
  j["style"] = style_name(s.style);
  j["separation"] = s.separation;
  j["words_per_node"] = s.words_per_node;
  return j;
}

SyntheticSpec synthetic_from(const ordered_json& j) {
  SyntheticSpec s;
  read_if(j, "nodes", s.nodes);
  read_if(j, "classes", s.classes);
  read_if(j, "intra_p", s.intra_p);
  read_if(j, "inter_p", s.inter_p);
  read_if(j, "feature_dim", s.feature_dim);
  if (j.contains("style")) s.style = style_from(j.at("style").get<std::string>());
  read_if(j, "separation", s.separation);
  read_if(j, "words_per_node", s.words_per_node);
  return s;
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  if (cfg.manifest) {
    j["dataset"]["manifest"] = cfg.manifest->generic_string();
  } else {
    j["dataset"]["synthetic"] = synthetic_json(cfg.synthetic);
  }
  j["split"] = {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}};
  ordered_json t;
  t["batch_size"] = cfg.train.batch_size;
  t["learning_rate"] = cfg.train.learning_rate;
  t["epochs"] = cfg.train.epochs;
  t["dropout_rate"] = cfg.train.dropout_rate;
  t["embed_widths"] = cfg.train.embed_widths;
  t["hidden_widths"] = cfg.train.hidden_widths;
  j["train"] = t;
  j["noise_levels"] = cfg.noise_levels;
  j["mc_samples"] = cfg.mc_samples;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir.generic_string();
  return j;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write");
  out << text;
}

void record_worst(ComparisonStats& st, double score, double adf, double oracle, double scale) {
  if (st.count == 1 || score > st.worst_score) {
    st.worst_score = score;
    st.worst_adf = adf;
    st.worst_oracle = oracle;
    st.worst_scale = scale;
  }
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.mc_samples == 0) throw ArgumentError("mc_samples must be at least 1");
  for (std::size_t i = 0; i < cfg.noise_levels.size(); ++i) {
    const double level = cfg.noise_levels[i];
    if (!(level >= 0.0) || !std::isfinite(level)) {
      throw ArgumentError("noise levels must be finite and nonnegative");
    }
    if (i > 0 && !(level > cfg.noise_levels[i - 1])) {
      throw ArgumentError("noise levels must be strictly ascending");
    }
  }
  validate(cfg.train);
  const double sum = cfg.split.train + cfg.split.val + cfg.split.test;
  if (cfg.split.train < 0 || cfg.split.val < 0 || cfg.split.test < 0 || sum > 1.0 + 1e-12) {
    throw ArgumentError("split fractions must be nonnegative and sum to at most 1");
  }
}

namespace {

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& source) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t line =
        1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(e.byte, text.size()), '\n'));
    throw ParseError(source, line, e.what());
  }
  ExperimentConfig cfg;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("manifest")) {
        std::filesystem::path p = d.at("manifest").get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        cfg.manifest = p.lexically_normal();
      } else if (d.contains("synthetic")) {
        cfg.synthetic = synthetic_from(d.at("synthetic"));
      } else {
        throw ValidationError("dataset needs 'manifest' or 'synthetic'");
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      read_if(s, "train", cfg.split.train);
      read_if(s, "val", cfg.split.val);
      read_if(s, "test", cfg.split.test);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      read_if(t, "batch_size", cfg.train.batch_size);
      read_if(t, "learning_rate", cfg.train.learning_rate);
      read_if(t, "epochs", cfg.train.epochs);
      read_if(t, "dropout_rate", cfg.train.dropout_rate);
      read_if(t, "embed_widths", cfg.train.embed_widths);
      read_if(t, "hidden_widths", cfg.train.hidden_widths);
    }
    read_if(j, "noise_levels", cfg.noise_levels);
    read_if(j, "mc_samples", cfg.mc_samples);
    read_if(j, "seed", cfg.seed);
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  return parse_config(text, base_dir, "<config>");
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.parent_path(), path.string());
}

std::string config_json(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2); }

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config_to_json(cfg).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Graph prepare_graph(const ExperimentConfig& cfg) {
  Graph g;
  if (cfg.manifest) {
    g = load_dataset(read_manifest(*cfg.manifest));
  } else {
    RngStream rng(cfg.seed, kSyntheticStream);
    g = generate_synthetic(cfg.synthetic, rng);
  }
  RngStream split_rng(cfg.seed, kSplitStream);
  make_splits(g, cfg.split, split_rng);
  return g;
}

TrainResult train_model(const Graph& g, const ExperimentConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return train(g, tc);
}

SweepRow to_sweep_row(const UQSummary& s) {
  SweepRow r;
  r.noise_level_pct = s.noise_level_pct;
  r.accuracy = s.accuracy;
  r.prediction_loss = s.prediction_loss;
  if (s.noise_level_pct > 0.0) {
    r.nll = s.nll;
    r.output_variance = s.mean_total_variance;
  }
  r.aleatoric_variance = s.mean_aleatoric;
  r.epistemic_variance = s.mean_epistemic;
  r.logit_variance = s.mean_logit_variance;
  r.mc_samples = s.mc_samples;
  return r;
}

std::vector<SweepRow> run_sweep(const ModelParams& params, const Graph& g,
                                const std::vector<double>& levels, std::size_t mc_samples,
                                std::uint64_t seed) {
  if (params.input_dim() != g.feature_dim() || params.num_classes() != g.num_classes) {
    throw ValidationError("checkpoint dimensions (" + std::to_string(params.input_dim()) + " -> " +
                          std::to_string(params.num_classes()) + ") do not match the dataset (" +
                          std::to_string(g.feature_dim()) + " -> " +
                          std::to_string(g.num_classes) + ")");
  }
  std::vector<SweepRow> rows;
  for (double level : levels) {
    const NoiseSpec noise = derive_noise_variance(g, level);
    rows.push_back(to_sweep_row(evaluate(params, g, noise, mc_samples, seed).summary));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write sweep table");
  out << "noise_level_pct,accuracy,prediction_loss,avg_per_class_nll,output_variance,"
         "aleatoric_variance,epistemic_variance,logit_variance,mc_samples\n";
  for (const SweepRow& r : rows) {
    out << csv::number(r.noise_level_pct) << ',' << csv::number(r.accuracy) << ','
        << csv::number(r.prediction_loss) << ',' << csv::optional_number(r.nll) << ','
        << csv::optional_number(r.output_variance) << ',' << csv::number(r.aleatoric_variance)
        << ',' << csv::number(r.epistemic_variance) << ',' << csv::number(r.logit_variance) << ','
        << r.mc_samples << '\n';
  }
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::vector<SweepRow> rows;
  for (const auto& row : csv::read(path, 9)) {
    SweepRow r;
    const auto& f = row.fields;
    r.noise_level_pct = csv::to_double(f[0], path, row.line);
    r.accuracy = csv::to_double(f[1], path, row.line);
    r.prediction_loss = csv::to_double(f[2], path, row.line);
    r.nll = csv::to_optional(f[3], path, row.line);
    r.output_variance = csv::to_optional(f[4], path, row.line);
    r.aleatoric_variance = csv::to_double(f[5], path, row.line);
    r.epistemic_variance = csv::to_double(f[6], path, row.line);
    r.logit_variance = csv::to_double(f[7], path, row.line);
    r.mc_samples = csv::to_index(f[8], path, row.line);
    rows.push_back(r);
  }
  return rows;
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  ordered_json arr = ordered_json::array();
  auto opt = [](const std::optional<double>& x) { return x ? ordered_json(*x) : ordered_json(); };
  for (const SweepRow& r : rows) {
    ordered_json j;
    j["noise_level_pct"] = r.noise_level_pct;
    j["accuracy"] = r.accuracy;
    j["prediction_loss"] = r.prediction_loss;
    j["avg_per_class_nll"] = opt(r.nll);
    j["output_variance"] = opt(r.output_variance);
    j["aleatoric_variance"] = r.aleatoric_variance;
    j["epistemic_variance"] = r.epistemic_variance;
    j["logit_variance"] = r.logit_variance;
    j["mc_samples"] = r.mc_samples;
    arr.push_back(j);
  }
  return arr.dump(2);
}

void write_trace_csv(const std::vector<EpochStats>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write training trace");
  out << "epoch,train_loss,val_accuracy\n";
  for (const EpochStats& e : trace) {
    out << e.epoch << ',' << csv::number(e.train_loss) << ',' << csv::number(e.val_accuracy)
        << '\n';
  }
}

std::vector<EpochStats> read_trace_csv(const std::filesystem::path& path) {
  std::vector<EpochStats> trace;
  for (const auto& row : csv::read(path, 3)) {
    EpochStats e;
    e.epoch = csv::to_index(row.fields[0], path, row.line);
    e.train_loss = csv::to_double(row.fields[1], path, row.line);
    e.val_accuracy = csv::to_double(row.fields[2], path, row.line);
    trace.push_back(e);
  }
  return trace;
}

std::string code_version() { return BGNN_VERSION; }

void write_run_manifest(const std::string& command, const ExperimentConfig& cfg,
                        const std::filesystem::path& path) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  ordered_json j;
  j["command"] = command;
  j["code_version"] = code_version();
  j["config_hash"] = hash;
  j["seed"] = cfg.seed;
  j["config"] = config_to_json(cfg);
  write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

Graph random_fixture_graph(std::size_t nodes, double edge_p, std::size_t feature_dim,
                           std::size_t classes, RngStream& rng) {
  Graph g;
  g.num_classes = classes;
  g.features = Matrix(nodes, feature_dim);
  for (double& x : g.features.values()) x = rng.standard_normal();
  for (std::size_t u = 0; u < nodes; ++u) g.labels.push_back(u % classes);
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  for (std::size_t u = 0; u < nodes; ++u) {
    for (std::size_t v = u + 1; v < nodes; ++v) {
      if (rng.bernoulli(edge_p)) edges.emplace_back(u, v, 1.0 - rng.uniform());
    }
  }
  g.adjacency = build_adjacency(nodes, edges, false);
  g.num_links = edges.size();
  return g;
}

ModelParams random_linear_params(std::size_t input_dim, const std::vector<std::size_t>& embed,
                                 const std::vector<std::size_t>& hidden, std::size_t classes,
                                 RngStream& rng) {
  auto random_matrix = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& x : m.values()) x = scale * (2.0 * rng.uniform() - 1.0) * 1.5;
    return m;
  };
  ModelParams p;
  std::size_t in = input_dim;
  for (std::size_t w : embed) {
    p.embed.push_back({random_matrix(w, in), random_matrix(w, in)});
    in = w;
  }
  auto dense = [&](std::size_t out, Activation a) {
    DenseLayer l{random_matrix(out, in), Vector(out), a};
    for (double& b : l.bias) b = 0.5 * rng.standard_normal();
    in = out;
    return l;
  };
  for (std::size_t w : hidden) p.mlp.push_back(dense(w, Activation::linear));
  p.mlp.push_back(dense(classes, Activation::softmax));
  return p;
}

OracleFixture make_oracle_fixture(const std::string& kind, std::uint64_t seed) {
  RngStream rng(seed, 0);
  OracleFixture f;
  f.name = kind;
  if (kind == "linear") {
    f.graph = random_fixture_graph(6, 0.5, 3, 3, rng);
    f.params = random_linear_params(3, {1}, {}, 3, rng);
    f.exact_variance = true;
  } else if (kind == "relu") {
    f.graph = random_fixture_graph(6, 0.5, 3, 3, rng);
    f.params = random_linear_params(3, {3, 3}, {4}, 3, rng);
    for (DenseLayer& l : f.params.mlp) {
      if (l.activation == Activation::linear) l.activation = Activation::relu;
    }
    f.exact_variance = false;
  } else {
    throw ArgumentError("unknown fixture '" + kind + "' (expected linear or relu)");
  }
  f.input_means = f.graph.features;
  f.input_variances = Matrix(f.graph.num_nodes(), f.graph.feature_dim());
  for (double& v : f.input_variances.values()) v = 0.05 + 0.45 * rng.uniform();
  return f;
}

ComparisonStats compare_within_se(const Matrix& adf, const Matrix& oracle, const Matrix& se) {
  if (adf.rows() != oracle.rows() || adf.cols() != oracle.cols() || se.size() != oracle.size()) {
    throw ShapeError("comparison shapes differ");
  }
  ComparisonStats st;
  std::size_t beyond5 = 0;
  for (std::size_t k = 0; k < adf.size(); ++k) {
    const double a = adf.values()[k];
    const double o = oracle.values()[k];
    const double s = se.values()[k];
    const double diff = std::abs(a - o);
    const double slack = 1e-9 * (1.0 + std::abs(o));
    const double z = s > 0.0 ? diff / s : (diff <= slack ? 0.0 : HUGE_VAL);
    ++st.count;
    record_worst(st, z, a, o, s);
    st.max_z = std::max(st.max_z, z);
    if (diff > 3.0 * s + slack) ++st.outside;
    if (diff > 5.0 * s + slack) ++beyond5;
  }
  st.pass = beyond5 == 0 && static_cast<double>(st.outside) <= 0.01 * static_cast<double>(st.count);
  return st;
}

ComparisonStats compare_relative(const Matrix& adf, const Matrix& oracle, double tol, double floor) {
  if (adf.rows() != oracle.rows() || adf.cols() != oracle.cols()) {
    throw ShapeError("comparison shapes differ");
  }
  ComparisonStats st;
  for (std::size_t k = 0; k < adf.size(); ++k) {
    const double a = adf.values()[k];
    const double o = oracle.values()[k];
    if (o <= floor) continue;
    const double rel = std::abs(a - o) / o;
    ++st.count;
    record_worst(st, rel, a, o, o);
    st.max_rel_error = std::max(st.max_rel_error, rel);
    if (rel > tol) ++st.outside;
  }
  st.pass = st.outside == 0;
  return st;
}

bool OracleCheckReport::pass() const {
  return !taps.empty() &&
         std::all_of(taps.begin(), taps.end(), [](const TapComparison& t) { return t.pass(); });
}

std::string OracleCheckReport::text() const {
  std::ostringstream out;
  out << "fixture " << fixture << ", " << samples << " oracle samples\n";
  auto line = [&](const char* what, const ComparisonStats& st, bool relative) {
    char buf[256];
    if (relative) {
      std::snprintf(buf, sizeof buf,
                    "  %-4s worst adf %.6g oracle %.6g rel.err %.3g  (%zu/%zu beyond tol)  %s\n",
                    what, st.worst_adf, st.worst_oracle, st.max_rel_error, st.outside, st.count,
                    st.pass ? "PASS" : "FAIL");
    } else {
      std::snprintf(buf, sizeof buf,
                    "  %-4s worst adf %.6g oracle %.6g se %.3g |z| %.2f  (%zu/%zu beyond 3 se)  %s\n",
                    what, st.worst_adf, st.worst_oracle, st.worst_scale, st.max_z, st.outside,
                    st.count, st.pass ? "PASS" : "FAIL");
    }
    out << buf;
  };
  for (const TapComparison& t : taps) {
    out << t.tap << '\n';
    line("mean", t.mean, false);
    line("var", t.var, t.var_relative);
  }
  out << (pass() ? "PASS" : "FAIL") << '\n';
  return out.str();
}

OracleCheckReport run_oracle_check(const OracleFixture& fixture, std::size_t samples,
                                   std::uint64_t seed, double relative_tolerance,
                                   bool corrupt_variance) {
  if (fixture.graph.num_nodes() > 50) throw ArgumentError("oracle fixtures are limited to 50 nodes");
  const AdfOutput adf = adf_forward(fixture.params, fixture.graph, fixture.input_means,
                                    fixture.input_variances, nullptr, true);
  OracleCheckReport report;
  report.fixture = fixture.name;
  report.samples = samples;

  std::vector<std::pair<std::string, LayerTap>> taps;
  for (std::size_t i = 1; i < fixture.params.num_layers(); ++i) {
    taps.emplace_back("layer " + std::to_string(i), LayerTap::layer(i));
  }
  taps.emplace_back("logits", LayerTap::logits());

  std::vector<LayerTap> tap_list;
  for (const auto& entry : taps) tap_list.push_back(entry.second);
  const std::vector<OracleEstimate> estimates =
      oracle_moments(fixture.params, fixture.graph, fixture.input_means, fixture.input_variances,
                     samples, seed, tap_list);

  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& [name, tap] = taps[i];
    Moments m = adf_moments_at(adf, tap);
    if (corrupt_variance) {
      for (double& v : m.var.values()) v *= 2.0;
    }
    const OracleEstimate& est = estimates[i];
    TapComparison t;
    t.tap = name;
    t.mean = compare_within_se(m.mean, est.mean, est.mean_se);
    t.var_relative = !fixture.exact_variance;
    t.var = fixture.exact_variance ? compare_within_se(m.var, est.var, est.var_se)
                                   : compare_relative(m.var, est.var, relative_tolerance);
    report.taps.push_back(t);
  }
  return report;
}

}  // namespace bgnn
