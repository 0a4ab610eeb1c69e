#pragma once

// Experiment harness shared by the command line tool and the acceptance
// suite: configuration, dataset preparation, the input-variance sweep and the
// layer-by-layer oracle comparison.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bgnn/graph.hpp"
#include "bgnn/model.hpp"
#include "bgnn/oracle.hpp"
#include "bgnn/uq.hpp"

namespace bgnn {

struct ExperimentConfig {
  std::optional<std::filesystem::path> manifest;  ///< dataset on disk, or
  SyntheticSpec synthetic;                        ///< generated when no manifest
  SplitFractions split;
  TrainConfig train;
  std::vector<double> noise_levels{0.0, 2.5, 5.0, 12.0};
  std::size_t mc_samples = 100;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
};

/// Throws ArgumentError unless noise levels are nonnegative and ascending and
/// mc_samples >= 1.
void validate(const ExperimentConfig& cfg);

ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string config_json(const ExperimentConfig& cfg);

/// FNV-1a over the canonical config JSON.
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Loads or generates the dataset and draws the split, all from cfg.seed.
Graph prepare_graph(const ExperimentConfig& cfg);

/// Trains with cfg.train, using cfg.seed as the training seed.
TrainResult train_model(const Graph& g, const ExperimentConfig& cfg);

struct SweepRow {
  double noise_level_pct = 0.0;
  double accuracy = 0.0;
  double prediction_loss = 0.0;
  std::optional<double> nll;              ///< absent at 0% input variance
  std::optional<double> output_variance;  ///< absent at 0% input variance
  double aleatoric_variance = 0.0;
  double epistemic_variance = 0.0;
  double logit_variance = 0.0;
  std::size_t mc_samples = 0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

SweepRow to_sweep_row(const UQSummary& s);

/// Evaluates one checkpoint at every level. All levels share the evaluation
/// seed, so they see the same standard-normal noise pattern and the same
/// dropout masks, scaled by the level.
std::vector<SweepRow> run_sweep(const ModelParams& params, const Graph& g,
                                const std::vector<double>& levels, std::size_t mc_samples,
                                std::uint64_t seed);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);
std::string sweep_json(const std::vector<SweepRow>& rows);

void write_trace_csv(const std::vector<EpochStats>& trace, const std::filesystem::path& path);
std::vector<EpochStats> read_trace_csv(const std::filesystem::path& path);

/// Records what produced a run directory.
void write_run_manifest(const std::string& command, const ExperimentConfig& cfg,
                        const std::filesystem::path& path);

std::string code_version();

// ---------------------------------------------------------------------------
// Oracle comparison

struct OracleFixture {
  std::string name;
  Graph graph;
  ModelParams params;
  Matrix input_means;
  Matrix input_variances;
  /// Variances are compared at 3 standard errors when true, at the relative
  /// tolerance otherwise.
  bool exact_variance = true;
};

/// Small graph with random link probabilities in (0, 1].
Graph random_fixture_graph(std::size_t nodes, double edge_p, std::size_t feature_dim,
                           std::size_t classes, RngStream& rng);

/// Random weights with every layer linear except the softmax output.
ModelParams random_linear_params(std::size_t input_dim, const std::vector<std::size_t>& embed,
                                 const std::vector<std::size_t>& hidden, std::size_t classes,
                                 RngStream& rng);

/// Built-in fixtures: "linear" (one scalar embedding layer and a linear
/// output layer, where the diagonal rules are exact) and "relu" (two
/// embedding layers and a ReLU MLP).
OracleFixture make_oracle_fixture(const std::string& kind, std::uint64_t seed);

struct ComparisonStats {
  std::size_t count = 0;
  std::size_t outside = 0;       ///< entries beyond the per-entry tolerance
  double max_z = 0.0;            ///< largest |ADF - oracle| / SE
  double max_rel_error = 0.0;    ///< largest relative variance error
  double worst_score = 0.0;      ///< z or relative error of the worst entry
  double worst_adf = 0.0;
  double worst_oracle = 0.0;
  double worst_scale = 0.0;      ///< its standard error (or oracle value)
  bool pass = false;
};

/// Per-entry rule for standard-error comparisons: |adf - oracle| <= 3 SE
/// (plus 1e-9 absolute slack). A set of entries passes when at most 1% fall
/// outside 3 SE and none beyond 5 SE, which is what sampling noise allows for
/// a correct rule.
ComparisonStats compare_within_se(const Matrix& adf, const Matrix& oracle, const Matrix& se);

/// Relative rule: |adf - oracle| <= tol * oracle for every entry whose oracle
/// variance exceeds `floor`.
ComparisonStats compare_relative(const Matrix& adf, const Matrix& oracle, double tol,
                                 double floor = 1e-10);

struct TapComparison {
  std::string tap;
  ComparisonStats mean;
  ComparisonStats var;
  bool var_relative = false;
  bool pass() const { return mean.pass && var.pass; }
};

struct OracleCheckReport {
  std::string fixture;
  std::size_t samples = 0;
  std::vector<TapComparison> taps;
  bool pass() const;
  std::string text() const;
};

/// Compares adf_forward with oracle_moments at every layer output and at the
/// logits. `corrupt_variance` doubles the ADF variances before comparison as
/// a negative control.
OracleCheckReport run_oracle_check(const OracleFixture& fixture, std::size_t samples,
                                   std::uint64_t seed, double relative_tolerance = 0.10,
                                   bool corrupt_variance = false);

}  // namespace bgnn
