#pragma once

// Epistemic uncertainty from MC dropout over ADF passes, fusion with the
// propagated aleatoric variance, and the evaluation metrics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bgnn/adf.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/model.hpp"

namespace bgnn {

/// RNG stream ids under the master seed.
inline constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;   // feature noise draw
inline constexpr std::uint64_t kMaskStreamBase = 1ULL << 32;     // + sample index

struct McEnsemble {
  std::uint64_t seed = 0;
  std::vector<Matrix> means;      ///< per sample, n x C class-probability means
  std::vector<Matrix> variances;  ///< per sample, n x C propagated variances
  Matrix mean_logit_variance;     ///< n x C, pre-softmax variance averaged over samples

  std::size_t size() const noexcept { return means.size(); }
};

/// M ADF passes, sample t using the dropout mask drawn from stream
/// (seed, kMaskStreamBase + t). The dropout rate comes from params.
McEnsemble run_mc_ensemble(const ModelParams& params, const Graph& g, const Matrix& input_means,
                           const Matrix& input_variances, std::size_t samples, std::uint64_t seed);

struct VarianceDecomposition {
  Matrix mean;        ///< ensemble-mean class probabilities
  Matrix aleatoric;   ///< mean of per-sample propagated variances
  Matrix epistemic;   ///< population variance of per-sample means
  Matrix total;       ///< aleatoric + epistemic
};

VarianceDecomposition total_variance(const McEnsemble& ensemble);

/// 0.5 ln(var) + (y - y_hat)^2 / (2 var), with var floored at kVarianceFloor.
double nll_per_class(double y, double y_hat, double total_var);

struct NodeResult {
  std::size_t node = 0;
  std::size_t true_label = 0;
  std::size_t predicted = 0;
  double p_true = 0.0;
  double aleatoric = 0.0;  ///< averaged over classes
  double epistemic = 0.0;
  double total = 0.0;

  friend bool operator==(const NodeResult&, const NodeResult&) = default;
};

struct UQSummary {
  double noise_level_pct = 0.0;
  double accuracy = 0.0;
  double prediction_loss = 0.0;
  /// Absent when the total variance vanishes on every test output.
  std::optional<double> nll;
  double mean_total_variance = 0.0;
  double mean_aleatoric = 0.0;
  double mean_epistemic = 0.0;
  double mean_logit_variance = 0.0;
  std::size_t mc_samples = 0;
  std::uint64_t seed = 0;
};

struct UQReport {
  UQSummary summary;
  std::vector<NodeResult> nodes;  ///< test nodes in ascending id order
  VarianceDecomposition decomposition;
};

/// Scores an ensemble on the test mask.
UQReport score(const Graph& g, const McEnsemble& ensemble, double noise_level_pct);

/// Draws one noisy feature matrix (stream kNoiseStream), runs the ensemble on
/// (noisy features, noise variance) and scores it on the test mask.
UQReport evaluate(const ModelParams& params, const Graph& g, const NoiseSpec& noise,
                  std::size_t samples, std::uint64_t seed);

std::string summary_json(const UQSummary& s);
void write_node_csv(const UQReport& report, const std::filesystem::path& path);
std::vector<NodeResult> read_node_csv(const std::filesystem::path& path);

}  // namespace bgnn
